"""Acceptance suite.

Each test pins one headline guarantee of the package to an explicit tolerance
and a runtime budget. Expected values come from sources independent of the
implementation (hand computation, brute-force enumeration, grid search,
finite differences, synthetic datasets with known effects), so the suite
doubles as an end-to-end oracle check. The full file takes several minutes.
"""

import io
import json
import time
from pathlib import Path

import numpy as np

from balancekit import (
    Estimand,
    EstimatorConfig,
    GbmHyperparameters,
    SensitivityConfig,
    confounded_linear,
)
from balancekit.balance import (
    ess,
    recommend_method,
    smd,
    weighted_ks,
    weighted_mean,
    weighted_sd,
)
from balancekit.cli import main
from balancekit.dataset import assign_roles, design_matrix, load_csv
from balancekit.estimators import run_all
from balancekit.estimators.cbps import fit_cbps
from balancekit.estimators.entropy import (
    dual_gradient,
    dual_hessian,
    dual_value,
    fit_entropy_balancing,
)
from balancekit.estimators.gbm import KS_MAX, fit_gbm_ensemble
from balancekit.estimators.logistic import fit_logistic_irls
from balancekit.outcome import doubly_robust_effect, weighted_means_effect
from balancekit.sensitivity import _signed_smd, simulate_cell
from balancekit.weights import clip_ps, ps_to_weights

from .fixtures import METHOD_IDS, SUMMARY_FIXTURE
from .helpers import classical_ks, dataset_from_arrays

REPO = Path(__file__).resolve().parents[1]


def _lr_weight_set(d):
    t = d.treatment_values()
    _, ps = fit_logistic_irls(design_matrix(d, m=1, drop_reference=True), t)
    return ps_to_weights(clip_ps(ps, 1e-6)[0], t, Estimand.ATE, method_id="LR")


def test_metric_hand_examples_and_brute_force_ks():
    t0 = time.perf_counter()

    assert abs(weighted_mean(np.array([1.0, 3.0]), np.array([1.0, 1.0])) - 2.0) < 1e-10
    assert abs(weighted_mean(np.array([1.0, 3.0]), np.array([3.0, 1.0])) - 1.5) < 1e-10
    assert abs(weighted_sd(np.array([1.0, 2.0, 3.0]), np.ones(3)) - 1.0) < 1e-10

    x = np.array([1.0, 2.0, 3.0, 2.0, 3.0, 4.0])
    t = np.array([1, 1, 1, 0, 0, 0])
    assert abs(smd(x, t, np.ones(6), Estimand.ATE) - 1.0) < 1e-10

    pair = np.array([1.0, 2.0, 1.0, 3.0])
    assert abs(weighted_ks(pair, np.array([1, 1, 0, 0]), np.ones(4)) - 0.5) < 1e-10
    disjoint = np.array([0.0, 0.0, 1.0, 1.0])
    assert abs(weighted_ks(disjoint, np.array([1, 1, 0, 0]), np.ones(4)) - 1.0) < 1e-10

    assert abs(ess(np.ones(4)) - 4.0) < 1e-10
    assert abs(ess(np.array([2.0, 2.0])) - 2.0) < 1e-10
    assert abs(ess(np.array([1.0, 3.0])) - 1.6) < 1e-10

    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        nt = int(rng.integers(2, 7))
        nc = int(rng.integers(2, 13 - nt))
        xt = rng.normal(size=nt)
        xc = rng.normal(size=nc)
        if rng.random() < 0.5:  # force cross-group ties
            xc[0] = xt[0]
        xall = np.concatenate([xt, xc])
        tall = np.repeat([1, 0], [nt, nc])
        got = weighted_ks(xall, tall, np.ones(nt + nc))
        worst = max(worst, abs(got - classical_ks(xt, xc)))

    elapsed = time.perf_counter() - t0
    assert worst < 1e-10, f"uniform-weight KS disagrees with brute force by {worst:.2e}"
    assert elapsed < 10.0, f"metric checks took {elapsed:.1f}s"


def _five_confounder_dataset(seed, n=500):
    """Logistic assignment over five continuous confounders of mixed shape."""
    rng = np.random.default_rng(seed)
    X = np.column_stack(
        [
            rng.normal(size=n),
            rng.gamma(4.0, 0.5, size=n),
            rng.uniform(-2.0, 2.0, size=n),
            np.abs(rng.normal(size=n)),
            0.6 * rng.normal(size=n) + rng.choice([-1.5, 1.5], size=n),
        ]
    )
    eta = 0.8 * (X @ np.array([0.7, -0.4, 0.5, 0.3, -0.6]))
    t = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(int)
    y = X @ np.array([1.0, 0.5, -0.7, 0.4, 0.9]) + 2.0 * t + rng.normal(size=n)
    return dataset_from_arrays(t, y, cont={f"x{j}": X[:, j - 1] for j in range(1, 6)})


def test_entropy_and_cbps_hit_their_moment_targets():
    t0 = time.perf_counter()
    worst_eb = 0.0
    worst_cbps = 0.0
    for seed in range(50):
        d = _five_confounder_dataset(seed)
        t = d.treatment_values()
        cols = [np.asarray(c.values, dtype=float) for c in d.confounders()]

        for k in (1, 2, 3):
            design = design_matrix(d, m=k, drop_reference=True)
            _, ws = fit_entropy_balancing(design, t, Estimand.ATE, moment_order=k)
            w = ws.weights
            for x in cols:
                for p in range(1, k + 1):
                    target = float(np.mean(x**p))
                    for mask in (t == 1, t == 0):
                        got = float(np.sum(w[mask] * x[mask] ** p) / np.sum(w[mask]))
                        worst_eb = max(worst_eb, abs(got - target))

        design1 = design_matrix(d, m=1, drop_reference=True)
        _, ps = fit_cbps(design1, t, Estimand.ATE, moment_order=1)
        w = ps_to_weights(clip_ps(ps, 1e-6)[0], t, Estimand.ATE).weights
        for x in cols:
            mt = float(np.sum(w[t == 1] * x[t == 1]) / np.sum(w[t == 1]))
            mc = float(np.sum(w[t == 0] * x[t == 0]) / np.sum(w[t == 0]))
            worst_cbps = max(worst_cbps, abs(mt - mc))

    elapsed = time.perf_counter() - t0
    assert worst_eb < 1e-6, f"entropy balancing missed a raw moment by {worst_eb:.2e}"
    assert worst_cbps < 1e-6, f"CBPS#1 left a weighted mean gap of {worst_cbps:.2e}"
    assert elapsed < 120.0, f"moment checks took {elapsed:.1f}s"


def _grid_search_mle(X, t, pts=41, zooms=7, sweeps=4):
    """Coordinate-wise grid refinement of the logistic likelihood.

    Deliberately naive: no gradients, no linear algebra, just nested grids,
    so it cannot share a bug with the Newton solver it checks.
    """
    Xd = np.column_stack([np.ones(len(t)), X])

    def nll(beta):
        eta = Xd @ beta
        return float(np.logaddexp(0.0, eta).sum() - t @ eta)

    beta = np.zeros(Xd.shape[1])
    half = 4.0
    for _ in range(zooms):
        for _ in range(sweeps):
            for j in range(beta.size):
                grid = beta[j] + np.linspace(-half, half, pts)
                trial = beta.copy()
                vals = []
                for g in grid:
                    trial[j] = g
                    vals.append(nll(trial))
                beta[j] = grid[int(np.argmin(vals))]
        half = 2.0 * half / (pts - 1) * 2.0
    return beta


def test_irls_matches_grid_search_and_dual_matches_finite_differences():
    t0 = time.perf_counter()

    rng = np.random.default_rng(7)
    collected = 0
    worst_beta = 0.0
    while collected < 12:
        X = rng.normal(size=(20, 2))
        eta = 0.2 + X @ np.array([0.5, -0.4])
        t = (rng.random(20) < 1.0 / (1.0 + np.exp(-eta))).astype(int)
        if t.sum() < 3 or t.sum() > 17:
            continue
        fit, _ = fit_logistic_irls(X, t)
        if fit.separation or not fit.converged:
            continue
        ref = _grid_search_mle(X, t)
        worst_beta = max(worst_beta, float(np.max(np.abs(fit.coefficients - ref))))
        collected += 1
    assert worst_beta < 1e-4, f"IRLS and grid search differ by {worst_beta:.2e}"

    rng = np.random.default_rng(1)
    C = rng.normal(size=(40, 3))
    eps = 1e-6
    worst_g = 0.0
    worst_h = 0.0
    for _ in range(100):
        lam = rng.normal(scale=0.8, size=3)
        g = dual_gradient(lam, C)
        H = dual_hessian(lam, C)
        for j in range(3):
            e = np.zeros(3)
            e[j] = eps
            fd_g = (dual_value(lam + e, C) - dual_value(lam - e, C)) / (2 * eps)
            worst_g = max(worst_g, abs(fd_g - g[j]))
            fd_h = (dual_gradient(lam + e, C) - dual_gradient(lam - e, C)) / (2 * eps)
            worst_h = max(worst_h, float(np.max(np.abs(fd_h - H[:, j]))))
    assert worst_g < 1e-5, f"dual gradient off finite differences by {worst_g:.2e}"
    assert worst_h < 1e-5, f"dual Hessian off finite differences by {worst_h:.2e}"

    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0, f"optimizer checks took {elapsed:.1f}s"


def test_gbm_ks_rule_improves_worst_ks_and_is_deterministic():
    t0 = time.perf_counter()
    hp = GbmHyperparameters(max_trees=1500, eval_every=10)
    improved = 0
    first_fit = None
    first_args = None
    for seed in range(50):
        d = confounded_linear(seed=seed, n=1000).to_dataset()
        t = d.treatment_values()
        design = design_matrix(d, m=1, drop_reference=False)
        fit, ps_by_rule = fit_gbm_ensemble(design, t, Estimand.ATE, hp, seed=0, clip_eps=1e-6)
        w = ps_to_weights(clip_ps(ps_by_rule[KS_MAX], 1e-6)[0], t, Estimand.ATE).weights

        M = design.matrix
        uniform = np.ones(len(t))
        before = max(weighted_ks(M[:, j], t, uniform) for j in range(M.shape[1]))
        after = max(weighted_ks(M[:, j], t, w) for j in range(M.shape[1]))
        if after < before:
            improved += 1
        if seed == 0:
            first_fit = fit
            first_args = (design, t)

    assert improved >= 48, f"KS-chasing rule improved only {improved}/50 seeds"

    refit, _ = fit_gbm_ensemble(first_args[0], first_args[1], Estimand.ATE, hp, seed=0, clip_eps=1e-6)
    trace_a = [(e.iteration, e.mean_smd, e.max_ks) for e in first_fit.trace]
    trace_b = [(e.iteration, e.mean_smd, e.max_ks) for e in refit.trace]
    assert trace_a == trace_b, "same seed produced different boosting traces"
    assert first_fit.selected_iteration == refit.selected_iteration

    elapsed = time.perf_counter() - t0
    assert elapsed < 300.0, f"booster checks took {elapsed:.1f}s"


def test_all_methods_recover_known_effect_with_nominal_coverage():
    t0 = time.perf_counter()
    config = EstimatorConfig(seed=0, gbm=GbmHyperparameters(max_trees=800, eval_every=20))
    estimates = {}
    covered = {}
    for seed in range(200):
        d = confounded_linear(seed=seed, n=2000, tau=2.0).to_dataset()
        result = run_all(d, Estimand.ATE, config)
        for mid, ws in result.weight_sets.items():
            est = doubly_robust_effect(d, ws)
            estimates.setdefault(mid, []).append(est.estimate)
            covered.setdefault(mid, []).append(est.ci_low <= 2.0 <= est.ci_high)

    assert set(estimates) == set(METHOD_IDS)
    for mid in METHOD_IDS:
        vals = estimates[mid]
        assert len(vals) >= 190, f"{mid} converged on only {len(vals)}/200 seeds"
        bias = abs(float(np.mean(vals)) - 2.0)
        cov = float(np.mean(covered[mid]))
        assert bias < 0.1, f"{mid} mean estimate off truth by {bias:.4f}"
        assert 0.90 <= cov <= 0.98, f"{mid} CI coverage {cov:.3f} outside [0.90, 0.98]"

    elapsed = time.perf_counter() - t0
    assert elapsed < 600.0, f"recovery study took {elapsed:.1f}s"


def test_doubly_robust_survives_single_misspecification():
    roles = {
        "t": "treatment",
        "y": "outcome",
        "x1": "continuous_confounder",
        "x2": "continuous_confounder",
        "x3": "binary_confounder",
        "g": "categorical_confounder",
    }
    reduced = {**roles, "x1": "ignored", "x2": "ignored", "g": "ignored"}

    arm_outcome_bad = []
    arm_weights_bad = []
    naive_weights_bad = []
    for seed in range(200):
        data = confounded_linear(seed=seed, n=2000, tau=2.0)
        raw = load_csv(io.BytesIO(data.to_csv_bytes()))
        d_full = assign_roles(raw, roles, treated_level="1")
        d_reduced = assign_roles(raw, reduced, treated_level="1")

        w_good = _lr_weight_set(d_full)
        w_bad = _lr_weight_set(d_reduced)

        arm_outcome_bad.append(
            doubly_robust_effect(d_full, w_good, covariate_subset=["x3"]).estimate
        )
        arm_weights_bad.append(doubly_robust_effect(d_full, w_bad).estimate)
        naive_weights_bad.append(
            weighted_means_effect(d_full.outcome_values(), d_full.treatment_values(), w_bad).estimate
        )

    bias_outcome_bad = abs(float(np.mean(arm_outcome_bad)) - 2.0)
    bias_weights_bad = abs(float(np.mean(arm_weights_bad)) - 2.0)
    bias_naive = abs(float(np.mean(naive_weights_bad)) - 2.0)
    assert bias_outcome_bad < 0.1, f"good-weights arm biased by {bias_outcome_bad:.4f}"
    assert bias_weights_bad < 0.1, f"good-outcome arm biased by {bias_weights_bad:.4f}"
    # the same bad weights without an outcome model are visibly off, so the
    # arms above really are broken on one side
    assert bias_naive > 0.3, f"weights-only check lost its teeth ({bias_naive:.4f})"


def test_ranking_fixture_flags_lr_and_recommends_gbm_ks():
    ranking = recommend_method(SUMMARY_FIXTURE)
    lr = SUMMARY_FIXTURE["LR"]
    assert abs(lr.max_smd - 0.13) < 1e-12
    assert lr.max_smd > 0.1 and lr.max_ks <= 0.1  # SMD is the binding violation
    assert ranking.feasible["LR"] is False
    assert ranking.recommendation == "GBM_KS"


def test_sensitivity_anchor_and_hidden_confounder_oracle():
    t0 = time.perf_counter()
    cfg = SensitivityConfig(replications=200, seed=0)

    d = confounded_linear(seed=0, n=2000, tau=2.0).to_dataset()
    w = _lr_weight_set(d)
    original = doubly_robust_effect(d, w).estimate
    anchor = simulate_cell(d, w, cfg, 0.0, 0.0)
    assert not anchor.infeasible
    diff = abs(anchor.mean_effect - original)
    assert diff <= 2.0 * anchor.effect_se, (
        f"zero-association cell off the original estimate by {diff:.4f} "
        f"(2 mc-se = {2 * anchor.effect_se:.4f})"
    )

    data = confounded_linear(seed=3, n=2000, tau=2.0, hidden_strength=0.8)
    d2 = data.to_dataset()
    w2 = _lr_weight_set(d2)
    biased = doubly_robust_effect(d2, w2).estimate
    gap = abs(biased - 2.0)
    assert gap > 0.3, "hidden confounder failed to bias the weighted estimate"

    h = data.hidden["h"]
    es_h = _signed_smd(h, d2.treatment_values())
    rho_h = float(np.corrcoef(h, d2.outcome_values())[0, 1])
    cell = simulate_cell(d2, w2, cfg, es_h, rho_h)
    assert not cell.infeasible
    assert (cell.mean_effect - biased) * (2.0 - biased) > 0, "adjustment moved away from truth"
    closed = gap - abs(cell.mean_effect - 2.0)
    assert closed >= 0.5 * gap, (
        f"cell at the hidden confounder's coordinates closed only "
        f"{closed / gap:.0%} of the bias"
    )

    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0, f"sensitivity checks took {elapsed:.1f}s"


def test_cli_end_to_end_emits_valid_artifacts(tmp_path):
    t0 = time.perf_counter()
    out = tmp_path / "out"
    rc = main(
        [
            "run",
            str(REPO / "demos" / "configs" / "synthetic_ate.json"),
            str(REPO / "demos" / "data" / "synthetic_mixed.csv"),
            "--out",
            str(out),
        ]
    )
    assert rc == 0

    report = json.loads((out / "report.json").read_text())
    assert set(report) == {
        "session",
        "configuration",
        "overlap",
        "trimming",
        "balance",
        "method",
        "effect",
        "sensitivity",
        "notes",
    }
    eff = report["effect"]["effect"]
    for key in ("estimate", "se", "ci_low", "ci_high", "p_value", "estimand",
                "method_id", "n", "ess", "model"):
        assert key in eff, key
    assert np.isfinite(eff["estimate"])
    assert eff["ci_low"] < eff["estimate"] < eff["ci_high"]
    assert 0.0 <= eff["p_value"] <= 1.0
    assert 0 < eff["ess"] <= eff["n"]

    md = (out / "report.md").read_text()
    assert md.lstrip().startswith("#")
    assert f"{eff['estimate']:.3f}" in md

    wlines = (out / "weights.csv").read_text().splitlines()
    wheader = wlines[0].split(",")
    assert wheader[:2] == ["row_id", "treatment"]
    assert wheader[2] == report["method"]["chosen"]
    assert len(wlines) == eff["n"] + 1
    assert float(wlines[1].split(",")[2]) > 0.0

    blines = (out / "balance.csv").read_text().splitlines()
    bheader = blines[0].split(",")
    assert bheader[:3] == ["covariate", "smd_unweighted", "ks_unweighted"]
    assert len(blines) > 1
    for line in blines[1:]:
        for cell in line.split(",")[1:]:
            val = float(cell)
            assert np.isfinite(val) and val >= 0.0

    sens = json.loads((out / "sensitivity.json").read_text())
    assert sens["run"] is True
    grid = sens["analysis"]["grid"]
    n_cells = len(grid["es_t_values"]) * len(grid["rho_y_values"])
    flat = [v for row in grid["effect"] for v in row]
    assert len(flat) == n_cells

    elapsed = time.perf_counter() - t0
    assert elapsed < 300.0, f"end-to-end run took {elapsed:.1f}s"
