"""Omitted-variable sensitivity: observed points, cell simulation, grid sweep."""

import json

import numpy as np
import pytest

from balancekit.dataset import design_matrix
from balancekit.estimators import EstimatorConfig
from balancekit.estimators.logistic import fit_logistic_irls
from balancekit.outcome import doubly_robust_effect
from balancekit.sensitivity import (
    ReweightMethod,
    SensitivityConfig,
    _abs_corr,
    _build_context,
    _draw_noise,
    _iso_segments,
    _signed_smd,
    _solve_coefficients,
    observed_points,
    ov_analysis,
    simulate_cell,
)
from balancekit.weights import Estimand, clip_ps, ps_to_weights

from .helpers import dataset_from_arrays


def _sigmoid(v):
    return 1 / (1 + np.exp(-v))


def _confounded_dataset(seed, n=300, tau=1.0, noise=1.0, beta_y=1.0):
    rng = np.random.default_rng(seed)
    x1 = rng.normal(size=n)
    x2 = rng.normal(size=n)
    t = (rng.random(n) < _sigmoid(0.7 * x1 - 0.4 * x2)).astype(int)
    y = tau * t + beta_y * (x1 + 0.5 * x2) + noise * rng.normal(size=n)
    return dataset_from_arrays(
        t, np.round(y, 12), cont={"x1": np.round(x1, 12), "x2": np.round(x2, 12)}
    )


def _lr_weights(d, estimand=Estimand.ATE):
    t = d.treatment_values()
    _, ps = fit_logistic_irls(design_matrix(d, m=1, drop_reference=True), t)
    clipped, _ = clip_ps(ps)
    return ps_to_weights(clipped, t, estimand, method_id="LR")


def _fast_cfg(**kw):
    kw.setdefault("replications", 4)
    kw.setdefault("seed", 0)
    return SensitivityConfig(**kw)


class TestSensitivityConfig:
    def test_default_axes_cover_documented_ranges(self):
        cfg = SensitivityConfig()
        es = cfg.es_t_values()
        rho = cfg.rho_y_values()
        assert es[0] == -0.6 and es[-1] == 0.6 and es.size == 25
        assert rho[0] == 0.0 and rho[-1] == 0.6 and rho.size == 13
        assert np.allclose(np.diff(es), 0.05)

    def test_string_reweight_method_coerced(self):
        cfg = SensitivityConfig(reweight_method="SameAsChosen")
        assert cfg.reweight_method is ReweightMethod.SAME_AS_CHOSEN

    def test_bad_step_rejected(self):
        with pytest.raises(ValueError, match="step"):
            SensitivityConfig(es_t_step=0.0)

    def test_bad_replications_rejected(self):
        with pytest.raises(ValueError, match="replications"):
            SensitivityConfig(replications=0)

    def test_negative_rho_range_rejected(self):
        with pytest.raises(ValueError, match="absolute"):
            SensitivityConfig(rho_y_range=(-0.2, 0.6))

    def test_infinite_range_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            SensitivityConfig(es_t_range=(0.0, float("inf")))

    def test_round_trips_through_dict(self):
        cfg = SensitivityConfig(es_t_range=(-0.2, 0.2), replications=3, seed=9)
        back = SensitivityConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert back == cfg


class TestObservedPoints:
    def test_independent_confounder_near_origin(self):
        rng = np.random.default_rng(0)
        n = 2000
        t = (np.arange(n) % 2).astype(int)
        x = rng.normal(size=n)
        y = rng.normal(size=n)
        d = dataset_from_arrays(t, np.round(y, 12), cont={"x": np.round(x, 12)})
        (pt,) = observed_points(d)
        assert abs(pt.smd) < 0.1
        assert pt.rho < 0.1

    def test_confounder_equal_to_outcome_has_unit_rho(self):
        rng = np.random.default_rng(1)
        n = 50
        t = (np.arange(n) % 2).astype(int)
        y = np.round(rng.normal(size=n), 12)
        d = dataset_from_arrays(t, y, cont={"x": y})
        (pt,) = observed_points(d)
        assert pt.rho == pytest.approx(1.0)

    def test_hand_built_six_rows(self):
        t = np.array([0, 0, 0, 1, 1, 1])
        x = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
        y = np.array([2.0, 1.0, 3.0, 5.0, 4.0, 6.0])
        d = dataset_from_arrays(t, y, cont={"x": x})
        (pt,) = observed_points(d)
        smd_hand = (5.0 - 2.0) / np.sqrt((1.0 + 1.0) / 2.0)
        r_hand = np.corrcoef(x, y)[0, 1]
        assert pt.smd == pytest.approx(smd_hand)
        assert pt.rho == pytest.approx(abs(r_hand))

    def test_sign_kept_on_smd(self):
        t = np.array([0, 0, 0, 1, 1, 1])
        x = np.array([4.0, 5.0, 6.0, 1.0, 2.0, 3.0])
        y = np.arange(6.0)
        d = dataset_from_arrays(t, y, cont={"x": x})
        (pt,) = observed_points(d)
        assert pt.smd < 0

    def test_categorical_expands_per_level(self):
        t = [0, 0, 0, 1, 1, 1]
        y = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
        d = dataset_from_arrays(t, y, cat={"g": ["a", "b", "a", "b", "a", "b"]})
        names = [pt.name for pt in observed_points(d)]
        assert names == ["g:a", "g:b"]


class TestCoefficientSolve:
    @pytest.mark.parametrize("es_t,rho_y", [(0.0, 0.0), (0.3, 0.2), (-0.4, 0.3), (0.6, 0.6)])
    def test_constructed_column_hits_targets(self, es_t, rho_y):
        d = _confounded_dataset(2, n=400)
        ctx = _build_context(d)
        z = _draw_noise(ctx, np.random.default_rng(7))
        coeffs = _solve_coefficients(ctx, z, es_t, rho_y)
        assert coeffs is not None
        a, b, c = coeffs
        u = a * ctx.t + b * ctx.e + c * z
        t = ctx.t.astype(int)
        assert _signed_smd(u, t) == pytest.approx(es_t, abs=1e-6)
        assert abs(float(np.corrcoef(u, ctx.y)[0, 1])) == pytest.approx(abs(rho_y), abs=1e-6)
        assert u.var(ddof=1) == pytest.approx(1.0, abs=1e-6)

    def test_impossible_correlation_is_infeasible(self):
        d = _confounded_dataset(3, n=200)
        ctx = _build_context(d)
        z = _draw_noise(ctx, np.random.default_rng(1))
        assert _solve_coefficients(ctx, z, 0.0, 1.5) is None

    def test_unreachable_in_range_target_is_infeasible(self):
        # on this dataset the unit-variance constraint caps the achievable
        # outcome correlation at about 0.42 once the imbalance target is
        # fixed at -0.4, so (-0.4, 0.5) has no solution even though both
        # coordinates look innocuous on their own
        d = _confounded_dataset(2, n=400)
        ctx = _build_context(d)
        z = _draw_noise(ctx, np.random.default_rng(0))
        assert _solve_coefficients(ctx, z, -0.4, 0.5) is None

    def test_noise_is_orthogonal_to_anchors(self):
        d = _confounded_dataset(4, n=250)
        ctx = _build_context(d)
        z = _draw_noise(ctx, np.random.default_rng(3))
        assert abs(z.sum()) < 1e-8
        assert abs(z @ ctx.t) < 1e-8
        assert abs(z @ ctx.e) < 1e-8
        assert abs(z @ ctx.y) < 1e-8


class TestSimulateCell:
    def test_null_cell_anchors_to_original(self):
        d = _confounded_dataset(5, n=400, tau=1.5)
        ws = _lr_weights(d)
        original = doubly_robust_effect(d, ws)
        cell = simulate_cell(d, ws, _fast_cfg(replications=8), 0.0, 0.0)
        assert not cell.infeasible
        assert abs(cell.mean_effect - original.estimate) <= max(2 * cell.effect_se, 0.05)

    def test_deterministic_given_seed(self):
        d = _confounded_dataset(6, n=200)
        ws = _lr_weights(d)
        a = simulate_cell(d, ws, _fast_cfg(seed=11), 0.2, 0.3, cell_index=5)
        b = simulate_cell(d, ws, _fast_cfg(seed=11), 0.2, 0.3, cell_index=5)
        c = simulate_cell(d, ws, _fast_cfg(seed=12), 0.2, 0.3, cell_index=5)
        assert a == b
        assert a.mean_effect != c.mean_effect

    def test_infeasible_cell_flagged_not_fatal(self):
        d = _confounded_dataset(7, n=200)
        ws = _lr_weights(d)
        cell = simulate_cell(d, ws, _fast_cfg(), 0.0, 1.5)
        assert cell.infeasible
        assert np.isnan(cell.mean_effect) and np.isnan(cell.mean_p)

    def test_hidden_confounder_cell_moves_toward_truth(self):
        rng = np.random.default_rng(8)
        n = 500
        tau = 1.0
        x = rng.normal(size=n)
        h = rng.normal(size=n)
        t = (rng.random(n) < _sigmoid(0.5 * x + 0.9 * h)).astype(int)
        y = tau * t + 0.8 * x + 1.2 * h + 0.7 * rng.normal(size=n)
        d_obs = dataset_from_arrays(
            t, np.round(y, 12), cont={"x": np.round(x, 12)}
        )
        d_full = dataset_from_arrays(
            t, np.round(y, 12), cont={"x": np.round(x, 12), "h": np.round(h, 12)}
        )
        ws_obs = _lr_weights(d_obs)
        original = doubly_robust_effect(d_obs, ws_obs)
        oracle = doubly_robust_effect(d_full, _lr_weights(d_full))
        es_h = _signed_smd(h, t)
        rho_h = _abs_corr(h, y)
        cell = simulate_cell(d_obs, ws_obs, _fast_cfg(replications=10), es_h, rho_h)
        assert not cell.infeasible
        assert abs(cell.mean_effect - oracle.estimate) < abs(original.estimate - oracle.estimate)

    def test_weak_effect_extreme_corner_loses_significance(self):
        d = _confounded_dataset(9, n=250, tau=0.5, noise=1.5)
        ws = _lr_weights(d)
        original = doubly_robust_effect(d, ws)
        assert original.p_value < 0.05
        cell = simulate_cell(d, ws, _fast_cfg(replications=6), 0.6, 0.6)
        assert not cell.infeasible
        assert cell.mean_p > 0.05

    @pytest.mark.parametrize("es", [0.3])
    def test_null_dataset_sign_flip_symmetry(self, es):
        # pair every control row with an identical treated row so the
        # original estimate is exactly zero and the outcome residual is
        # exactly balanced; flipping the sign of the imbalance target then
        # mirrors the simulated effect, so the two shifts cancel
        rng = np.random.default_rng(10)
        m = 150
        xh = np.round(rng.normal(size=m), 12)
        yh = np.round(rng.normal(size=m), 12)
        t = np.r_[np.zeros(m, int), np.ones(m, int)]
        d = dataset_from_arrays(t, np.r_[yh, yh], cont={"x": np.r_[xh, xh]})
        ws = _lr_weights(d)
        cfg = _fast_cfg(replications=8)
        pos = simulate_cell(d, ws, cfg, es, 0.2, cell_index=0)
        neg = simulate_cell(d, ws, cfg, -es, 0.2, cell_index=0)
        assert not pos.infeasible and not neg.infeasible
        spread = 3 * np.hypot(pos.effect_se, neg.effect_se)
        magnitude = 0.5 * (abs(pos.mean_effect) + abs(neg.mean_effect))
        assert abs(pos.mean_effect + neg.mean_effect) <= max(spread, 0.1 * magnitude)

    def test_same_as_chosen_reweights_with_method(self):
        d = _confounded_dataset(11, n=200)
        ws = _lr_weights(d)
        cfg_fast = _fast_cfg(reweight_method=ReweightMethod.FAST_LOGISTIC)
        cfg_same = _fast_cfg(reweight_method=ReweightMethod.SAME_AS_CHOSEN)
        a = simulate_cell(d, ws, cfg_fast, 0.2, 0.2)
        b = simulate_cell(d, ws, cfg_same, 0.2, 0.2)
        # chosen method is LR, so both paths agree exactly
        assert a == b

    def test_rep_averaged_monotone_along_rho(self):
        d = _confounded_dataset(12, n=200, tau=1.0)
        ws = _lr_weights(d)
        cfg = _fast_cfg(replications=200)
        base = simulate_cell(d, ws, cfg, 0.4, 0.0, cell_index=0)
        far = simulate_cell(d, ws, cfg, 0.4, 0.5, cell_index=0)
        adj_base = abs(base.mean_effect - doubly_robust_effect(d, ws).estimate)
        adj_far = abs(far.mean_effect - doubly_robust_effect(d, ws).estimate)
        spread = 3 * np.hypot(base.effect_se, far.effect_se)
        assert adj_far >= adj_base - spread


class TestOvAnalysis:
    def _small(self, d, reps=2):
        return SensitivityConfig(
            es_t_range=(-0.2, 0.2), es_t_step=0.2,
            rho_y_range=(0.0, 0.4), rho_y_step=0.2,
            replications=reps, seed=3,
        )

    def test_three_by_three_deterministic(self):
        d = _confounded_dataset(13, n=200, tau=1.0)
        ws = _lr_weights(d)
        eff = doubly_robust_effect(d, ws)
        cfg = self._small(d)
        a = ov_analysis(d, ws, eff, cfg)
        b = ov_analysis(d, ws, eff, cfg)
        assert a.grid.effect.shape == (3, 3)
        np.testing.assert_array_equal(a.grid.effect, b.grid.effect)
        np.testing.assert_array_equal(a.grid.p, b.grid.p)
        assert not a.grid.infeasible.any()
        assert a.grid.original_estimate == eff.estimate

    def test_axis_without_zero_runs(self):
        d = _confounded_dataset(14, n=200)
        ws = _lr_weights(d)
        eff = doubly_robust_effect(d, ws)
        cfg = SensitivityConfig(
            es_t_range=(0.1, 0.3), es_t_step=0.1,
            rho_y_range=(0.1, 0.3), rho_y_step=0.1,
            replications=2, seed=0,
        )
        out = ov_analysis(d, ws, eff, cfg)
        assert 0.0 not in out.grid.es_t_values
        assert np.isfinite(out.grid.effect).all()

    def test_weak_data_flags_very_sensitive(self):
        d = _confounded_dataset(15, n=150, tau=0.0, noise=2.0)
        ws = _lr_weights(d)
        eff = doubly_robust_effect(d, ws)
        out = ov_analysis(d, ws, eff, self._small(d))
        assert out.very_sensitive

    def test_strong_data_not_flagged(self):
        d = _confounded_dataset(16, n=500, tau=4.0, noise=0.5)
        ws = _lr_weights(d)
        eff = doubly_robust_effect(d, ws)
        out = ov_analysis(d, ws, eff, self._small(d))
        assert not out.very_sensitive

    def test_payload_is_json_serializable(self):
        d = _confounded_dataset(17, n=150)
        ws = _lr_weights(d)
        eff = doubly_robust_effect(d, ws)
        out = ov_analysis(d, ws, eff, self._small(d))
        payload = json.dumps(out.to_dict())
        back = json.loads(payload)
        assert back["grid"]["es_t_values"] == [-0.2, 0.0, 0.2]
        assert "procedure" in back
        assert back["p_isolines"][0]["level"] == 0.05

    def test_isoline_segments_stay_inside_grid(self):
        d = _confounded_dataset(18, n=200, tau=1.0)
        ws = _lr_weights(d)
        eff = doubly_robust_effect(d, ws)
        out = ov_analysis(d, ws, eff, self._small(d, reps=3))
        for iso in out.effect_isolines + out.p_isolines:
            for seg in iso["segments"]:
                for x, y in seg:
                    assert -0.2 - 1e-9 <= x <= 0.2 + 1e-9
                    assert -1e-9 <= y <= 0.4 + 1e-9


class TestIsoSegments:
    def test_plane_isolines_lie_on_level(self):
        xs = np.linspace(-1, 1, 9)
        ys = np.linspace(0, 2, 7)
        Z = xs[:, None] + ys[None, :]
        for level in (-0.3, 0.5, 1.7):
            segs = _iso_segments(xs, ys, Z, level)
            assert segs
            for seg in segs:
                for x, y in seg:
                    assert x + y == pytest.approx(level, abs=1e-9)

    def test_nan_cells_skipped(self):
        xs = np.array([0.0, 1.0, 2.0])
        ys = np.array([0.0, 1.0])
        Z = np.array([[0.0, 0.0], [1.0, np.nan], [2.0, 2.0]])
        segs = _iso_segments(xs, ys, Z, 0.5)
        # only the left cell is fully finite
        assert all(0.0 <= x <= 1.0 for seg in segs for x, _ in seg)

    def test_constant_field_has_no_isolines(self):
        xs = np.linspace(0, 1, 4)
        ys = np.linspace(0, 1, 4)
        Z = np.ones((4, 4))
        assert _iso_segments(xs, ys, Z, 0.5) == []
        assert _iso_segments(xs, ys, Z, 1.5) == []
