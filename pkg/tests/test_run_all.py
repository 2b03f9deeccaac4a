"""Batch runner: nine methods, partial-failure contract, determinism."""

import numpy as np
import pytest

from balancekit.balance import balance_table
from balancekit.estimators import METHOD_IDS, EstimatorConfig, GbmHyperparameters, run_all
from balancekit.weights import Estimand

from .helpers import dataset_from_arrays

FAST = EstimatorConfig(gbm=GbmHyperparameters(max_trees=30, shrinkage=0.1, eval_every=10))


def _confounded_dataset(seed=0, n=500):
    rng = np.random.default_rng(seed)
    x1 = rng.normal(size=n)
    x2 = rng.gamma(2.0, 1.0, size=n)
    b = (rng.random(n) < 0.4).astype(int)
    eta = 0.5 * x1 - 0.3 * x2 + 0.7 * b
    t = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(int)
    y = x1 + x2 + 1.5 * t + rng.normal(size=n)
    return dataset_from_arrays(t, y, cont={"x1": x1, "x2": x2}, binary={"b": b})


def _mirrored_null_dataset(n_half=60):
    # identical covariate values in both groups: every moment agrees exactly
    rng = np.random.default_rng(2)
    x = rng.normal(size=n_half)
    xs = np.concatenate([x, x])
    t = np.array([1] * n_half + [0] * n_half)
    y = rng.normal(size=2 * n_half)
    return dataset_from_arrays(t, y, cont={"x": xs})


class TestRunAll:
    def test_nine_methods_on_confounded_data(self):
        d = _confounded_dataset()
        res = run_all(d, Estimand.ATE, FAST)
        assert set(res.weight_sets) == set(METHOD_IDS)
        assert res.failures == {}
        n = d.n_rows
        for mid, ws in res.weight_sets.items():
            assert ws.weights.shape == (n,), mid
            assert np.all(ws.weights >= 0)

    def test_balanced_null_data_weights_constant_within_group(self):
        d = _mirrored_null_dataset()
        res = run_all(d, Estimand.ATE, FAST)
        assert set(res.weight_sets) == set(METHOD_IDS)
        t = d.treatment_values()
        for mid, ws in res.weight_sets.items():
            for g in (0, 1):
                w = ws.weights[t == g]
                assert np.ptp(w) == pytest.approx(0.0, abs=1e-5), mid

    def test_eb1_exact_balance_via_table(self):
        d = _confounded_dataset(seed=1)
        res = run_all(d, Estimand.ATE, FAST)
        _, summaries = balance_table(d, {"EB#1": res.weight_sets["EB#1"]}, Estimand.ATE)
        assert summaries["EB#1"].max_smd < 1e-6

    def test_att_structure(self):
        d = _confounded_dataset(seed=2)
        res = run_all(d, Estimand.ATT, FAST)
        t = d.treatment_values()
        for mid, ws in res.weight_sets.items():
            assert np.all(ws.weights[t == 1] == 1.0), mid

    def test_partial_failure_recorded(self):
        # x takes 3 distinct values, so a degree-3 expansion is degenerate and
        # the order-3 methods fail while everything else succeeds
        rng = np.random.default_rng(3)
        n = 300
        x = rng.choice([-1.0, 0.0, 1.0], size=n)
        eta = 0.8 * x
        t = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(int)
        y = x + t + rng.normal(size=n)
        d = dataset_from_arrays(t, y, cont={"x": x})
        res = run_all(d, Estimand.ATE, FAST)
        assert set(res.failures) == {"CBPS#3", "EB#3"}
        assert "degree-3" in res.failures["EB#3"]
        assert set(res.weight_sets) == set(METHOD_IDS) - {"CBPS#3", "EB#3"}

    def test_all_methods_failing_raises(self):
        # a constant continuous confounder breaks every design construction
        d = dataset_from_arrays(
            [1, 0, 1, 0], [1.0, 2.0, 3.0, 4.0], cont={"x": [2.0, 2.0, 2.0, 2.0]}
        )
        with pytest.raises(ValueError, match="all estimation methods failed"):
            run_all(d, Estimand.ATE, FAST)

    def test_deterministic(self):
        d = _confounded_dataset(seed=4)
        r1 = run_all(d, Estimand.ATE, FAST)
        r2 = run_all(d, Estimand.ATE, FAST)
        for mid in METHOD_IDS:
            np.testing.assert_array_equal(
                r1.weight_sets[mid].weights, r2.weight_sets[mid].weights
            )

    def test_provenance_populated(self):
        d = _confounded_dataset(seed=5)
        res = run_all(d, Estimand.ATE, FAST)
        lr = res.weight_sets["LR"].provenance
        assert lr["converged"] and lr["iterations"] >= 1 and "n_clipped" in lr
        gbm = res.weight_sets["GBM_KS"].provenance
        assert gbm["stop_rule"] == "KS_MAX"
        assert isinstance(gbm["selected_iteration"], int)
        assert gbm["trace"][0]["iteration"] == 0
        eb = res.weight_sets["EB#2"].provenance
        assert eb["moment_order"] == 2 and eb["max_violation"] < 1e-6

    def test_config_roundtrip(self):
        cfg = EstimatorConfig(seed=9, gbm=GbmHyperparameters(max_trees=50, eval_every=5))
        back = EstimatorConfig.from_dict(cfg.to_dict())
        assert back == cfg
