"""Tests for the event-sourced session store behind the CLI and service."""

import json

import pytest

from balancekit import (
    ASSOCIATIONAL_STAMP,
    EstimatorConfig,
    GbmHyperparameters,
    SensitivityConfig,
    SessionStore,
    StaleJobError,
    Step,
    StepOrderError,
    Tail,
    TrimRule,
    build_report,
    confounded_linear,
    recommend_method,
    balance_table,
    run_all,
)

ROLES = {
    "t": "treatment",
    "y": "outcome",
    "x1": "continuous_confounder",
    "x2": "continuous_confounder",
    "x3": "binary_confounder",
    "g": "categorical_confounder",
}

FAST = EstimatorConfig(seed=5, gbm=GbmHyperparameters(max_trees=150))

TINY_GRID = SensitivityConfig(
    es_t_range=(-0.2, 0.2), es_t_step=0.2,
    rho_y_range=(0.0, 0.2), rho_y_step=0.2,
    replications=3, seed=5,
)


def make_csv(seed=0, n=150):
    return confounded_linear(seed=seed, n=n).to_csv_bytes()


@pytest.fixture()
def store(tmp_path):
    return SessionStore(tmp_path)


@pytest.fixture(scope="module")
def driven(tmp_path_factory):
    """One session driven through all six steps, shared read-only."""
    root = tmp_path_factory.mktemp("sessions")
    store = SessionStore(root)
    s = store.create(make_csv(), filename="demo.csv")
    s.set_roles(ROLES, treated_level="1")
    s.set_estimand("ATE")
    s.commit_trim([TrimRule("x2", Tail.UPPER, upper=0.98, quantile=True)])
    s.run_weights_sync(FAST)
    s.choose_method(s.ranking["recommendation"] or s.ranking["ranking"][0])
    s.run_effect("DoublyRobust")
    s.run_sensitivity_sync(TINY_GRID)
    return root, s


def test_create_validates_csv(store):
    with pytest.raises(ValueError):
        store.create(b"not,a\nvalid")  # ragged row
    s = store.create(make_csv(), filename="ok.csv")
    done = s.steps_done()
    assert done["data"] and not any(v for k, v in done.items() if k != "data")


def test_step_order_names_first_missing(store):
    s = store.create(make_csv())
    with pytest.raises(StepOrderError) as err:
        s.weights_inputs()
    assert err.value.missing == "roles"
    s.set_roles(ROLES, treated_level="1")
    with pytest.raises(StepOrderError) as err:
        s.weights_inputs()
    assert err.value.missing == "estimand"


def test_set_roles_validates_before_recording(store):
    s = store.create(make_csv())
    with pytest.raises(ValueError):
        s.set_roles({**ROLES, "x1": "nonsense_role"}, treated_level="1")
    assert s.roles is None
    assert s.revision == 1  # only the created event


def test_bad_estimand_rejected(store):
    s = store.create(make_csv())
    s.set_roles(ROLES, treated_level="1")
    with pytest.raises(ValueError):
        s.set_estimand("ATX")


def test_preview_trim_is_dry_run(store):
    s = store.create(make_csv())
    s.set_roles(ROLES, treated_level="1")
    n0 = s.dataset.n_rows
    rev = s.revision
    preview = s.preview_trim([TrimRule("x2", Tail.UPPER, upper=0.9, quantile=True)])
    assert preview["n_removed"] > 0
    assert preview["n_removed"] == preview["n_removed_treated"] + preview["n_removed_control"]
    assert s.dataset.n_rows == n0 and s.revision == rev

    applied = s.commit_trim([TrimRule("x2", Tail.UPPER, upper=0.9, quantile=True)])
    assert applied["n_removed"] == preview["n_removed"]
    assert s.dataset.n_rows == n0 - preview["n_removed"]
    assert len(s.trim_log) == 1


def test_trim_requires_roles(store):
    s = store.create(make_csv())
    with pytest.raises(StepOrderError) as err:
        s.preview_trim([TrimRule("x2", Tail.UPPER, upper=0.9, quantile=True)])
    assert err.value.missing == "roles"


def test_preview_trim_overlay_covers_every_confounder(store):
    s = store.create(make_csv())
    s.set_roles(ROLES, treated_level="1")
    preview = s.preview_trim(
        [TrimRule("x2", Tail.UPPER, upper=0.9, quantile=True)], overlay_bins=8
    )
    overlay = preview["removed_overlay"]
    assert {e["covariate"] for e in overlay} == {"x1", "x2", "x3", "g"}
    for entry in overlay:
        # every removed row lands in some bin of every confounder's histogram
        total = sum(entry["removed_treated"]) + sum(entry["removed_control"])
        assert total == preview["n_removed"]
        if entry["kind"] == "continuous":
            assert len(entry["removed_treated"]) == 8
            assert len(entry["bin_edges"]) == 9
        else:
            assert len(entry["removed_treated"]) == len(entry["levels"])
    x2 = next(e for e in overlay if e["covariate"] == "x2")
    # the rule cuts x2's own upper tail: bins entirely below the resolved
    # threshold hold no removals
    threshold = preview["resolved_rules"][0]["upper"]
    below = [i for i in range(8) if x2["bin_edges"][i + 1] <= threshold]
    assert below, "threshold should sit above at least one full bin"
    assert all(x2["removed_treated"][i] + x2["removed_control"][i] == 0 for i in below)

    no_overlay = s.preview_trim([TrimRule("x2", Tail.UPPER, upper=0.9, quantile=True)])
    assert "removed_overlay" not in no_overlay


def test_reassigning_roles_discards_trims_and_fits(driven, store):
    s = store.create(make_csv())
    s.set_roles(ROLES, treated_level="1")
    s.set_estimand("ATE")
    s.commit_trim([TrimRule("x2", Tail.UPPER, upper=0.9, quantile=True)])
    trimmed_rows = s.dataset.n_rows
    s.set_roles({**ROLES, "x3": "ignored"}, treated_level="1")
    assert s.trim_log == []
    assert s.dataset.n_rows > trimmed_rows  # dataset rebuilt untrimmed
    assert s.estimand is not None  # estimand survives a role change


def test_changing_estimand_discards_fits_keeps_trims(store):
    s = store.create(make_csv())
    s.set_roles(ROLES, treated_level="1")
    s.set_estimand("ATE")
    s.commit_trim([TrimRule("x2", Tail.UPPER, upper=0.9, quantile=True)])
    s.run_weights_sync(FAST)
    assert s.weight_sets
    s.set_estimand("ATT")
    assert s.weight_sets is None and s.ranking is None
    assert len(s.trim_log) == 1


def test_choose_method_tracks_divergence(store):
    s = store.create(make_csv(n=500))
    s.set_roles(ROLES, treated_level="1")
    s.set_estimand("ATE")
    s.run_weights_sync(FAST)
    with pytest.raises(ValueError):
        s.choose_method("NOPE")
    rec = s.ranking["recommendation"]
    assert rec is not None
    other = next(m for m in s.weight_sets if m != rec)
    s.choose_method(other)
    assert s.method_diverged
    s.choose_method(rec)
    assert not s.method_diverged


def test_effect_stamps_infeasible_choice_associational(store):
    s = store.create(make_csv(n=500), filename="d.csv")
    s.set_roles(ROLES, treated_level="1")
    s.set_estimand("ATE")
    # a near-zero-shrinkage booster barely adjusts, so GBM stays infeasible
    # while the moment-matching methods balance this dataset
    s.run_weights_sync(EstimatorConfig(seed=5, gbm=GbmHyperparameters(max_trees=10, shrinkage=1e-6)))
    assert not s.ranking["feasible"]["GBM_ES"]
    feasible = [m for m, ok in s.ranking["feasible"].items() if ok]
    assert feasible

    s.choose_method("GBM_ES")
    payload = s.run_effect("DoublyRobust")
    assert payload["balance_stamp"] == ASSOCIATIONAL_STAMP

    s.choose_method(feasible[0])
    assert s.run_effect("DoublyRobust")["balance_stamp"] is None


def test_stale_weights_commit_rejected(store):
    s = store.create(make_csv())
    s.set_roles(ROLES, treated_level="1")
    s.set_estimand("ATE")
    d, estimand, revision = s.weights_inputs()
    result = run_all(d, estimand, FAST)
    rows, summaries = balance_table(d, result.weight_sets, estimand)
    ranking = recommend_method(summaries)
    # the session moves on while the "job" was running
    s.commit_trim([TrimRule("x2", Tail.UPPER, upper=0.9, quantile=True)])
    with pytest.raises(StaleJobError):
        s.commit_weights(revision, FAST, result, rows, summaries, ranking)
    assert s.weight_sets is None


def test_full_run_marks_every_step(driven):
    _, s = driven
    assert all(s.steps_done().values())
    assert s.effect["effect"]["estimate"] == pytest.approx(1.9, abs=1.0)
    assert s.sensitivity["analysis"]["grid"]["es_t_values"] == [-0.2, 0.0, 0.2]


def test_restore_rebuilds_identical_report(driven):
    root, s = driven
    original = build_report(s)
    fresh = SessionStore(root).get(s.id)
    assert fresh is not s
    restored = build_report(fresh)
    assert json.dumps(restored, sort_keys=True) == json.dumps(original, sort_keys=True)


def test_restore_replays_trim_counts(driven):
    root, s = driven
    fresh = SessionStore(root).get(s.id)
    assert fresh.dataset.n_rows == s.dataset.n_rows
    assert fresh.trim_log == s.trim_log
    assert fresh.revision == s.revision


def test_store_lists_ids_and_guards_paths(driven):
    root, s = driven
    store = SessionStore(root)
    assert s.id in store.ids()
    for bad in ("", "../x", "a/b", "a.b"):
        with pytest.raises(KeyError):
            store.get(bad)
    with pytest.raises(KeyError):
        store.get("feedcafe0000")


def test_corrupt_log_line_is_reported(tmp_path):
    store = SessionStore(tmp_path)
    s = store.create(make_csv())
    with open(tmp_path / f"{s.id}.jsonl", "a", encoding="utf-8") as fh:
        fh.write("{not json\n")
    with pytest.raises(ValueError, match="line 2"):
        SessionStore(tmp_path).get(s.id)


def test_effect_estimate_requires_effect(store):
    s = store.create(make_csv())
    with pytest.raises(StepOrderError):
        s.effect_estimate()


def test_weighted_means_model_recorded(store):
    s = store.create(make_csv())
    s.set_roles(ROLES, treated_level="1")
    s.set_estimand("ATE")
    s.run_weights_sync(FAST)
    s.choose_method(s.ranking["ranking"][0])
    payload = s.run_effect("WeightedMeans")
    assert payload["model"] == "WeightedMeans"
    assert payload["effect"]["model"] == "WeightedMeans"


def test_sensitivity_requires_effect_first(store):
    s = store.create(make_csv())
    s.set_roles(ROLES, treated_level="1")
    s.set_estimand("ATE")
    s.run_weights_sync(FAST)
    s.choose_method(s.ranking["ranking"][0])
    with pytest.raises(StepOrderError) as err:
        s.run_sensitivity_sync(TINY_GRID)
    assert err.value.missing == "effect"
