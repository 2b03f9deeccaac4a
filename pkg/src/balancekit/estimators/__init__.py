"""Nine weight-producing estimation routes and the batch runner.

Method ids: LR (logistic regression), GBM_ES / GBM_KS (boosted trees stopped
on mean |SMD| / max KS), CBPS#1-3 (just-identified balance moment conditions
on designs of expansion order 1-3), EB#1-3 (entropy balancing on the same
expansions).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..dataset import Dataset, design_matrix
from ..weights import Estimand, WeightSet, clip_ps, ps_to_weights
from .cbps import CbpsFit, fit_cbps
from .entropy import EbFit, EbSolve, eb_solve, fit_entropy_balancing
from .gbm import (
    ES_MEAN,
    KS_MAX,
    STOP_RULES,
    GbmFit,
    GbmHyperparameters,
    TraceEntry,
    apply_tree,
    fit_gbm,
    fit_gbm_ensemble,
)
from .logistic import LogisticFit, fit_logistic_irls

METHOD_IDS = (
    "LR",
    "GBM_ES",
    "GBM_KS",
    "CBPS#1",
    "CBPS#2",
    "CBPS#3",
    "EB#1",
    "EB#2",
    "EB#3",
)


@dataclass
class EstimatorConfig:
    """Hyperparameters, tolerances and the seed for one batch run."""

    seed: int = 0
    clip_eps: float = 1e-6
    logistic_tol: float = 1e-8
    logistic_max_iter: int = 100
    cbps_tol: float = 1e-8
    cbps_max_iter: int = 200
    eb_tol: float = 1e-8
    eb_max_iter: int = 200
    gbm: GbmHyperparameters = field(default_factory=GbmHyperparameters)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "clip_eps": self.clip_eps,
            "logistic_tol": self.logistic_tol,
            "logistic_max_iter": self.logistic_max_iter,
            "cbps_tol": self.cbps_tol,
            "cbps_max_iter": self.cbps_max_iter,
            "eb_tol": self.eb_tol,
            "eb_max_iter": self.eb_max_iter,
            "gbm": self.gbm.__dict__.copy(),
        }

    @staticmethod
    def from_dict(d: dict) -> "EstimatorConfig":
        d = dict(d)
        gbm = GbmHyperparameters(**d.pop("gbm", {}))
        return EstimatorConfig(gbm=gbm, **d)


@dataclass
class RunResult:
    """Batch outcome: successful weight sets plus per-method failure messages."""

    weight_sets: dict[str, WeightSet]
    failures: dict[str, str]


def _ps_weight_set(ps, t, estimand, method_id, clip_eps, provenance) -> WeightSet:
    clipped, n_clipped = clip_ps(ps, clip_eps)
    return ps_to_weights(
        clipped, t, estimand, method_id=method_id,
        provenance={**provenance, "n_clipped": n_clipped},
    )


def run_all(
    d: Dataset,
    estimand: Estimand,
    config: EstimatorConfig | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> RunResult:
    """Fit all nine methods; failures are recorded per method, never aborting
    the batch. Raises only when every method fails.

    ``progress(done, total)`` is invoked before each method starts; an
    exception raised by the callback aborts the batch, which lets callers
    implement cooperative cancellation.
    """
    config = config or EstimatorConfig()
    t = d.treatment_values()
    weight_sets: dict[str, WeightSet] = {}
    failures: dict[str, str] = {}
    done = 0

    def tick():
        nonlocal done
        if progress is not None:
            progress(done, len(METHOD_IDS))
        done += 1

    designs_model = {}
    for m in (1, 2, 3):
        try:
            designs_model[m] = design_matrix(d, m=m, drop_reference=True)
        except ValueError as e:
            designs_model[m] = e

    def attempt(method_id, fn):
        try:
            weight_sets[method_id] = fn()
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as e:
            failures[method_id] = str(e)

    def model_design(m):
        if isinstance(designs_model[m], Exception):
            raise designs_model[m]
        return designs_model[m]

    def fit_lr():
        fit, ps = fit_logistic_irls(
            model_design(1), t, tol=config.logistic_tol, max_iter=config.logistic_max_iter
        )
        return _ps_weight_set(
            ps, t, estimand, "LR", config.clip_eps,
            {"iterations": fit.iterations, "converged": fit.converged, "separation": fit.separation},
        )

    tick()
    attempt("LR", fit_lr)

    tick()
    tick()
    try:
        design_full = design_matrix(d, m=1, drop_reference=False)
        gbm_fit, ps_by_rule = fit_gbm_ensemble(
            design_full, t, estimand, hp=config.gbm, seed=config.seed, clip_eps=config.clip_eps
        )
        for method_id, rule in (("GBM_ES", ES_MEAN), ("GBM_KS", KS_MAX)):
            weight_sets[method_id] = _ps_weight_set(
                ps_by_rule[rule], t, estimand, method_id, config.clip_eps,
                {
                    "stop_rule": rule,
                    "selected_iteration": gbm_fit.selected_iteration[rule],
                    "seed": config.seed,
                    "trace": [e.to_dict() for e in gbm_fit.trace],
                },
            )
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as e:
        failures["GBM_ES"] = str(e)
        failures["GBM_KS"] = str(e)

    for m in (1, 2, 3):
        def fit_cbps_m(m=m):
            fit, ps = fit_cbps(
                model_design(m), t, estimand, moment_order=m,
                tol=config.cbps_tol, max_iter=config.cbps_max_iter,
            )
            return _ps_weight_set(
                ps, t, estimand, f"CBPS#{m}", config.clip_eps,
                {
                    "moment_order": m,
                    "iterations": fit.iterations,
                    "converged": fit.converged,
                    "residual_norm": fit.residual_norm,
                },
            )

        tick()
        attempt(f"CBPS#{m}", fit_cbps_m)

    for m in (1, 2, 3):
        def fit_eb_m(m=m):
            _, ws = fit_entropy_balancing(
                model_design(m), t, estimand, moment_order=m,
                tol=config.eb_tol, max_iter=config.eb_max_iter, method_id=f"EB#{m}",
            )
            return ws

        tick()
        attempt(f"EB#{m}", fit_eb_m)

    if not weight_sets:
        details = "; ".join(f"{mid}: {msg}" for mid, msg in failures.items())
        raise ValueError(f"all estimation methods failed: {details}")
    return RunResult(weight_sets=weight_sets, failures=failures)


__all__ = [
    "ES_MEAN",
    "KS_MAX",
    "METHOD_IDS",
    "STOP_RULES",
    "CbpsFit",
    "EbFit",
    "EbSolve",
    "EstimatorConfig",
    "GbmFit",
    "GbmHyperparameters",
    "LogisticFit",
    "RunResult",
    "TraceEntry",
    "apply_tree",
    "eb_solve",
    "fit_cbps",
    "fit_entropy_balancing",
    "fit_gbm",
    "fit_gbm_ensemble",
    "fit_logistic_irls",
    "run_all",
]
