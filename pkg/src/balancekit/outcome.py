"""Treatment effect estimation under balancing weights.

Two estimators: a Hajek weighted-means contrast with a normal-approximation
interval, and a weighted least squares regression of the outcome on treatment
and confounders with heteroskedasticity-robust inference. The regression
estimator is doubly robust in the usual sense: it is consistent when either
the weights or the outcome regression is correctly specified.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .balance import ess, ess_for_estimand, weighted_mean, weighted_var
from .dataset import Dataset, design_matrix
from .estimators.logistic import _check_rank
from .weights import Estimand, WeightSet, normalize_weights


class EffectModel(enum.Enum):
    WEIGHTED_MEANS = "WeightedMeans"
    DOUBLY_ROBUST = "DoublyRobust"


@dataclass
class EffectEstimate:
    """Point estimate with robust standard error, 95% CI and two-sided p."""

    estimate: float
    se: float
    ci_low: float
    ci_high: float
    p_value: float
    estimand: Estimand | None
    method_id: str
    n: int
    ess: float
    model: EffectModel

    def __post_init__(self):
        if not self.ci_low <= self.estimate <= self.ci_high:
            raise ValueError("confidence interval must bracket the estimate")
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError("p_value must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "se": self.se,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "p_value": self.p_value,
            "estimand": self.estimand.value if self.estimand else None,
            "method_id": self.method_id,
            "n": self.n,
            "ess": self.ess,
            "model": self.model.value,
        }


def _interval(estimate: float, se: float, crit: float, sf) -> tuple[float, float, float]:
    """(ci_low, ci_high, p) for a symmetric interval; degenerate se handled."""
    if se == 0.0:
        return estimate, estimate, (1.0 if estimate == 0.0 else 0.0)
    p = float(2.0 * sf(abs(estimate) / se))
    return estimate - crit * se, estimate + crit * se, p


def weighted_means_effect(y: np.ndarray, t: np.ndarray, w) -> EffectEstimate:
    """Difference of Hajek weighted outcome means, treated minus control.

    The variance is the sum of the weighted group variances each divided by
    the group's effective sample size, with a normal-approximation interval.
    ``w`` may be a WeightSet or a plain weight vector.
    """
    if isinstance(w, WeightSet):
        weights, estimand, method_id = w.weights, w.estimand, w.method_id
    else:
        weights, estimand, method_id = np.asarray(w, dtype=float), None, ""
    y = np.asarray(y, dtype=float)
    t = np.asarray(t)
    if not y.size == t.size == weights.size:
        raise ValueError("y, t and w must have the same length")

    is_t = t == 1
    yt, wt = y[is_t], weights[is_t]
    yc, wc = y[~is_t], weights[~is_t]
    if yt.size == 0 or yc.size == 0:
        raise ValueError("both treatment groups must be nonempty")
    if not (wt.sum() > 0 and wc.sum() > 0):
        raise ValueError("both treatment groups need a positive weight sum")

    estimate = weighted_mean(yt, wt) - weighted_mean(yc, wc)
    try:
        var_t = weighted_var(yt, wt)
        var_c = weighted_var(yc, wc)
    except ValueError as e:
        raise ValueError(f"degenerate treatment group: {e}") from e
    se = float(np.sqrt(var_t / ess(wt) + var_c / ess(wc)))
    crit = float(stats.norm.ppf(0.975))
    ci_low, ci_high, p = _interval(estimate, se, crit, stats.norm.sf)

    total_ess = ess_for_estimand(weights, t, estimand) if estimand else ess(weights)
    return EffectEstimate(
        estimate=float(estimate),
        se=se,
        ci_low=float(ci_low),
        ci_high=float(ci_high),
        p_value=p,
        estimand=estimand,
        method_id=method_id,
        n=int(y.size),
        ess=total_ess,
        model=EffectModel.WEIGHTED_MEANS,
    )


def doubly_robust_effect(
    d: Dataset,
    w: WeightSet,
    covariate_subset: list[str] | None = None,
) -> EffectEstimate:
    """Weighted least squares of the outcome on intercept, treatment and
    confounder design columns; the treatment coefficient is the effect.

    Weights are normalized to mean 1 within each treatment group before
    fitting, which makes the estimate invariant to within-group rescaling.
    The standard error is the heteroskedasticity-robust sandwich with
    small-sample scaling n/(n-p), treating the weights as fixed; the interval
    and two-sided p use the t distribution with n-p degrees of freedom.
    ``covariate_subset`` optionally restricts the regression to the named
    confounders (weighting is unaffected); default is all of them.
    """
    t = d.treatment_values()
    y = d.outcome_values()
    n = t.size
    if w.weights.size != n:
        raise ValueError(f"weight set has {w.weights.size} weights for {n} rows")
    wn = normalize_weights(w, t).weights

    dm = design_matrix(d, m=1, drop_reference=True)
    if covariate_subset is None:
        X, x_names = dm.matrix, list(dm.names)
    else:
        known = {c.name for c in d.confounders()}
        unknown = [name for name in covariate_subset if name not in known]
        if unknown:
            raise ValueError(
                f"covariate_subset contains unknown confounders: {', '.join(sorted(unknown))}"
            )
        chosen = set(covariate_subset)
        keep = [j for j, src in enumerate(dm.sources) if src in chosen]
        X, x_names = dm.matrix[:, keep], [dm.names[j] for j in keep]

    Z = np.column_stack([np.ones(n), t.astype(float), X])
    names = ["treatment"] + x_names
    p = Z.shape[1]
    if n <= p:
        raise ValueError(f"{n} observations cannot identify {p} regression parameters")
    _check_rank(Z, names)

    ZtW = Z.T * wn
    beta = np.linalg.solve(ZtW @ Z, ZtW @ y)
    resid = y - Z @ beta

    bread = np.linalg.inv(ZtW @ Z)
    meat = (Z.T * (wn * resid) ** 2) @ Z
    cov = bread @ meat @ bread * (n / (n - p))
    estimate = float(beta[1])
    se = float(np.sqrt(cov[1, 1]))

    dof = n - p
    crit = float(stats.t.ppf(0.975, dof))
    ci_low, ci_high, p_value = _interval(estimate, se, crit, lambda z: stats.t.sf(z, dof))

    return EffectEstimate(
        estimate=estimate,
        se=se,
        ci_low=float(ci_low),
        ci_high=float(ci_high),
        p_value=p_value,
        estimand=w.estimand,
        method_id=w.method_id,
        n=int(n),
        ess=ess_for_estimand(w.weights, t, w.estimand),
        model=EffectModel.DOUBLY_ROBUST,
    )
