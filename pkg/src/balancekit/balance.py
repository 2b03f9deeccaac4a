"""Balance evaluation: SMD, KS and ESS metrics, balance tables, method selection.

All metrics are Hajek-style (ratio of weighted sums), so every statistic in this
module is invariant to rescaling the weights within a treatment group.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .weights import Estimand, WeightSet

#: Method id used for the no-weighting baseline column in balance tables.
UNWEIGHTED_ID = "unweighted"

#: Widely used feasibility threshold for both max |SMD| and max KS.
BALANCE_THRESHOLD = 0.1

#: Two metric values closer than this are treated as tied when ranking methods.
TIE_RESOLUTION = 0.005


def weighted_mean(x: np.ndarray, w: np.ndarray) -> float:
    """Weighted mean sum(w*x)/sum(w)."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    sw = w.sum()
    if not sw > 0:
        raise ValueError("weighted_mean requires a positive weight sum")
    return float((w * x).sum() / sw)


def weighted_var(x: np.ndarray, w: np.ndarray) -> float:
    """Weighted variance (sum w / ((sum w)^2 - sum w^2)) * sum w*(x - xbar)^2.

    The normalization is the reliability-weights analogue of the n-1 sample
    variance: with uniform weights it reduces exactly to the usual unbiased
    sample variance.
    """
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    sw = w.sum()
    sw2 = (w * w).sum()
    denom = sw * sw - sw2
    if not denom > 0:
        raise ValueError("weighted variance undefined: ESS <= 1")
    xbar = (w * x).sum() / sw
    return float(sw / denom * (w * (x - xbar) ** 2).sum())


def weighted_sd(x: np.ndarray, w: np.ndarray) -> float:
    """Square root of :func:`weighted_var`."""
    return float(np.sqrt(weighted_var(x, w)))


def smd(
    x: np.ndarray,
    t: np.ndarray,
    w: np.ndarray,
    estimand: Estimand = Estimand.ATE,
    pooled_unweighted_sd: bool = False,
) -> float:
    """Absolute standardized mean difference of ``x`` between treatment groups.

    The numerator is the difference of Hajek weighted group means. The scale is
    estimand-specific: ATE uses sqrt of the mean of the two weighted group
    variances, ATT the treated-group weighted sd, ATC the control-group
    weighted sd. ``pooled_unweighted_sd=True`` swaps in a fixed unweighted
    pooled-sd denominator (useful for cross-method comparability).

    A covariate constant in both groups returns 0.0 by convention.
    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(t)
    w = np.asarray(w, dtype=float)
    xt, wt = x[t == 1], w[t == 1]
    xc, wc = x[t == 0], w[t == 0]
    if xt.size == 0 or xc.size == 0:
        raise ValueError("smd requires both treatment groups nonempty")
    if not (wt.sum() > 0 and wc.sum() > 0):
        raise ValueError("smd requires positive weight sums in both groups")

    mean_diff = weighted_mean(xt, wt) - weighted_mean(xc, wc)

    if np.ptp(xt) == 0 and np.ptp(xc) == 0:
        # both groups constant: 0/0 convention
        return 0.0

    if pooled_unweighted_sd:
        ones_t = np.ones_like(xt)
        ones_c = np.ones_like(xc)
        scale2 = (weighted_var(xt, ones_t) + weighted_var(xc, ones_c)) / 2.0
    elif estimand is Estimand.ATT:
        scale2 = weighted_var(xt, wt)
    elif estimand is Estimand.ATC:
        scale2 = weighted_var(xc, wc)
    else:
        scale2 = (weighted_var(xt, wt) + weighted_var(xc, wc)) / 2.0
    if scale2 <= 0:
        return 0.0 if mean_diff == 0 else float("inf")
    return float(abs(mean_diff) / np.sqrt(scale2))


def smd_from_moments(
    mean_t: float, mean_c: float, sd_t: float, sd_c: float
) -> float:
    """SMD from stored group moments (ATE scale): |m_t - m_c| / sqrt((s_t^2+s_c^2)/2)."""
    scale = np.sqrt((sd_t**2 + sd_c**2) / 2.0)
    return float(abs(mean_t - mean_c) / scale)


def weighted_ks(x: np.ndarray, t: np.ndarray, w: np.ndarray) -> float:
    """Kolmogorov-Smirnov distance between the weighted group ECDFs.

    F_g(z) = sum of weights of group-g observations with x_i <= z, divided by
    the group's total weight; the statistic is the sup of |F_t - F_c| over the
    pooled sample points. With uniform weights this is the classical two-sample
    KS statistic.
    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(t)
    w = np.asarray(w, dtype=float)
    is_t = t == 1
    wt_total = w[is_t].sum()
    wc_total = w[~is_t].sum()
    if is_t.all() or (~is_t).all():
        raise ValueError("weighted_ks requires both treatment groups nonempty")
    if not (wt_total > 0 and wc_total > 0):
        raise ValueError("weighted_ks requires positive weight sums in both groups")

    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    cum_t = np.cumsum(np.where(is_t[order], w[order], 0.0)) / wt_total
    cum_c = np.cumsum(np.where(~is_t[order], w[order], 0.0)) / wc_total
    # evaluate at the last index of each tie run
    last_of_run = np.r_[xs[1:] != xs[:-1], True]
    return float(np.abs(cum_t[last_of_run] - cum_c[last_of_run]).max())


def ess(w: np.ndarray) -> float:
    """Effective sample size (sum w)^2 / sum w^2."""
    w = np.asarray(w, dtype=float)
    sw = w.sum()
    if not sw > 0:
        raise ValueError("ess requires a positive weight sum")
    return float(sw * sw / (w * w).sum())


def ess_for_estimand(w: np.ndarray, t: np.ndarray, estimand: Estimand) -> float:
    """ESS over the reweighted group (ATT: control, ATC: treated) or the whole sample (ATE)."""
    w = np.asarray(w, dtype=float)
    t = np.asarray(t)
    if estimand is Estimand.ATT:
        return ess(w[t == 0])
    if estimand is Estimand.ATC:
        return ess(w[t == 1])
    return ess(w)


def reference_size(t: np.ndarray, estimand: Estimand) -> int:
    """Sample size the estimand's ESS is compared against."""
    t = np.asarray(t)
    if estimand is Estimand.ATT:
        return int((t == 0).sum())
    if estimand is Estimand.ATC:
        return int((t == 1).sum())
    return int(t.size)


@dataclass
class BalanceRow:
    """Per-covariate balance metrics: unweighted baseline plus one entry per method.

    ``degenerate`` marks a covariate constant in both groups, where SMD is 0 by
    convention rather than by computation.
    """

    covariate: str
    smd_unweighted: float
    ks_unweighted: float
    smd: dict[str, float] = field(default_factory=dict)
    ks: dict[str, float] = field(default_factory=dict)
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "covariate": self.covariate,
            "smd_unweighted": self.smd_unweighted,
            "ks_unweighted": self.ks_unweighted,
            "smd": dict(self.smd),
            "ks": dict(self.ks),
            "degenerate": self.degenerate,
        }


@dataclass
class BalanceSummary:
    """Per-method summary: mean/max |SMD| and KS, ESS and ESS as % of the reference size."""

    method_id: str
    mean_smd: float
    max_smd: float
    mean_ks: float
    max_ks: float
    ess: float
    ess_pct: float

    def to_dict(self) -> dict:
        return {
            "method_id": self.method_id,
            "mean_smd": self.mean_smd,
            "max_smd": self.max_smd,
            "mean_ks": self.mean_ks,
            "max_ks": self.max_ks,
            "ess": self.ess,
            "ess_pct": self.ess_pct,
        }


def _balance_columns(dataset) -> list[tuple[str, np.ndarray]]:
    """(name, values) pairs evaluated in balance tables: continuous/binary raw,
    categoricals expanded one indicator per level."""
    from .dataset import RoleKind

    out: list[tuple[str, np.ndarray]] = []
    for col in dataset.confounders():
        if col.role.kind is RoleKind.CATEGORICAL_CONFOUNDER:
            for level in col.levels():
                out.append((f"{col.name}:{level}", (col.values == level).astype(float)))
        else:
            out.append((col.name, col.values.astype(float)))
    return out


def balance_table(
    dataset,
    weight_sets: dict[str, WeightSet],
    estimand: Estimand,
) -> tuple[list[BalanceRow], dict[str, BalanceSummary]]:
    """Assemble per-covariate balance rows and per-method summaries.

    The returned summaries include an ``unweighted`` baseline entry alongside
    one entry per supplied weight set.
    """
    t = dataset.treatment_values()
    n = t.size
    for method_id, ws in weight_sets.items():
        if ws.weights.size != n:
            raise ValueError(
                f"weight set {method_id!r} has {ws.weights.size} weights for {n} rows"
            )
    ones = np.ones(n)
    columns = _balance_columns(dataset)

    rows: list[BalanceRow] = []
    for name, values in columns:
        row = BalanceRow(
            covariate=name,
            smd_unweighted=smd(values, t, ones, estimand),
            ks_unweighted=weighted_ks(values, t, ones),
            degenerate=bool(np.ptp(values[t == 1]) == 0 and np.ptp(values[t == 0]) == 0),
        )
        for method_id, ws in weight_sets.items():
            row.smd[method_id] = smd(values, t, ws.weights, estimand)
            row.ks[method_id] = weighted_ks(values, t, ws.weights)
        rows.append(row)

    ref_n = reference_size(t, estimand)
    summaries: dict[str, BalanceSummary] = {}

    unw_smd = np.array([r.smd_unweighted for r in rows])
    unw_ks = np.array([r.ks_unweighted for r in rows])
    unw_ess = ess_for_estimand(ones, t, estimand)
    summaries[UNWEIGHTED_ID] = BalanceSummary(
        method_id=UNWEIGHTED_ID,
        mean_smd=float(unw_smd.mean()),
        max_smd=float(unw_smd.max()),
        mean_ks=float(unw_ks.mean()),
        max_ks=float(unw_ks.max()),
        ess=unw_ess,
        ess_pct=100.0 * unw_ess / ref_n,
    )
    for method_id, ws in weight_sets.items():
        m_smd = np.array([r.smd[method_id] for r in rows])
        m_ks = np.array([r.ks[method_id] for r in rows])
        m_ess = ess_for_estimand(ws.weights, t, estimand)
        summaries[method_id] = BalanceSummary(
            method_id=method_id,
            mean_smd=float(m_smd.mean()),
            max_smd=float(m_smd.max()),
            mean_ks=float(m_ks.mean()),
            max_ks=float(m_ks.max()),
            ess=m_ess,
            ess_pct=100.0 * m_ess / ref_n,
        )
    return rows, summaries


@dataclass
class MethodRanking:
    """Ranked candidate methods with the feasibility verdict per method."""

    ranking: list[str]
    feasible: dict[str, bool]
    recommendation: str | None
    message: str

    def to_dict(self) -> dict:
        return {
            "ranking": list(self.ranking),
            "feasible": dict(self.feasible),
            "recommendation": self.recommendation,
            "message": self.message,
        }


def recommend_method(
    summaries: dict[str, BalanceSummary],
    threshold: float = BALANCE_THRESHOLD,
) -> MethodRanking:
    """Rank candidate methods and recommend one.

    Feasible methods have max |SMD| <= threshold and max KS <= threshold. They
    are ranked by lowest max KS, then largest ESS, then lowest max SMD, with KS
    and SMD compared at 0.005 resolution so near-equal values tie and the next
    criterion decides. An infeasible-only field yields no recommendation and
    the analysis is flagged associational.
    """
    candidates = {mid: s for mid, s in summaries.items() if mid != UNWEIGHTED_ID}
    if not candidates:
        raise ValueError("recommend_method requires at least one method summary")

    def quantize(v: float) -> int:
        return int(round(v / TIE_RESOLUTION))

    def sort_key(mid: str):
        s = candidates[mid]
        return (quantize(s.max_ks), -s.ess, quantize(s.max_smd), mid)

    feasible = {
        mid: bool(s.max_smd <= threshold and s.max_ks <= threshold)
        for mid, s in candidates.items()
    }
    ranked_feasible = sorted((m for m in candidates if feasible[m]), key=sort_key)
    ranked_infeasible = sorted((m for m in candidates if not feasible[m]), key=sort_key)
    ranking = ranked_feasible + ranked_infeasible

    if ranked_feasible:
        rec = ranked_feasible[0]
        msg = f"{rec} recommended: lowest max KS with the largest ESS among feasible methods"
    else:
        rec = None
        msg = "none — associational analysis only (no method met the balance threshold)"
    return MethodRanking(ranking=ranking, feasible=feasible, recommendation=rec, message=msg)
