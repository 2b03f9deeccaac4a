"""Omitted-variable sensitivity analysis.

Sweeps a grid of hypothetical unobserved-confounder associations: for each
cell, a synthetic confounder with the cell's treatment association (SMD) and
outcome association (|correlation|) is constructed, appended to the data, the
weights are re-estimated and the doubly robust effect recomputed. Averaging
over seeded replicates yields contour-ready surfaces of adjusted effect and
p-value, with the dataset's own confounders overlaid as reference points.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import root

from .dataset import Dataset, design_matrix
from .estimators import EstimatorConfig
from .estimators.cbps import fit_cbps
from .estimators.entropy import fit_entropy_balancing
from .estimators.gbm import ES_MEAN, KS_MAX, fit_gbm
from .estimators.logistic import fit_logistic_irls
from .outcome import EffectEstimate, doubly_robust_effect
from .weights import WeightSet, clip_ps, ps_to_weights

#: Residual sup-norm below which the 3-constraint coefficient solve counts as solved.
SOLVE_TOL = 1e-8

#: Plain-language description of the simulation, included in every report.
PROCEDURE = (
    "For each cell (treatment SMD target, outcome correlation target) and each "
    "replicate, a synthetic column U = a*T + b*e + c*noise is built, where e is "
    "the standardized residual of the outcome regressed on the observed "
    "confounders and the noise draw is orthogonalized in-sample against "
    "treatment, outcome and e. The coefficients (a, b, c) are solved so the "
    "sample SMD of U between treatment groups, the correlation of U with the "
    "outcome, and the variance of U hit the cell targets exactly; cells with no "
    "solution are flagged infeasible. U is then appended as a confounder, the "
    "weights are re-estimated, the doubly robust effect is recomputed, and "
    "effect and p-value are averaged over the replicates."
)


class ReweightMethod(enum.Enum):
    SAME_AS_CHOSEN = "SameAsChosen"
    FAST_LOGISTIC = "FastLogistic"


@dataclass
class SensitivityConfig:
    """Grid axes, replication count, seed and the per-cell reweighting rule."""

    es_t_range: tuple[float, float] = (-0.6, 0.6)
    es_t_step: float = 0.05
    rho_y_range: tuple[float, float] = (0.0, 0.6)
    rho_y_step: float = 0.05
    replications: int = 20
    seed: int = 0
    reweight_method: ReweightMethod = ReweightMethod.FAST_LOGISTIC
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)

    def __post_init__(self):
        if isinstance(self.reweight_method, str):
            self.reweight_method = ReweightMethod(self.reweight_method)
        for lo, hi in (self.es_t_range, self.rho_y_range):
            if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
                raise ValueError("axis ranges must be finite with low <= high")
        if not (self.es_t_step > 0 and self.rho_y_step > 0):
            raise ValueError("axis steps must be positive")
        if self.rho_y_range[0] < 0:
            raise ValueError("outcome-correlation axis is absolute, range must be >= 0")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")

    def es_t_values(self) -> np.ndarray:
        return _axis(self.es_t_range, self.es_t_step)

    def rho_y_values(self) -> np.ndarray:
        return _axis(self.rho_y_range, self.rho_y_step)

    def to_dict(self) -> dict:
        return {
            "es_t_range": list(self.es_t_range),
            "es_t_step": self.es_t_step,
            "rho_y_range": list(self.rho_y_range),
            "rho_y_step": self.rho_y_step,
            "replications": self.replications,
            "seed": self.seed,
            "reweight_method": self.reweight_method.value,
            "estimator": self.estimator.to_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "SensitivityConfig":
        d = dict(d)
        est = EstimatorConfig.from_dict(d.pop("estimator", {}))
        for key in ("es_t_range", "rho_y_range"):
            if key in d:
                d[key] = tuple(d[key])
        return SensitivityConfig(estimator=est, **d)


def _axis(rng: tuple[float, float], step: float) -> np.ndarray:
    lo, hi = rng
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return np.round(lo + step * np.arange(count), 10)


@dataclass
class ObservedConfounderPoint:
    """One confounder's location on the sensitivity axes."""

    name: str
    smd: float
    rho: float

    def to_dict(self) -> dict:
        return {"name": self.name, "smd": self.smd, "rho": self.rho}


@dataclass
class CellResult:
    """Replicate-averaged outcome for one grid cell."""

    mean_effect: float
    mean_p: float
    infeasible: bool
    reps_used: int
    effect_se: float


@dataclass
class SensitivityGrid:
    """Adjusted effect and p-value surfaces over the association grid."""

    es_t_values: np.ndarray
    rho_y_values: np.ndarray
    effect: np.ndarray
    p: np.ndarray
    infeasible: np.ndarray
    original_estimate: float
    original_p: float

    def to_dict(self) -> dict:
        return {
            "es_t_values": self.es_t_values.tolist(),
            "rho_y_values": self.rho_y_values.tolist(),
            "effect": _nan_to_none(self.effect),
            "p": _nan_to_none(self.p),
            "infeasible": self.infeasible.astype(bool).tolist(),
            "original_estimate": self.original_estimate,
            "original_p": self.original_p,
        }


@dataclass
class SensitivityAnalysis:
    """Grid plus observed points, contour payload and the sensitivity verdict."""

    grid: SensitivityGrid
    points: list[ObservedConfounderPoint]
    effect_isolines: list[dict]
    p_isolines: list[dict]
    very_sensitive: bool
    procedure: str = PROCEDURE

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "points": [p.to_dict() for p in self.points],
            "effect_isolines": self.effect_isolines,
            "p_isolines": self.p_isolines,
            "very_sensitive": self.very_sensitive,
            "very_sensitive_rule": (
                "heuristic: flagged when at least half of the observed confounder "
                "points fall in grid cells with mean p > 0.05"
            ),
            "procedure": self.procedure,
        }


def _nan_to_none(m: np.ndarray) -> list:
    return [[None if not np.isfinite(v) else float(v) for v in row] for row in m]


def _signed_smd(x: np.ndarray, t: np.ndarray) -> float:
    """Unweighted mean difference over the pooled two-group scale, sign kept."""
    xt, xc = x[t == 1], x[t == 0]
    diff = xt.mean() - xc.mean()
    scale2 = (xt.var(ddof=1) + xc.var(ddof=1)) / 2.0
    if scale2 <= 0:
        return 0.0
    return float(diff / np.sqrt(scale2))


def _abs_corr(x: np.ndarray, y: np.ndarray) -> float:
    sx, sy = x.std(ddof=1), y.std(ddof=1)
    if sx == 0 or sy == 0:
        return 0.0
    xc, yc = x - x.mean(), y - y.mean()
    return float(abs((xc @ yc) / ((x.size - 1) * sx * sy)))


def observed_points(d: Dataset) -> list[ObservedConfounderPoint]:
    """Each confounder's signed treatment SMD and |outcome correlation|.

    Categorical confounders contribute one point per level indicator.
    """
    from .balance import _balance_columns

    t = d.treatment_values()
    y = d.outcome_values()
    return [
        ObservedConfounderPoint(name=name, smd=_signed_smd(x, t), rho=_abs_corr(x, y))
        for name, x in _balance_columns(d)
    ]


@dataclass
class _SimContext:
    """Per-dataset quantities shared by every cell and replicate."""

    t: np.ndarray
    y: np.ndarray
    e: np.ndarray
    ortho_basis: np.ndarray
    n1: int
    n0: int
    delta_e: float
    stt: float
    see: float
    set_: float
    sty: float
    sey: float
    syy: float
    ve_t: float
    ve_c: float


def _build_context(d: Dataset) -> _SimContext:
    t = d.treatment_values().astype(float)
    y = d.outcome_values()
    dm = design_matrix(d, m=1, drop_reference=True)
    Z = np.column_stack([np.ones(t.size), dm.matrix])
    coef, *_ = np.linalg.lstsq(Z, y, rcond=None)
    resid = y - Z @ coef
    sd = resid.std(ddof=1)
    if sd < 1e-12:
        raise ValueError(
            "outcome is fully explained by the observed confounders; "
            "the sensitivity construction is undefined"
        )
    e = resid / sd

    basis = np.column_stack([np.ones(t.size), t, e, y])
    q, _ = np.linalg.qr(basis)

    tc = t - t.mean()
    ec = e - e.mean()
    yc = y - y.mean()
    is_t = t == 1
    return _SimContext(
        t=t,
        y=y,
        e=e,
        ortho_basis=q,
        n1=int(is_t.sum()),
        n0=int((~is_t).sum()),
        delta_e=float(e[is_t].mean() - e[~is_t].mean()),
        stt=float(tc @ tc),
        see=float(ec @ ec),
        set_=float(tc @ ec),
        sty=float(tc @ yc),
        sey=float(ec @ yc),
        syy=float(yc @ yc),
        ve_t=float(e[is_t].var(ddof=1)),
        ve_c=float(e[~is_t].var(ddof=1)),
    )


def _draw_noise(ctx: _SimContext, rng: np.random.Generator) -> np.ndarray:
    """Standard normal draw orthogonalized against [1, T, e, Y], sd 1."""
    z = rng.standard_normal(ctx.t.size)
    q = ctx.ortho_basis
    z = z - q @ (q.T @ z)
    sd = z.std(ddof=1)
    if sd < 1e-12:
        raise ValueError("degenerate noise draw")
    return z / sd


def _solve_coefficients(
    ctx: _SimContext, z: np.ndarray, es_t: float, rho_y: float
) -> tuple[float, float, float] | None:
    """(a, b, c) with SMD(U;T)=es_t, corr(U,Y)=rho_y, var(U)=1, or None."""
    n = ctx.t.size
    is_t = ctx.t == 1
    szz = float((z - z.mean()) @ (z - z.mean()))
    vz_t = float(z[is_t].var(ddof=1))
    vz_c = float(z[~is_t].var(ddof=1))
    et, zt = ctx.e[is_t], z[is_t]
    ec_, zc_ = ctx.e[~is_t], z[~is_t]
    cez_t = float(((et - et.mean()) @ (zt - zt.mean())) / (ctx.n1 - 1))
    cez_c = float(((ec_ - ec_.mean()) @ (zc_ - zc_.mean())) / (ctx.n0 - 1))

    def residuals(theta):
        a, b, c = theta
        suu = (
            a * a * ctx.stt + b * b * ctx.see + c * c * szz + 2 * a * b * ctx.set_
        )
        v_t = b * b * ctx.ve_t + c * c * vz_t + 2 * b * c * cez_t
        v_c = b * b * ctx.ve_c + c * c * vz_c + 2 * b * c * cez_c
        scale2 = (v_t + v_c) / 2.0
        if scale2 <= 0 or suu <= 0:
            return [1e6, 1e6, 1e6]
        f_smd = (a + b * ctx.delta_e) / np.sqrt(scale2) - es_t
        suy = a * ctx.sty + b * ctx.sey
        f_rho = suy / np.sqrt(suu * ctx.syy) - rho_y
        f_var = suu / (n - 1) - 1.0
        return [f_smd, f_rho, f_var]

    starts = [
        (es_t, rho_y, 0.8),
        (es_t, 0.0, 1.0),
        (0.0, rho_y, 0.8),
        (es_t, -rho_y, 0.8),
        (0.0, 0.0, 1.0),
        (-es_t, rho_y, 0.8),
        (es_t / 2, rho_y / 2, 0.5),
    ]
    for x0 in starts:
        sol = root(residuals, x0, method="hybr")
        if np.abs(residuals(sol.x)).max() < SOLVE_TOL:
            a, b, c = (float(v) for v in sol.x)
            return a, b, c
    return None


def _refit_weights(
    d_aug: Dataset,
    method_id: str,
    estimand,
    cfg: SensitivityConfig,
) -> WeightSet:
    """Weights for the augmented dataset under the configured reweighting rule."""
    ec = cfg.estimator
    if cfg.reweight_method is ReweightMethod.FAST_LOGISTIC:
        method_id = "LR"
    t = d_aug.treatment_values()

    if method_id == "LR":
        X = design_matrix(d_aug, m=1, drop_reference=True)
        _, ps = fit_logistic_irls(X, t, tol=ec.logistic_tol, max_iter=ec.logistic_max_iter)
        clipped, _ = clip_ps(ps, ec.clip_eps)
        return ps_to_weights(clipped, t, estimand, method_id=method_id)
    if method_id in ("GBM_ES", "GBM_KS"):
        rule = ES_MEAN if method_id == "GBM_ES" else KS_MAX
        X = design_matrix(d_aug, m=1, drop_reference=False)
        _, ps = fit_gbm(X, t, estimand, stop_rule=rule, hp=ec.gbm, seed=ec.seed)
        clipped, _ = clip_ps(ps, ec.clip_eps)
        return ps_to_weights(clipped, t, estimand, method_id=method_id)
    if method_id.startswith("CBPS#"):
        m = int(method_id.split("#")[1])
        X = design_matrix(d_aug, m=m, drop_reference=True)
        _, ps = fit_cbps(X, t, estimand, moment_order=m, tol=ec.cbps_tol, max_iter=ec.cbps_max_iter)
        clipped, _ = clip_ps(ps, ec.clip_eps)
        return ps_to_weights(clipped, t, estimand, method_id=method_id)
    if method_id.startswith("EB#"):
        m = int(method_id.split("#")[1])
        X = design_matrix(d_aug, m=m, drop_reference=True)
        _, ws = fit_entropy_balancing(
            X, t, estimand, moment_order=m, tol=ec.eb_tol, max_iter=ec.eb_max_iter,
            method_id=method_id,
        )
        return ws
    raise ValueError(f"unknown method id {method_id!r}")


def _hidden_name(d: Dataset) -> str:
    name = "u_hidden"
    k = 0
    while name in d.column_names():
        k += 1
        name = f"u_hidden{k}"
    return name


def simulate_cell(
    d: Dataset,
    w_chosen: WeightSet,
    cfg: SensitivityConfig,
    es_t: float,
    rho_y: float,
    cell_index: int = 0,
    ctx: _SimContext | None = None,
) -> CellResult:
    """Replicate-averaged adjusted effect and p for one association cell.

    Each replicate's RNG derives from (seed, cell_index, replicate), so cells
    can be evaluated in any order or in parallel with identical results.
    """
    ctx = ctx or _build_context(d)
    name = _hidden_name(d)
    effects: list[float] = []
    ps: list[float] = []
    for r in range(cfg.replications):
        rng = np.random.default_rng((cfg.seed, cell_index, r))
        z = _draw_noise(ctx, rng)
        coeffs = _solve_coefficients(ctx, z, es_t, rho_y)
        if coeffs is None:
            return CellResult(
                mean_effect=float("nan"), mean_p=float("nan"),
                infeasible=True, reps_used=len(effects), effect_se=float("nan"),
            )
        a, b, c = coeffs
        u = a * ctx.t + b * ctx.e + c * z
        d_aug = d.with_continuous_confounder(name, u)
        try:
            ws = _refit_weights(d_aug, w_chosen.method_id, w_chosen.estimand, cfg)
            est = doubly_robust_effect(d_aug, ws)
        except (ValueError, FloatingPointError, np.linalg.LinAlgError):
            continue
        effects.append(est.estimate)
        ps.append(est.p_value)
    if not effects:
        return CellResult(
            mean_effect=float("nan"), mean_p=float("nan"),
            infeasible=True, reps_used=0, effect_se=float("nan"),
        )
    arr = np.asarray(effects)
    se = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else float("nan")
    return CellResult(
        mean_effect=float(arr.mean()),
        mean_p=float(np.mean(ps)),
        infeasible=False,
        reps_used=len(effects),
        effect_se=se,
    )


def ov_analysis(
    d: Dataset,
    w_chosen: WeightSet,
    chosen_effect: EffectEstimate,
    cfg: SensitivityConfig | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> SensitivityAnalysis:
    """Full grid sweep with observed confounder points and contour payload.

    ``progress(done, total)`` is invoked before each cell; an exception
    raised by the callback aborts the sweep, which lets callers implement
    cooperative cancellation.
    """
    cfg = cfg or SensitivityConfig()
    ctx = _build_context(d)
    es_vals = cfg.es_t_values()
    rho_vals = cfg.rho_y_values()
    n_es, n_rho = es_vals.size, rho_vals.size

    effect = np.full((n_es, n_rho), np.nan)
    p = np.full((n_es, n_rho), np.nan)
    infeasible = np.zeros((n_es, n_rho), dtype=bool)
    for i, es in enumerate(es_vals):
        for j, rho in enumerate(rho_vals):
            if progress is not None:
                progress(i * n_rho + j, n_es * n_rho)
            cell = simulate_cell(
                d, w_chosen, cfg, float(es), float(rho),
                cell_index=i * n_rho + j, ctx=ctx,
            )
            effect[i, j] = cell.mean_effect
            p[i, j] = cell.mean_p
            infeasible[i, j] = cell.infeasible

    grid = SensitivityGrid(
        es_t_values=es_vals,
        rho_y_values=rho_vals,
        effect=effect,
        p=p,
        infeasible=infeasible,
        original_estimate=chosen_effect.estimate,
        original_p=chosen_effect.p_value,
    )
    points = observed_points(d)

    flagged = 0
    for pt in points:
        i = int(np.abs(es_vals - pt.smd).argmin())
        j = int(np.abs(rho_vals - pt.rho).argmin())
        if np.isfinite(p[i, j]) and p[i, j] > 0.05:
            flagged += 1
    very_sensitive = bool(points) and flagged >= 0.5 * len(points)

    effect_isolines = [
        {"level": float(level), "segments": _iso_segments(es_vals, rho_vals, effect, level)}
        for level in _nice_levels(effect)
    ]
    p_isolines = [
        {"level": 0.05, "segments": _iso_segments(es_vals, rho_vals, p, 0.05)}
    ]
    return SensitivityAnalysis(
        grid=grid,
        points=points,
        effect_isolines=effect_isolines,
        p_isolines=p_isolines,
        very_sensitive=very_sensitive,
    )


def _nice_levels(Z: np.ndarray, target: int = 7) -> list[float]:
    """Round-number contour levels spanning the finite values of ``Z``."""
    finite = Z[np.isfinite(Z)]
    if finite.size == 0:
        return []
    lo, hi = float(finite.min()), float(finite.max())
    if lo == hi:
        return [lo]
    raw = (hi - lo) / target
    mag = 10.0 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1.0, 2.0, 2.5, 5.0, 10.0) if raw <= m * mag)
    first = math.ceil(lo / step) * step
    return [float(np.round(v, 10)) for v in np.arange(first, hi + step * 1e-9, step)]


def _iso_segments(
    xs: np.ndarray, ys: np.ndarray, Z: np.ndarray, level: float
) -> list[list[list[float]]]:
    """Marching-squares line segments of the level set of ``Z`` (indexed [x, y]).

    Cells with any non-finite corner are skipped, so infeasible regions simply
    interrupt the contour lines.
    """

    def interp(pa, pb, va, vb):
        s = 0.5 if vb == va else (level - va) / (vb - va)
        return [float(pa[0] + s * (pb[0] - pa[0])), float(pa[1] + s * (pb[1] - pa[1]))]

    segments: list[list[list[float]]] = []
    for i in range(len(xs) - 1):
        for j in range(len(ys) - 1):
            v00, v10 = Z[i, j], Z[i + 1, j]
            v01, v11 = Z[i, j + 1], Z[i + 1, j + 1]
            corners = (v00, v10, v11, v01)
            if not all(np.isfinite(corners)):
                continue
            idx = sum(1 << k for k, v in enumerate(corners) if v > level)
            if idx in (0, 15):
                continue
            x0, x1, y0, y1 = xs[i], xs[i + 1], ys[j], ys[j + 1]
            edges = {
                "bottom": interp((x0, y0), (x1, y0), v00, v10),
                "right": interp((x1, y0), (x1, y1), v10, v11),
                "top": interp((x0, y1), (x1, y1), v01, v11),
                "left": interp((x0, y0), (x0, y1), v00, v01),
            }
            table = {
                1: [("left", "bottom")],
                2: [("bottom", "right")],
                3: [("left", "right")],
                4: [("right", "top")],
                6: [("bottom", "top")],
                7: [("left", "top")],
                8: [("left", "top")],
                9: [("bottom", "top")],
                11: [("right", "top")],
                12: [("left", "right")],
                13: [("bottom", "right")],
                14: [("left", "bottom")],
            }
            if idx in (5, 10):
                center_above = (v00 + v10 + v01 + v11) / 4.0 > level
                if idx == 5:
                    pairs = (
                        [("left", "top"), ("bottom", "right")]
                        if center_above
                        else [("left", "bottom"), ("right", "top")]
                    )
                else:
                    pairs = (
                        [("left", "bottom"), ("right", "top")]
                        if center_above
                        else [("left", "top"), ("bottom", "right")]
                    )
            else:
                pairs = table[idx]
            for ea, eb in pairs:
                segments.append([edges[ea], edges[eb]])
    return segments
