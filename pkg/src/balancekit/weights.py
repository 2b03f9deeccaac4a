"""Estimands and the conversion of propensity scores into balancing weights."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

#: Default clipping bound keeping propensity scores strictly inside (0, 1).
DEFAULT_CLIP_EPS = 1e-6


class Estimand(enum.Enum):
    """Population the treatment effect is averaged over."""

    ATE = "ATE"
    ATT = "ATT"
    ATC = "ATC"


@dataclass
class WeightSet:
    """Balancing weights for one method under one estimand.

    ``provenance`` carries fitted-model metadata (iterations, convergence,
    clipping counts) so the raw weight construction stays auditable.
    """

    method_id: str
    estimand: Estimand
    weights: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 1:
            raise ValueError("weights must be a 1-d vector")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")


def clip_ps(ps: np.ndarray, eps: float = DEFAULT_CLIP_EPS) -> tuple[np.ndarray, int]:
    """Map probabilities into [eps, 1-eps]; returns (clipped, count clipped)."""
    if not 0 < eps <= 0.01:
        raise ValueError("eps must be in (0, 0.01]")
    ps = np.asarray(ps, dtype=float)
    clipped = np.clip(ps, eps, 1.0 - eps)
    return clipped, int((clipped != ps).sum())


def ps_to_weights(
    ps: np.ndarray,
    t: np.ndarray,
    estimand: Estimand,
    method_id: str = "",
    provenance: dict | None = None,
) -> WeightSet:
    """Convert propensity scores to weights for the requested estimand.

    ATE: 1/p for treated, 1/(1-p) for control. ATT: 1 for treated, p/(1-p) for
    control. ATC: (1-p)/p for treated, 1 for control. Scores must be strictly
    inside (0, 1); clip upstream via :func:`clip_ps`.
    """
    ps = np.asarray(ps, dtype=float)
    t = np.asarray(t)
    if ps.shape != t.shape:
        raise ValueError("ps and t must have the same length")
    if np.any(ps <= 0) or np.any(ps >= 1):
        raise ValueError("propensity scores must lie strictly in (0, 1); clip first")
    is_t = t == 1
    if estimand is Estimand.ATE:
        w = np.where(is_t, 1.0 / ps, 1.0 / (1.0 - ps))
    elif estimand is Estimand.ATT:
        w = np.where(is_t, 1.0, ps / (1.0 - ps))
    elif estimand is Estimand.ATC:
        w = np.where(is_t, (1.0 - ps) / ps, 1.0)
    else:
        raise ValueError(f"unknown estimand {estimand!r}")
    return WeightSet(
        method_id=method_id,
        estimand=estimand,
        weights=w,
        provenance=dict(provenance or {}),
    )


def normalize_weights(ws: WeightSet, t: np.ndarray) -> WeightSet:
    """Rescale weights to mean 1 within each treatment group.

    Every downstream balance or effect statistic is invariant to this
    rescaling; it exists for display and export.
    """
    t = np.asarray(t)
    w = ws.weights.copy()
    for g in (0, 1):
        mask = t == g
        if not mask.any():
            continue
        mean = w[mask].mean()
        if not mean > 0:
            raise ValueError(f"group {g} has zero total weight")
        w[mask] = w[mask] / mean
    return WeightSet(
        method_id=ws.method_id,
        estimand=ws.estimand,
        weights=w,
        provenance={**ws.provenance, "normalized": True},
    )


@dataclass
class PsOverlap:
    """Shared-bin propensity histograms per group with a disjoint-support flag."""

    bin_edges: np.ndarray
    treated_counts: np.ndarray
    control_counts: np.ndarray
    treated_min: float
    treated_max: float
    control_min: float
    control_max: float
    disjoint: bool

    def to_dict(self) -> dict:
        return {
            "bin_edges": self.bin_edges.tolist(),
            "treated_counts": self.treated_counts.tolist(),
            "control_counts": self.control_counts.tolist(),
            "treated_min": self.treated_min,
            "treated_max": self.treated_max,
            "control_min": self.control_min,
            "control_max": self.control_max,
            "disjoint": self.disjoint,
        }


def ps_overlap_summary(ps: np.ndarray, t: np.ndarray, bins: int = 20) -> PsOverlap:
    """Histogram the propensity scores per group over shared bin edges."""
    ps = np.asarray(ps, dtype=float)
    t = np.asarray(t)
    if ps.shape != t.shape:
        raise ValueError("ps and t must have the same length")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    lo, hi = float(ps.min()), float(ps.max())
    if hi == lo:
        hi = lo + 1e-12
    edges = np.linspace(lo, hi, bins + 1)
    pt, pc = ps[t == 1], ps[t == 0]
    ht, _ = np.histogram(pt, bins=edges)
    hc, _ = np.histogram(pc, bins=edges)
    disjoint = bool(pt.min() > pc.max() or pc.min() > pt.max())
    return PsOverlap(
        bin_edges=edges,
        treated_counts=ht,
        control_counts=hc,
        treated_min=float(pt.min()),
        treated_max=float(pt.max()),
        control_min=float(pc.min()),
        control_max=float(pc.max()),
        disjoint=disjoint,
    )
