"""Entropy balancing: direct weight estimation by dual Newton descent.

One group is reweighted so its Hajek-weighted constraint-column means hit the
target group's means exactly. The weights solve a maximum-entropy program
whose dual is the smooth convex function log sum exp(-lambda . c_i) over the
reweighted group, with c_i the constraint columns centered at their targets;
its gradient is the (negated) weighted constraint violation, so driving the
gradient to zero is exactly achieving balance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, softmax

from ..dataset import DesignMatrix
from ..weights import Estimand, WeightSet
from .logistic import _as_matrix


@dataclass
class EbSolve:
    """Dual solution for one reweighted group."""

    lambdas: np.ndarray
    converged: bool
    max_violation: float
    iterations: int


@dataclass
class EbFit:
    """Per-group dual solutions; ATE reweights both groups toward the
    full-sample targets, ATT/ATC reweight a single group."""

    solves: dict[str, EbSolve]
    moment_order: int

    @property
    def converged(self) -> bool:
        return all(s.converged for s in self.solves.values())

    @property
    def max_violation(self) -> float:
        return max(s.max_violation for s in self.solves.values())


def dual_value(lmbda: np.ndarray, C: np.ndarray) -> float:
    """log sum_i exp(-lambda . c_i)."""
    return float(logsumexp(-C @ lmbda))


def dual_gradient(lmbda: np.ndarray, C: np.ndarray) -> np.ndarray:
    """-E_w[c] where w is the softmax of -lambda . c_i."""
    w = softmax(-C @ lmbda)
    return -C.T @ w


def dual_hessian(lmbda: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Weighted covariance of the constraint columns (positive semidefinite)."""
    w = softmax(-C @ lmbda)
    mu = C.T @ w
    D = C - mu
    return (D * w[:, None]).T @ D


def eb_solve(
    columns: np.ndarray,
    targets: np.ndarray,
    names: list[str] | None = None,
    tol: float = 1e-8,
    max_iter: int = 200,
) -> tuple[EbSolve, np.ndarray]:
    """Reweight the rows of ``columns`` so each weighted column mean equals its
    target; returns (solution, weights normalized to mean 1).

    Targets strictly outside a column's observed range are infeasible and
    raise immediately naming the constraint; subtler infeasibility surfaces as
    non-convergence with the residual magnitude reported.
    """
    C0 = np.asarray(columns, dtype=float)
    if C0.ndim == 1:
        C0 = C0[:, None]
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    if C0.shape[1] != targets.size:
        raise ValueError("one target per constraint column required")
    names = names or [f"c{j}" for j in range(C0.shape[1])]

    for j in range(C0.shape[1]):
        lo, hi = C0[:, j].min(), C0[:, j].max()
        if targets[j] < lo or targets[j] > hi:
            raise ValueError(
                f"target moments outside convex hull: constraint {names[j]!r} "
                f"target {targets[j]:.6g} outside [{lo:.6g}, {hi:.6g}]"
            )

    C = C0 - targets
    lmbda = np.zeros(C.shape[1])
    value = dual_value(lmbda, C)
    grad = dual_gradient(lmbda, C)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        if np.abs(grad).max() < tol:
            break
        H = dual_hessian(lmbda, C)
        ridge = 1e-12 * max(1.0, float(np.trace(H)) / H.shape[0])
        try:
            step = np.linalg.solve(H + ridge * np.eye(H.shape[0]), -grad)
        except np.linalg.LinAlgError:
            step = -grad
        scale = 1.0
        for _ in range(50):
            cand = lmbda + scale * step
            cand_value = dual_value(cand, C)
            # Near the optimum the dual is flat to machine precision and a
            # strict decrease may be unattainable; accept the step anyway if
            # it already satisfies the gradient criterion.
            if cand_value < value or np.abs(dual_gradient(cand, C)).max() < tol:
                lmbda, value = cand, cand_value
                break
            scale *= 0.5
        else:
            break
        grad = dual_gradient(lmbda, C)

    max_violation = float(np.abs(grad).max())
    converged = bool(max_violation < tol)
    if not converged:
        raise ValueError(
            f"entropy balancing did not converge: max constraint violation "
            f"{max_violation:.3e} after {iterations} iterations"
        )
    w = softmax(-C @ lmbda)
    w = w / w.mean()
    return EbSolve(lambdas=lmbda, converged=converged, max_violation=max_violation, iterations=iterations), w


def fit_entropy_balancing(
    X,
    t: np.ndarray,
    estimand: Estimand,
    moment_order: int = 1,
    tol: float = 1e-8,
    max_iter: int = 200,
    method_id: str = "EB",
) -> tuple[EbFit, WeightSet]:
    """Entropy-balance the design columns of ``X`` for the estimand.

    ATT holds treated weights at 1 and reweights controls to the treated
    column means; ATC mirrors that; ATE solves twice, pulling each group to
    the full-sample means. ``X`` should be the expanded design of the
    requested moment order so that matching its columns matches raw moments
    1..k of each continuous confounder and every indicator mean.
    """
    M, names = _as_matrix(X)
    t = np.asarray(t)
    if M.shape[0] != t.size:
        raise ValueError("X and t must have the same number of rows")
    is_t = t == 1
    if not is_t.any() or is_t.all():
        raise ValueError("both treatment groups must be nonempty")

    w = np.ones(t.size)
    solves: dict[str, EbSolve] = {}
    if estimand is Estimand.ATT:
        plan = [("control", ~is_t, M[is_t].mean(axis=0))]
    elif estimand is Estimand.ATC:
        plan = [("treated", is_t, M[~is_t].mean(axis=0))]
    else:
        full = M.mean(axis=0)
        plan = [("treated", is_t, full), ("control", ~is_t, full)]

    total_iters = 0
    for group, mask, targets in plan:
        solve, gw = eb_solve(M[mask], targets, names=names, tol=tol, max_iter=max_iter)
        solves[group] = solve
        w[mask] = gw
        total_iters += solve.iterations

    fit = EbFit(solves=solves, moment_order=moment_order)
    ws = WeightSet(
        method_id=method_id,
        estimand=estimand,
        weights=w,
        provenance={
            "moment_order": moment_order,
            "converged": fit.converged,
            "max_violation": fit.max_violation,
            "iterations": total_iters,
        },
    )
    return fit, ws
