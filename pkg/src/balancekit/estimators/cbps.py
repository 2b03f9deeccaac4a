"""Covariate balancing propensity scores: just-identified moment conditions.

The coefficient vector is chosen so the inverse-probability-weighted design
means (intercept column included) agree exactly between groups, rather than by
maximizing likelihood. With p+1 conditions for p+1 coefficients the system is
just identified, so the solve drives the balance residual to zero and the
Hajek-normalized weighted means of every design column match across groups by
construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dataset import DesignMatrix
from ..weights import Estimand
from .logistic import _as_matrix, _check_rank, fit_logistic_irls


@dataclass
class CbpsFit:
    """Solved balance system: coefficients with the residual diagnostics."""

    coefficients: np.ndarray
    moment_order: int
    residual_norm: float
    converged: bool
    iterations: int


def _moment_residual(X_aug, t, eta, estimand):
    """g(beta): mean over rows of the estimand's balance moment per column."""
    # trial steps can saturate the sigmoid; keep the ratios finite so the
    # damped line search sees a large-but-comparable residual norm
    p = np.clip(1.0 / (1.0 + np.exp(-eta)), 1e-12, 1.0 - 1e-12)
    if estimand is Estimand.ATE:
        r = t / p - (1 - t) / (1 - p)
    elif estimand is Estimand.ATT:
        r = t - (1 - t) * p / (1 - p)
    else:
        r = t * (1 - p) / p - (1 - t)
    return (X_aug * r[:, None]).mean(axis=0)


def _moment_jacobian(X_aug, t, eta, estimand):
    p = np.clip(1.0 / (1.0 + np.exp(-eta)), 1e-12, 1.0 - 1e-12)
    if estimand is Estimand.ATE:
        s = t * (1 - p) / p + (1 - t) * p / (1 - p)
    elif estimand is Estimand.ATT:
        s = (1 - t) * p / (1 - p)
    else:
        s = t * (1 - p) / p
    return -(X_aug * s[:, None]).T @ X_aug / X_aug.shape[0]


def fit_cbps(
    X,
    t: np.ndarray,
    estimand: Estimand,
    moment_order: int = 1,
    tol: float = 1e-8,
    max_iter: int = 200,
) -> tuple[CbpsFit, np.ndarray]:
    """Solve the balance moment conditions by damped Newton; returns (fit, ps).

    ``X`` should be the expanded design of the requested moment order. The
    solver warm-starts at the logistic MLE and halves the Newton step until
    the residual norm decreases. Convergence means sup-norm of the moment
    residual below ``tol``; failing that after ``max_iter`` raises.
    """
    M, names = _as_matrix(X)
    t = np.asarray(t, dtype=float)
    if M.shape[0] != t.size:
        raise ValueError("X and t must have the same number of rows")
    n = t.size
    X_aug = np.column_stack([np.ones(n), M])
    _check_rank(X_aug, names)

    mle, _ = fit_logistic_irls(X, t)
    beta = mle.coefficients.copy()

    eta = X_aug @ beta
    g = _moment_residual(X_aug, t, eta, estimand)
    gnorm = np.abs(g).max()
    iterations = 0
    for iterations in range(1, max_iter + 1):
        if gnorm < tol:
            break
        J = _moment_jacobian(X_aug, t, eta, estimand)
        try:
            step = np.linalg.solve(J, -g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -g, rcond=None)[0]
        scale = 1.0
        for _ in range(50):
            cand = beta + scale * step
            eta_c = X_aug @ cand
            g_c = _moment_residual(X_aug, t, eta_c, estimand)
            if np.abs(g_c).max() < gnorm:
                beta, eta, g, gnorm = cand, eta_c, g_c, np.abs(g_c).max()
                break
            scale *= 0.5
        else:
            break
    converged = bool(gnorm < tol)
    if not converged:
        raise ValueError(
            f"balance moment solve did not converge: residual norm {gnorm:.3e} after {iterations} iterations"
        )
    ps = 1.0 / (1.0 + np.exp(-eta))
    fit = CbpsFit(
        coefficients=beta,
        moment_order=moment_order,
        residual_norm=float(gnorm),
        converged=converged,
        iterations=iterations,
    )
    return fit, ps
