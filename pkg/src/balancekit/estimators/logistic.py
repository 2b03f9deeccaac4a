"""Maximum-likelihood logistic regression via iteratively reweighted least squares."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dataset import DesignMatrix

#: Linear-predictor magnitude beyond which fitted probabilities saturate.
SEPARATION_BOUND = 30.0

#: Score (log-likelihood gradient) sup-norm required at convergence.
SCORE_TOL = 1e-6


@dataclass
class LogisticFit:
    """IRLS fit: intercept-first coefficients plus convergence diagnostics."""

    coefficients: np.ndarray
    converged: bool
    iterations: int
    deviance: float
    separation: bool = False


def _as_matrix(X) -> tuple[np.ndarray, list[str]]:
    if isinstance(X, DesignMatrix):
        return X.matrix, list(X.names)
    X = np.asarray(X, dtype=float)
    return X, [f"x{j}" for j in range(X.shape[1])]


def _check_rank(X_aug: np.ndarray, names: list[str]):
    """QR with column pivoting; report the pivoted-out columns on deficiency."""
    from scipy.linalg import qr

    _, R, piv = qr(X_aug, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = diag.max() * max(X_aug.shape) * np.finfo(float).eps
    rank = int((diag > tol).sum())
    if rank < X_aug.shape[1]:
        cols = sorted(piv[rank:].tolist())
        labels = ["intercept" if j == 0 else names[j - 1] for j in cols]
        raise ValueError(f"design is rank deficient; collinear columns: {', '.join(labels)}")


def _deviance(eta: np.ndarray, t: np.ndarray) -> float:
    # 2*sum(log(1+exp(eta)) - t*eta), stable at large |eta|
    return float(2.0 * (np.logaddexp(0.0, eta) - t * eta).sum())


def fit_logistic_irls(
    X,
    t: np.ndarray,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> tuple[LogisticFit, np.ndarray]:
    """Fit Pr(T=1|X) = sigma(b0 + X b) by IRLS and return (fit, probabilities).

    Iterates until the deviance change drops below ``tol`` and the score
    sup-norm is below 1e-6, or ``max_iter`` is reached. Complete or
    quasi-complete separation (a linear predictor beyond +-30 while the
    deviance is still falling) stops the fit with ``separation=True`` and
    ``converged=False`` rather than chasing infinite coefficients.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    M, names = _as_matrix(X)
    t = np.asarray(t, dtype=float)
    if M.shape[0] != t.size:
        raise ValueError("X and t must have the same number of rows")
    tbar = t.mean()
    if not 0 < tbar < 1:
        raise ValueError("treatment vector must contain both classes")
    n = t.size
    X_aug = np.column_stack([np.ones(n), M])
    _check_rank(X_aug, names)

    beta = np.zeros(X_aug.shape[1])
    beta[0] = np.log(tbar / (1 - tbar))

    eta = X_aug @ beta
    dev = _deviance(eta, t)
    converged = False
    separation = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        p = 1.0 / (1.0 + np.exp(-eta))
        h = np.maximum(p * (1.0 - p), 1e-12)
        z = eta + (t - p) / h
        WX = X_aug * h[:, None]
        beta = np.linalg.solve(X_aug.T @ WX, WX.T @ z)
        eta = X_aug @ beta
        new_dev = _deviance(eta, t)
        improving = dev - new_dev > tol
        if np.any(np.abs(eta) > SEPARATION_BOUND) and improving:
            separation = True
            dev = new_dev
            break
        score = X_aug.T @ (t - 1.0 / (1.0 + np.exp(-eta)))
        if not improving and np.abs(score).max() < SCORE_TOL:
            converged = True
            dev = new_dev
            break
        dev = new_dev

    ps = 1.0 / (1.0 + np.exp(-eta))
    fit = LogisticFit(
        coefficients=beta,
        converged=converged,
        iterations=iterations,
        deviance=dev,
        separation=separation,
    )
    return fit, ps
