"""Dense regression kernels: trimmed mean, OLS and center-penalized LASSO.

All functions are pure; arrays are never modified in place.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConvergenceFailure, InvalidInput, InvalidTrim, SingularDesign

SINGULAR_TOL = 1e-10
LASSO_UPDATE_TOL = 1e-8
LASSO_KKT_TOL = 1e-7
LASSO_MAX_SWEEPS = 10_000

# guards floor(N * omega) against products like 0.29 * 100 = 28.999999999999996
_FLOOR_EPS = 1e-9


def trim_count(n: int, omega: float) -> int:
    """Number of samples removed from *each* end: ``floor(n * omega)``."""
    if not 0.0 <= omega < 0.5:
        raise InvalidTrim(f"trim fraction must lie in [0, 1/2), got {omega!r}")
    k = int(math.floor(n * omega + _FLOOR_EPS))
    if n - 2 * k < 1:
        raise InvalidTrim(f"trimming {k} from each end of {n} samples leaves nothing")
    return k


def max_trim_count(n: int) -> int:
    """Largest per-end trim count that keeps at least one sample."""
    return (n - 1) // 2


def trimmed_mean(samples, omega: float) -> float:
    """Mean after dropping the ``floor(N*omega)`` smallest and largest samples.

    >>> trimmed_mean([1, 2, 3, 4, 100], 0.2)
    3.0
    """
    z = np.asarray(samples, dtype=float).ravel()
    if z.size == 0:
        raise InvalidInput("trimmed_mean of an empty sample")
    if not np.all(np.isfinite(z)):
        raise InvalidInput("trimmed_mean requires finite samples")
    k = trim_count(z.size, omega)
    return float(_trimmed_mean_sorted(np.sort(z, kind="stable"), k))


def trimmed_mean_columns(samples: np.ndarray, k: int) -> np.ndarray:
    """Column-wise trimmed mean of an ``(N, d)`` array, dropping ``k`` per end."""
    z = np.asarray(samples, dtype=float)
    if z.ndim != 2 or z.shape[0] == 0:
        raise InvalidInput("expected a non-empty (N, d) array")
    if k < 0 or z.shape[0] - 2 * k < 1:
        raise InvalidTrim(f"cannot trim {k} per end from {z.shape[0]} rows")
    return _trimmed_mean_sorted(np.sort(z, axis=0, kind="stable"), k)


def _trimmed_mean_sorted(z, k):
    # anchored at the smallest retained value so constant blocks come back bit-exact
    n = z.shape[0]
    kept = z[k : n - k]
    anchor = kept[0]
    return anchor + (kept - anchor).mean(axis=0)


def _check_xy(X, Y):
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or X.shape[1] < 1:
        raise InvalidInput(f"design matrix must be 2-D with d >= 1, got shape {X.shape}")
    if Y.ndim != 1 or Y.shape[0] != X.shape[0]:
        raise InvalidInput(f"response length {Y.shape} does not match design rows {X.shape[0]}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise InvalidInput("design and response must be finite")
    return X, Y


def ols_fit(X, Y, singular_tol: float = SINGULAR_TOL) -> np.ndarray:
    """Least-squares coefficients ``(X'X)^{-1} X'Y``.

    Raises
    ------
    SingularDesign
        If ``n < d`` or the smallest eigenvalue of ``X'X / n`` is below
        ``singular_tol``.
    """
    X, Y = _check_xy(X, Y)
    n, d = X.shape
    if n < d:
        raise SingularDesign(f"{n} samples cannot identify {d} coefficients", min_eigenvalue=0.0)
    gram = X.T @ X / n
    lam_min = float(np.linalg.eigvalsh(gram)[0])
    if lam_min < singular_tol:
        raise SingularDesign(
            f"smallest eigenvalue of sample covariance is {lam_min:.3g}", min_eigenvalue=lam_min
        )
    return np.linalg.solve(gram, X.T @ Y / n)


@dataclass(frozen=True)
class LassoInfo:
    sweeps: int
    kkt_residual: float
    converged: bool


def lasso_objective(X, Y, lam, center, beta) -> float:
    """``(1/n)||X beta - Y||^2 + lam * ||beta - center||_1``."""
    X = np.asarray(X, dtype=float)
    r = X @ beta - Y
    return float(r @ r / X.shape[0] + lam * np.abs(np.asarray(beta) - center).sum())


def lasso_kkt_residual(X, Y, lam, center, beta) -> float:
    """Max violation of the subgradient optimality conditions at ``beta``."""
    X, Y = _check_xy(X, Y)
    n = X.shape[0]
    gamma = np.asarray(beta, dtype=float) - center
    grad = 2.0 * X.T @ (X @ beta - Y) / n
    return float(_kkt(grad, gamma, lam))


def lasso_fit(
    X,
    Y,
    lam: float,
    center=None,
    *,
    warm_start=None,
    tol: float = LASSO_UPDATE_TOL,
    kkt_tol: float = LASSO_KKT_TOL,
    max_sweeps: int = LASSO_MAX_SWEEPS,
    return_info: bool = False,
    strict: bool = True,
):
    """Minimize ``(1/n)||X b - Y||^2 + lam * ||b - center||_1``.

    Cyclic coordinate descent on ``g = b - center`` against the shifted
    response ``Y - X center``. Stops when the largest coordinate move in a
    sweep is below ``tol`` or the KKT residual is below ``kkt_tol``.

    With ``strict=False`` the last iterate is returned when the sweep cap is
    hit (check ``LassoInfo.converged``) instead of raising
    ``ConvergenceFailure``.
    """
    X, Y = _check_xy(X, Y)
    n, d = X.shape
    if n == 0:
        raise InvalidInput("lasso_fit needs at least one sample")
    if not (np.isfinite(lam) and lam >= 0):
        raise InvalidInput(f"penalty must be a finite non-negative number, got {lam!r}")
    center = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    if center.shape != (d,) or not np.all(np.isfinite(center)):
        raise InvalidInput(f"center must be a finite vector of length {d}")

    gram = X.T @ X / n
    corr = X.T @ (Y - X @ center) / n
    if warm_start is None:
        gamma0 = np.zeros(d)
    else:
        gamma0 = np.asarray(warm_start, dtype=float) - center
    gamma, sweeps, kkt, converged = _coordinate_descent(
        gram, corr, float(lam), gamma0, int(max_sweeps), float(tol), float(kkt_tol)
    )
    beta = center + gamma
    if not converged and strict:
        raise ConvergenceFailure(
            f"LASSO did not converge in {max_sweeps} sweeps (KKT residual {kkt:.3g})",
            kkt_residual=kkt,
            iterations=sweeps,
            beta=beta,
        )
    if return_info:
        return beta, LassoInfo(sweeps=sweeps, kkt_residual=kkt, converged=converged)
    return beta


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


@njit(cache=True)
def _kkt(grad, gamma, lam):
    worst = 0.0
    for i in range(gamma.shape[0]):
        if gamma[i] > 0:
            v = abs(grad[i] + lam)
        elif gamma[i] < 0:
            v = abs(grad[i] - lam)
        else:
            v = abs(grad[i]) - lam
        if v > worst:
            worst = v
    return worst


@njit(cache=True)
def _coordinate_descent(gram, corr, lam, gamma0, max_sweeps, tol, kkt_tol):
    # objective in gamma: g'G g - 2 c'g + lam |g|_1 (+ const); grad = 2 (G g - c)
    d = gram.shape[0]
    gamma = gamma0.copy()
    resid = gram @ gamma - corr
    half = 0.5 * lam
    grad = np.empty(d)
    kkt = np.inf
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        max_move = 0.0
        for i in range(d):
            gii = gram[i, i]
            if gii <= 0.0:
                new = 0.0
            else:
                z = gii * gamma[i] - resid[i]
                if z > half:
                    new = (z - half) / gii
                elif z < -half:
                    new = (z + half) / gii
                else:
                    new = 0.0
            delta = new - gamma[i]
            if delta != 0.0:
                for r in range(d):
                    resid[r] += gram[r, i] * delta
                gamma[i] = new
                if abs(delta) > max_move:
                    max_move = abs(delta)
        for r in range(d):
            grad[r] = 2.0 * resid[r]
        kkt = _kkt(grad, gamma, lam)
        if max_move < tol or kkt < kkt_tol:
            return gamma, sweeps, kkt, True
    return gamma, sweeps, kkt, False
