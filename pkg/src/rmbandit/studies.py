"""Monte-Carlo studies of the static estimators.

``estimator_errors`` compares the robust estimator with its baselines on a
poorly-aligned task family. ``data_poor_errors`` tracks how the error of a
data-poor target scales with dimension when a data-rich neighbor is available.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SingularDesign
from .linreg import lasso_fit, ols_fit
from .multitask import (
    EstimatorHyper,
    TaskDataset,
    corollary_lambda,
    fit_averaging,
    fit_averaging_multitask,
    fit_pooling,
    fit_robust_multitask,
    l1_error,
)

STATIC_ESTIMATORS = ("robust", "averaging_multitask", "averaging", "pooling", "independent")


def random_shared(d: int, rng: np.random.Generator) -> np.ndarray:
    """Standard normal vector normalized to unit l1 norm."""
    v = rng.standard_normal(d)
    return v / np.abs(v).sum()


def poorly_aligned_params(N, d, s, rng, bias_range=(-0.5, 0.5)) -> np.ndarray:
    """``(N, d)`` parameters where task ``j`` deviates on its own block of ``s`` coordinates.

    Blocks wrap around when ``N * s > d``; every coordinate then deviates in
    at most ``ceil(N s / d)`` tasks.
    """
    B = np.tile(random_shared(d, rng), (N, 1))
    for j in range(N):
        cols = (np.arange(s) + j * s) % d
        B[j, cols] += rng.uniform(*bias_range, s)
    return B


def clipped_gaussian(n, d, x_max, rng) -> np.ndarray:
    return np.clip(rng.standard_normal((n, d)), -x_max, x_max)


def _tasks(B, n, sigma, x_max, rng):
    tasks = []
    for j, beta in enumerate(B):
        X = clipped_gaussian(n, B.shape[1], x_max, rng)
        tasks.append(TaskDataset(j, X, X @ beta + sigma * rng.standard_normal(n)))
    return tasks


def estimator_errors(
    N: int, d: int, s: int, n: int, sigma: float, rng: np.random.Generator,
    *, x_max: float = 1.0, omega: float | None = None, bias_range=(-0.5, 0.5),
) -> dict:
    """Mean l1 error across tasks of every static estimator on one draw."""
    B = poorly_aligned_params(N, d, s, rng, bias_range)
    tasks = _tasks(B, n, sigma, x_max, rng)
    omega = math.sqrt(s / d) if omega is None else omega
    lam = {j: corollary_lambda(sigma, x_max, n, d) for j in range(N)}
    rm = fit_robust_multitask(tasks, EstimatorHyper(lam, omega))
    am = fit_averaging_multitask(tasks, lam)
    avg = fit_averaging(tasks)
    pool = fit_pooling(tasks)

    def mean_err(est):
        return float(np.mean([l1_error(est(j), B[j]) for j in range(N)]))

    return {
        "robust": mean_err(lambda j: rm.per_instance[j]),
        "averaging_multitask": mean_err(lambda j: am.per_instance[j]),
        "averaging": mean_err(lambda j: avg),
        "pooling": mean_err(lambda j: pool),
        "independent": mean_err(lambda j: rm.ols[j]),
    }


def _large_ols(beta, n, sigma, x_max, rng, chunk_cells=2_000_000):
    # accumulates X'X and X'Y in chunks so n * d never sits in memory at once
    d = beta.shape[0]
    G = np.zeros((d, d))
    b = np.zeros(d)
    chunk = max(1, chunk_cells // d)
    done = 0
    while done < n:
        m = min(chunk, n - done)
        X = clipped_gaussian(m, d, x_max, rng)
        Y = X @ beta + sigma * rng.standard_normal(m)
        G += X.T @ X
        b += X.T @ Y
        done += m
    return np.linalg.solve(G, b)


@dataclass(frozen=True)
class DataPoorDraw:
    robust: float
    independent: float  # nan when the target's own OLS is undefined


def data_poor_errors(
    d: int, s: int, n_target: int, sigma: float, rng: np.random.Generator,
    *, x_max: float = 1.0, neighbor_factor: int | None = None, bias_range=(-0.5, 0.5),
) -> DataPoorDraw:
    """Error of the target estimate when a neighbor has ``d^2 n_target`` samples.

    The target is left out of the trimmed mean, so its center is the
    neighbor's OLS estimate.
    """
    shared = random_shared(d, rng)
    delta = np.zeros(d)
    delta[rng.choice(d, s, replace=False)] = rng.uniform(*bias_range, s)
    target = shared + delta
    X = clipped_gaussian(n_target, d, x_max, rng)
    Y = X @ target + sigma * rng.standard_normal(n_target)
    n_neighbor = (d * d if neighbor_factor is None else neighbor_factor) * n_target
    center = _large_ols(shared, n_neighbor, sigma, x_max, rng)
    lam = corollary_lambda(sigma, x_max, n_target, d)
    robust = l1_error(lasso_fit(X, Y, lam, center), target)
    try:
        independent = l1_error(ols_fit(X, Y), target)
    except SingularDesign:
        independent = float("nan")
    return DataPoorDraw(robust, independent)


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` on ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])
