"""Multitask linear-regression estimators over a collection of per-instance datasets.

The robust estimator runs in two steps:

1. fit OLS on every instance and combine the estimates coordinate-wise
   with a trimmed mean, giving a shared center;
2. for every instance, fit a LASSO that penalizes the distance to that center.

Baselines (independent OLS, averaging, pooling and the plain-mean variant of
the two-step estimator) are provided for comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InvalidInput, InvalidTrim, SingularDesign
from .linreg import (
    lasso_fit,
    max_trim_count,
    ols_fit,
    trim_count,
    trimmed_mean_columns,
)

ALIGN_ATOL = 1e-9


@dataclass(frozen=True)
class TaskDataset:
    instance_id: int
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        Y = np.asarray(self.Y, dtype=float)
        if X.ndim != 2 or Y.ndim != 1 or X.shape[0] != Y.shape[0]:
            raise InvalidInput(
                f"task {self.instance_id}: X {X.shape} and Y {Y.shape} do not pair up"
            )
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass
class EstimatorHyper:
    """Hyperparameters of the robust multitask estimator.

    ``exclude_from_trim`` lists instances whose OLS estimate is left out of
    the shared-center trimmed mean (used for data-poor instances).
    """

    lambdas: Mapping[int, float]
    omega: float
    exclude_from_trim: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        for j, lam in self.lambdas.items():
            if not lam >= 0:
                raise InvalidInput(f"lambda for instance {j} must be non-negative, got {lam}")
        if not 0.0 <= self.omega:
            raise InvalidTrim(f"trim fraction must be non-negative, got {self.omega}")
        self.exclude_from_trim = frozenset(self.exclude_from_trim)

    @classmethod
    def from_corollary(
        cls,
        tasks: Sequence[TaskDataset],
        sigmas: Mapping[int, float],
        x_max: float,
        omega: float,
        delta: float = 0.05,
        exclude_from_trim: Iterable[int] = (),
    ) -> "EstimatorHyper":
        """Per-instance penalties ``sqrt(32 sigma^2 x_max^2 log(4d/delta) / n_j)``."""
        lambdas = {
            t.instance_id: corollary_lambda(sigmas[t.instance_id], x_max, t.n, t.d, delta)
            for t in tasks
        }
        return cls(lambdas=lambdas, omega=omega, exclude_from_trim=frozenset(exclude_from_trim))


def corollary_lambda(sigma: float, x_max: float, n: int, d: int, delta: float = 0.05) -> float:
    return math.sqrt(32.0 * sigma**2 * x_max**2 * math.log(4.0 * d / delta) / n)


@dataclass
class MultitaskFitResult:
    per_instance: dict
    shared: np.ndarray
    ols: dict
    trim_count: int
    trim_pool_size: int
    lasso_info: dict
    centers: dict = field(default_factory=dict)
    singular: tuple = ()


def _validate_tasks(tasks):
    if len(tasks) == 0:
        raise InvalidInput("need at least one task")
    ids = [t.instance_id for t in tasks]
    if len(set(ids)) != len(ids):
        raise InvalidInput(f"duplicate instance ids in {ids}")
    d = tasks[0].d
    for t in tasks:
        if t.d != d:
            raise InvalidInput(f"task {t.instance_id} has d={t.d}, expected {d}")
    return d


def _fit_all_ols(tasks, on_singular):
    ols, singular = {}, []
    for t in tasks:
        try:
            ols[t.instance_id] = ols_fit(t.X, t.Y)
        except SingularDesign as exc:
            if on_singular == "raise":
                raise SingularDesign(
                    f"instance {t.instance_id}: {exc}",
                    min_eigenvalue=exc.min_eigenvalue,
                    instance_id=t.instance_id,
                ) from exc
            singular.append(t.instance_id)
    return ols, tuple(singular)


def _shared_center(estimates, omega, clamp_trim):
    n = estimates.shape[0]
    if clamp_trim:
        k = min(int(math.floor(n * omega + 1e-9)), max_trim_count(n))
    else:
        k = trim_count(n, omega)
    return trimmed_mean_columns(estimates, k), k


def fit_robust_multitask(
    tasks: Sequence[TaskDataset],
    hyper: EstimatorHyper,
    *,
    subsets: Mapping[int, Iterable[int]] | None = None,
    on_singular: str = "raise",
    clamp_trim: bool = False,
    fallback_center=None,
    strict_lasso: bool = True,
) -> MultitaskFitResult:
    """Trimmed-mean shared center followed by per-instance center-penalized LASSO.

    Parameters
    ----------
    tasks : sequence of TaskDataset
    hyper : EstimatorHyper
    subsets : mapping instance id -> instance ids, optional
        Restricts the trimmed mean for each target instance to its neighbor set.
        Defaults to every task for every target.
    on_singular : {"raise", "exclude"}
        ``"exclude"`` drops instances with a singular OLS problem from the
        trimmed mean instead of failing; they are still LASSO-fitted.
    clamp_trim : bool
        Cap the per-end trim count at ``(N' - 1) // 2`` instead of raising
        when ``omega`` is too large for the pool.
    fallback_center : array or mapping instance id -> array, optional
        Center used when a target has no usable OLS estimate in its pool.
        Without it such a target raises ``InvalidTrim``.
    strict_lasso : bool
        When False, a LASSO that hits its sweep cap contributes its last
        iterate; ``lasso_info`` records which ones did.
    """
    if on_singular not in ("raise", "exclude"):
        raise InvalidInput(f"on_singular must be 'raise' or 'exclude', got {on_singular!r}")
    _validate_tasks(tasks)
    ids = [t.instance_id for t in tasks]
    missing = set(ids) - set(hyper.lambdas)
    if missing:
        raise InvalidInput(f"no lambda for instances {sorted(missing)}")

    ols, singular = _fit_all_ols(tasks, on_singular)

    def pool_for(target):
        members = ids if subsets is None else [i for i in ids if i in set(subsets[target])]
        return tuple(i for i in members if i in ols and i not in hyper.exclude_from_trim)

    cache = {}
    centers = {}
    k_used, pool_size = 0, 0
    for j in ids:
        pool = pool_for(j)
        if not pool:
            if fallback_center is None:
                raise InvalidTrim(f"instance {j}: no OLS estimates left for the trimmed mean")
            fb = fallback_center[j] if isinstance(fallback_center, Mapping) else fallback_center
            centers[j] = np.asarray(fb, dtype=float)
            continue
        if pool not in cache:
            stacked = np.vstack([ols[i] for i in pool])
            cache[pool] = _shared_center(stacked, hyper.omega, clamp_trim)
        centers[j], k = cache[pool]
        if len(pool) >= pool_size:
            k_used, pool_size = k, len(pool)

    per_instance, infos = {}, {}
    for t in tasks:
        j = t.instance_id
        beta, info = lasso_fit(
            t.X, t.Y, hyper.lambdas[j], centers[j], return_info=True, strict=strict_lasso
        )
        per_instance[j] = beta
        infos[j] = info

    if cache:
        shared = _largest_pool_center(cache)
    else:
        shared = centers[ids[0]]
    return MultitaskFitResult(
        per_instance=per_instance,
        shared=shared,
        ols=ols,
        trim_count=k_used,
        trim_pool_size=pool_size,
        lasso_info=infos,
        centers=centers,
        singular=singular,
    )


def _largest_pool_center(cache):
    pool = max(cache, key=len)
    return cache[pool][0]


def fit_independent(tasks: Sequence[TaskDataset]) -> dict:
    """Per-instance OLS with no sharing."""
    _validate_tasks(tasks)
    ols, _ = _fit_all_ols(tasks, "raise")
    return ols


def fit_averaging(tasks: Sequence[TaskDataset]) -> np.ndarray:
    """Arithmetic mean of the per-instance OLS estimates."""
    ols = fit_independent(tasks)
    return np.mean(np.vstack([ols[t.instance_id] for t in tasks]), axis=0)


def fit_pooling(tasks: Sequence[TaskDataset]) -> np.ndarray:
    """OLS on the data of all instances stacked together."""
    _validate_tasks(tasks)
    X = np.vstack([t.X for t in tasks])
    Y = np.concatenate([t.Y for t in tasks])
    try:
        return ols_fit(X, Y)
    except SingularDesign as exc:
        raise SingularDesign(f"pooled design: {exc}", min_eigenvalue=exc.min_eigenvalue) from exc


def fit_averaging_multitask(tasks: Sequence[TaskDataset], lambdas: Mapping[int, float]):
    """Two-step estimator with a plain mean (no trimming, no exclusions) in step one."""
    return fit_robust_multitask(tasks, EstimatorHyper(lambdas=dict(lambdas), omega=0.0))


def count_aligned(betas, shared, zeta: float, atol: float = ALIGN_ATOL):
    """Split coordinates into poorly- and well-aligned sets.

    Coordinate ``i`` is poorly aligned when fewer than a ``zeta`` fraction of
    the parameter vectors differ from ``shared`` there.

    Returns
    -------
    (poor, well) : tuple of sorted lists of 0-based coordinate indices
    """
    B = np.atleast_2d(np.asarray(betas, dtype=float))
    shared = np.asarray(shared, dtype=float)
    if B.shape[1] != shared.shape[0]:
        raise InvalidInput(f"parameter length {B.shape[1]} != shared length {shared.shape[0]}")
    if not zeta > 0:
        raise InvalidInput(f"zeta must be positive, got {zeta}")
    n = B.shape[0]
    differs = (np.abs(B - shared) > atol).sum(axis=0)
    poor_mask = differs / n < zeta
    return np.flatnonzero(poor_mask).tolist(), np.flatnonzero(~poor_mask).tolist()


def l1_error(estimate, truth) -> float:
    return float(np.abs(np.asarray(estimate) - np.asarray(truth)).sum())
