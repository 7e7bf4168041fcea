"""Batched multitask contextual bandit (RMBandit) and single-instance baselines.

Time is split into a forced-sampling batch followed by batches that double
in length. Within a batch every estimate is frozen, so the arm choices of a
whole batch are computed at once; refits happen only at batch boundaries and
use only the data of the batch that just ended.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .environment import MultitaskEnv, RegretTrace, score_trace
from .errors import InvalidConfig, RMBanditError, SingularDesign
from .linreg import lasso_fit, ols_fit
from .multitask import EstimatorHyper, TaskDataset, fit_robust_multitask

log = logging.getLogger(__name__)


# --- schedule -----------------------------------------------------------------


@dataclass(frozen=True)
class BatchSchedule:
    T: int
    q: float
    b0: int
    ends: tuple  # ends[m] = last (1-based) step of batch m; ends[0] closes the forced batch

    @property
    def M(self) -> int:
        return len(self.ends) - 1

    def bounds(self, m: int) -> tuple[int, int]:
        """0-based half-open step range ``[start, stop)`` of batch ``m``."""
        start = 0 if m == 0 else self.ends[m - 1]
        return start, self.ends[m]

    def batch_of(self, t: int) -> int:
        """Batch index of the 1-based step ``t``."""
        if not 1 <= t <= self.T:
            raise ValueError(f"step {t} outside [1, {self.T}]")
        return int(np.searchsorted(self.ends, t, side="left"))


def build_schedule(T: int, q: float) -> BatchSchedule:
    """Forced batch of ``ceil(q ln T)`` steps, then batches ``(2^{m-1} B0, 2^m B0]``.

    >>> s = build_schedule(40_000, 50)
    >>> s.b0, s.M
    (530, 7)
    """
    if T < 2 or not q > 0:
        raise InvalidConfig(f"need T >= 2 and q > 0, got T={T}, q={q}")
    base = q * math.log(T)
    if base < 1:
        raise InvalidConfig(f"q ln T = {base:.3g} < 1 leaves an empty forced batch")
    if base > T:
        raise InvalidConfig(f"q ln T = {base:.3g} exceeds the horizon T={T}")
    b0 = math.ceil(base)
    m_formula = max(0, math.ceil(math.log2(T / base)))
    ends = [min(b0, T)]
    for m in range(1, m_formula + 1):
        start = (2 ** (m - 1)) * b0
        if start >= T:
            break
        ends.append(min((2**m) * b0, T))
    return BatchSchedule(T=T, q=q, b0=b0, ends=tuple(ends))


# --- per-step policy pieces --------------------------------------------------


def forced_arm(arrival_count: int, K: int) -> int:
    """Round-robin arm for the ``arrival_count``-th visit (1-based) to an instance.

    Returns the 0-based arm ``arrival_count mod K``, i.e. one less than the
    1-based arm ``(count mod K) + 1``.
    """
    if arrival_count < 1:
        raise ValueError("arrival counts start at 1")
    return arrival_count % K


def filter_arms(x, forced_estimates, h: float) -> list[int]:
    """Arms whose forced-sample reward estimate is within ``h/2`` of the best."""
    scores = np.asarray(forced_estimates, dtype=float) @ np.asarray(x, dtype=float)
    return np.flatnonzero(scores >= scores.max() - h / 2.0).tolist()


def choose_arm(x, candidates, estimates, fallback=None) -> int:
    """Arg-max of the all-sample reward estimate over ``candidates``; lowest index wins ties.

    ``estimates`` is a ``(K, d)`` array or a mapping arm -> vector. Arms whose
    estimate is missing (absent key, ``None`` or NaN row) use ``fallback``.
    """
    x = np.asarray(x, dtype=float)
    best_arm, best = None, -np.inf
    for k in sorted(candidates):
        beta = estimates.get(k) if isinstance(estimates, Mapping) else estimates[k]
        if beta is None or np.any(np.isnan(beta)):
            if fallback is None:
                raise KeyError(f"no estimate for arm {k} and no fallback")
            beta = fallback[k]
        v = float(np.asarray(beta) @ x)
        if best_arm is None or v > best:
            best_arm, best = k, v
    return best_arm


def _batch_choices(X, forced, current, h):
    """Vectorized filter + arg-max for the steps of one instance in one batch."""
    f = X @ forced.T
    keep = f >= f.max(axis=1, keepdims=True) - h / 2.0
    a = X @ current.T
    a = np.where(keep, a, -np.inf)
    return np.argmax(a, axis=1)


def forced_arms(instances: np.ndarray, K: int) -> np.ndarray:
    """Round-robin arms for a run of arrivals starting from zero visits everywhere."""
    arms = np.empty(instances.shape[0], dtype=int)
    for j in np.unique(instances):
        idx = np.flatnonzero(instances == j)
        arms[idx] = np.arange(1, idx.size + 1) % K
    return arms


# --- configuration and hyperparameter paths ----------------------------------


def _per_instance(value, N, name):
    if isinstance(value, Mapping):
        out = np.array([float(value[j]) for j in range(N)])
    else:
        out = np.broadcast_to(np.asarray(value, dtype=float), (N,)).copy()
    if out.shape != (N,) or np.any(out < 0) or not np.all(np.isfinite(out)):
        raise InvalidConfig(f"{name} must be non-negative, one value or one per instance")
    return out


@dataclass
class BanditConfig:
    T: int
    N: int
    K: int
    d: int
    q: float
    h: float
    zeta0: float = 0.0
    eta0: float = 0.0
    zeta10: float = 0.0
    eta10: float = 0.0
    lambda0: float | Sequence[float] | Mapping = 0.02
    lambda10: float | Sequence[float] | Mapping = 0.02
    exclude_data_poor: int | None = None
    instance_subsets: Mapping[int, Sequence[int]] | None = None

    def __post_init__(self):
        if self.T < 1 or self.N < 1 or self.d < 1:
            raise InvalidConfig("T, N and d must be positive")
        if self.K < 1:
            raise InvalidConfig("K must be positive")
        if not (self.q > 0 and self.h > 0):
            raise InvalidConfig(f"q and h must be positive, got q={self.q}, h={self.h}")
        for name in ("zeta0", "eta0", "zeta10", "eta10"):
            if getattr(self, name) < 0:
                raise InvalidConfig(f"{name} must be non-negative")
        self.lambda0 = _per_instance(self.lambda0, self.N, "lambda0")
        self.lambda10 = _per_instance(self.lambda10, self.N, "lambda10")
        if self.exclude_data_poor is not None and not 0 <= self.exclude_data_poor < self.N:
            raise InvalidConfig(f"exclude_data_poor={self.exclude_data_poor} is not an instance")
        if self.instance_subsets is not None:
            subsets = {}
            for j in range(self.N):
                members = set(int(i) for i in self.instance_subsets.get(j, range(self.N)))
                members.add(j)
                subsets[j] = sorted(members)
            self.instance_subsets = subsets

    @property
    def omega0(self) -> float:
        return self.zeta0 + self.eta0


def all_sample_lambda(lambda10: float, d: int, n: int) -> float:
    """``lambda_{1,j,0} * sqrt(log(d n) / n)`` for an instance with ``n`` batch arrivals."""
    return lambda10 * math.sqrt(math.log(d * n) / n)


def all_sample_omega(zeta10: float, eta10: float, d: int, counts) -> float:
    """``zeta_{1,0} + eta_{1,0} sqrt(log(d * min_j n_j))`` over instances with data."""
    positive = [c for c in counts if c > 0]
    if not positive:
        return zeta10 + eta10
    return zeta10 + eta10 * math.sqrt(math.log(d * min(positive)))


@dataclass
class HyperPathState:
    omega0: float
    zeta1: list = field(default_factory=list)
    eta1: list = field(default_factory=list)
    omega1: list = field(default_factory=list)
    lambda1: list = field(default_factory=list)  # per batch: array over instances (nan = no data)

    def record(self, config: BanditConfig, counts) -> tuple[np.ndarray, float]:
        positive = [c for c in counts if c > 0]
        eta = config.eta10 * math.sqrt(math.log(config.d * min(positive))) if positive else config.eta10
        omega = config.zeta10 + eta
        lam = np.array(
            [
                all_sample_lambda(config.lambda10[j], config.d, c) if c > 0 else np.nan
                for j, c in enumerate(counts)
            ]
        )
        self.zeta1.append(config.zeta10)
        self.eta1.append(eta)
        self.omega1.append(omega)
        self.lambda1.append(lam)
        return lam, omega


# --- estimators plugged into the control loop ---------------------------------

Fitter = Callable[[Sequence[TaskDataset], Mapping[int, float], float, Mapping[int, np.ndarray]], dict]


class RobustMultitaskFitter:
    """Fits one arm across instances with the trimmed-mean + LASSO estimator.

    Instances with a singular OLS problem sit out the trimmed mean; targets
    with no usable OLS estimate in their pool are centered at their previous
    estimate.
    """

    name = "rmbandit"

    def __init__(self, exclude_from_trim=(), subsets=None):
        self.exclude = frozenset(exclude_from_trim)
        self.subsets = subsets
        self.notes: list[str] = []

    def __call__(self, tasks, lambdas, omega, previous):
        ids = [t.instance_id for t in tasks]
        hyper = EstimatorHyper(
            lambdas={j: lambdas[j] for j in ids},
            omega=omega,
            exclude_from_trim=self.exclude & set(ids),
        )
        subsets = None
        if self.subsets is not None:
            subsets = {j: [i for i in self.subsets[j] if i in ids] for j in ids}
        res = fit_robust_multitask(
            tasks,
            hyper,
            subsets=subsets,
            on_singular="exclude",
            clamp_trim=True,
            fallback_center={j: previous[j] for j in ids},
            strict_lasso=False,
        )
        for j, info in res.lasso_info.items():
            if not info.converged:
                self.notes.append(
                    f"instance {j}: LASSO stopped at {info.sweeps} sweeps, KKT {info.kkt_residual:.2g}"
                )
        return res.per_instance


class OLSFitter:
    """Independent per-instance least squares.

    Underdetermined or singular batches fall back to the minimum-norm
    least-squares solution.
    """

    name = "ols"

    def __call__(self, tasks, lambdas, omega, previous):
        out = {}
        for t in tasks:
            try:
                out[t.instance_id] = ols_fit(t.X, t.Y)
            except SingularDesign:
                out[t.instance_id] = np.linalg.lstsq(t.X, t.Y, rcond=None)[0]
        return out


class LassoFitter:
    """Independent per-instance LASSO shrunk toward zero."""

    name = "lasso"

    def __init__(self):
        self.notes: list[str] = []

    def __call__(self, tasks, lambdas, omega, previous):
        out = {}
        for t in tasks:
            beta, info = lasso_fit(t.X, t.Y, lambdas[t.instance_id], return_info=True, strict=False)
            if not info.converged:
                self.notes.append(
                    f"instance {t.instance_id}: LASSO stopped at {info.sweeps} sweeps, "
                    f"KKT {info.kkt_residual:.2g}"
                )
            out[t.instance_id] = beta
        return out


def _arm_tasks(X, Z, A, Y, k, N):
    tasks = []
    for j in range(N):
        sel = (Z == j) & (A == k)
        if sel.any():
            tasks.append(TaskDataset(j, X[sel], Y[sel]))
    return tasks


@dataclass
class BatchData:
    """Observations of one batch: contexts, instances, pulled arms, rewards."""

    X: np.ndarray
    Z: np.ndarray
    A: np.ndarray
    Y: np.ndarray


def end_of_batch_refit(
    batch: BatchData,
    lambdas,
    omega: float,
    previous: np.ndarray,
    fitter: Fitter,
    notes: list | None = None,
) -> np.ndarray:
    """Refit every (instance, arm) estimate from one batch of data.

    Pairs without data in the batch, and pairs whose fit fails, keep their
    entry of ``previous`` (shape ``(N, K, d)``).
    """
    N, K, _ = previous.shape
    out = previous.copy()
    for k in range(K):
        tasks = _arm_tasks(batch.X, batch.Z, batch.A, batch.Y, k, N)
        if not tasks:
            continue
        prev_k = {j: previous[j, k] for j in range(N)}
        try:
            fitted = fitter(tasks, {t.instance_id: lambdas[t.instance_id] for t in tasks}, omega, prev_k)
        except RMBanditError as exc:
            msg = f"arm {k}: refit failed ({exc}); previous estimates kept"
            log.warning(msg)
            if notes is not None:
                notes.append(msg)
            continue
        for j, beta in fitted.items():
            out[j, k] = beta
    return out


# --- control loop -------------------------------------------------------------


def simulate(
    env: MultitaskEnv,
    config: BanditConfig,
    fitter: Fitter,
    algorithm: str,
    *,
    forced_estimates: np.ndarray | None = None,
) -> RegretTrace:
    """Run the batched filter-then-greedy policy with a given estimator.

    ``forced_estimates`` (shape ``(N, K, d)``) replaces the estimates fitted on
    the forced batch; the forced batch itself is still played round-robin.
    """
    _check_compatible(env, config)
    sched = build_schedule(config.T, config.q)
    N, K, d = config.N, config.K, config.d
    Z, X = env.arrivals[: config.T], env.contexts[: config.T]
    arms = np.empty(config.T, dtype=int)
    rewards = np.empty(config.T)
    notes: list[str] = []
    path = HyperPathState(omega0=config.omega0)

    lo, hi = sched.bounds(0)
    arms[lo:hi] = forced_arms(Z[lo:hi], K)
    rewards[lo:hi] = env.rewards(np.arange(lo, hi), arms[lo:hi])

    if forced_estimates is not None:
        forced = np.array(forced_estimates, dtype=float, copy=True)
        if forced.shape != (N, K, d):
            raise InvalidConfig(f"forced_estimates must have shape {(N, K, d)}")
    else:
        batch = BatchData(X[lo:hi], Z[lo:hi], arms[lo:hi], rewards[lo:hi])
        forced = end_of_batch_refit(
            batch, dict(enumerate(config.lambda0)), config.omega0, np.zeros((N, K, d)), fitter, notes
        )
    forced.setflags(write=False)
    current = forced.copy()

    history = []
    for m in range(1, sched.M + 1):
        lo, hi = sched.bounds(m)
        zb = Z[lo:hi]
        for j in np.unique(zb):
            idx = np.flatnonzero(zb == j) + lo
            arms[idx] = _batch_choices(X[idx], forced[j], current[j], config.h)
        rewards[lo:hi] = env.rewards(np.arange(lo, hi), arms[lo:hi])
        if m == sched.M:
            break
        counts = np.bincount(zb, minlength=N)
        lam, omega = path.record(config, counts)
        batch = BatchData(X[lo:hi], zb, arms[lo:hi], rewards[lo:hi])
        current = end_of_batch_refit(batch, dict(enumerate(lam)), omega, current, fitter, notes)
        history.append(current)

    notes.extend(getattr(fitter, "notes", []))
    trace = score_trace(env, arms, algorithm=algorithm, notes=notes)
    trace.diagnostics = {
        "schedule": sched,
        "forced": forced,
        "all_sample": history,
        "hyper_path": path,
        "rewards": rewards,
    }
    return trace


def _check_compatible(env, config):
    if (env.N, env.K, env.d) != (config.N, config.K, config.d):
        raise InvalidConfig(
            f"environment (N,K,d)={(env.N, env.K, env.d)} does not match config "
            f"{(config.N, config.K, config.d)}"
        )
    if env.T < config.T:
        raise InvalidConfig(f"environment horizon {env.T} shorter than T={config.T}")


def run_rmbandit(env: MultitaskEnv, config: BanditConfig, *, forced_estimates=None) -> RegretTrace:
    exclude = () if config.exclude_data_poor is None else (config.exclude_data_poor,)
    fitter = RobustMultitaskFitter(exclude_from_trim=exclude, subsets=config.instance_subsets)
    return simulate(env, config, fitter, "rmbandit", forced_estimates=forced_estimates)


def run_baseline_bandit(kind: str, env: MultitaskEnv, config: BanditConfig) -> RegretTrace:
    """OLS-Bandit (``kind="ols"``) or LASSO-Bandit (``kind="lasso"``), one bandit per instance."""
    fitters = {"ols": OLSFitter, "lasso": LassoFitter}
    if kind not in fitters:
        raise InvalidConfig(f"unknown baseline {kind!r}; expected one of {sorted(fitters)}")
    return simulate(env, config, fitters[kind](), f"{kind}_bandit")
