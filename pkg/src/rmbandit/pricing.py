"""Multitask dynamic pricing with square-numbered price experimentation.

Demand at instance ``j`` for context ``x`` and price ``p`` is
``x'b0_j + p * x'b1_j + noise``; revenue is ``p`` times expected demand.
Forced periods charge one of two experimental prices; the remaining
periods charge the revenue-maximizing price under the current estimates.
Estimates are refit at global times ``N (E^2 + 1)`` from the forced
observations collected so far.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bandit import LassoFitter, OLSFitter
from .environment import RegretTrace, sample_arrival, stream_rngs
from .errors import InvalidConfig, InvalidInput, RMBanditError
from .multitask import EstimatorHyper, TaskDataset, fit_robust_multitask


@dataclass
class PricingModel:
    beta0: np.ndarray  # (N, d) baseline demand
    beta1: np.ndarray  # (N, d) price sensitivity
    p_min: float = 0.0
    p_max: float = 1000.0
    experimental_prices: tuple = (200.0, 600.0)

    def __post_init__(self):
        self.beta0 = np.atleast_2d(np.asarray(self.beta0, dtype=float))
        self.beta1 = np.atleast_2d(np.asarray(self.beta1, dtype=float))
        if self.beta0.shape != self.beta1.shape:
            raise InvalidConfig(f"beta0 {self.beta0.shape} and beta1 {self.beta1.shape} differ")
        p1, p2 = self.experimental_prices
        if not self.p_min < p1 < p2 < self.p_max:
            raise InvalidConfig(
                f"need p_min < p1 < p2 < p_max, got {self.p_min}, {p1}, {p2}, {self.p_max}"
            )

    @property
    def N(self) -> int:
        return self.beta0.shape[0]

    @property
    def d(self) -> int:
        return self.beta0.shape[1]

    @property
    def stacked(self) -> np.ndarray:
        """``(N, 2d)`` parameters ``[b0; b1]``."""
        return np.hstack([self.beta0, self.beta1])


def is_forced_period(arrival_count: int) -> int | None:
    """Experiment index for the ``arrival_count``-th arrival at an instance.

    Returns 1 at perfect squares, 2 one past a perfect square, else None.
    """
    if arrival_count < 1:
        raise InvalidInput(f"arrival counts start at 1, got {arrival_count}")
    root = math.isqrt(arrival_count)
    if root * root == arrival_count:
        return 1
    root = math.isqrt(arrival_count - 1)
    if root >= 1 and root * root == arrival_count - 1:
        return 2
    return None


def update_times(N: int, T: int) -> np.ndarray:
    """Global 1-based refit times ``N (E^2 + 1)`` up to ``T``."""
    out = []
    E = 1
    while N * (E * E + 1) <= T:
        out.append(N * (E * E + 1))
        E += 1
    return np.asarray(out, dtype=int)


def optimal_price(x, beta0_hat, beta1_hat, p_min: float, p_max: float) -> float:
    """Revenue-maximizing price under the estimated demand, clamped to bounds.

    A non-concave estimate (``x'b1 >= 0``) makes revenue nondecreasing in price,
    so ``p_max`` is returned.
    """
    x = np.asarray(x, dtype=float)
    a = float(x @ np.asarray(beta0_hat, dtype=float))
    b = float(x @ np.asarray(beta1_hat, dtype=float))
    if b >= 0.0:
        return float(p_max)
    return float(min(max(a / (-2.0 * b), p_min), p_max))


def optimal_prices(X, beta0, beta1, p_min, p_max) -> np.ndarray:
    """Row-wise :func:`optimal_price` for ``X`` and matching parameter rows."""
    a = np.einsum("nd,nd->n", X, beta0)
    b = np.einsum("nd,nd->n", X, beta1)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(b < 0.0, a / (-2.0 * b), p_max)
    return np.clip(p, p_min, p_max)


def revenue(x, beta0, beta1, p) -> float:
    x = np.asarray(x, dtype=float)
    return float(p * (x @ beta0 + p * (x @ beta1)))


def generate_pricing_model(
    N: int,
    d: int,
    s: int,
    rng: np.random.Generator,
    *,
    base_demand: float = 10.0,
    base_slope: float = -0.02,
    p_min: float = 0.0,
    p_max: float = 1000.0,
    experimental_prices=(200.0, 600.0),
) -> PricingModel:
    """Random model whose true optimal prices are interior for contexts in ``[0,1]`` with an intercept.

    Coordinate 0 is the intercept. Instance 0 carries the shared parameters;
    others add biases on ``s`` random non-intercept coordinates.
    """
    if d < 2 or not 0 <= s <= d - 1:
        raise InvalidConfig(f"need d >= 2 and 0 <= s <= d-1, got d={d}, s={s}")
    m = d - 1
    b0 = np.concatenate([[base_demand], rng.uniform(0.0, 0.5 * base_demand / m, m)])
    b1 = np.concatenate([[base_slope], rng.uniform(0.5 * base_slope / m, 0.0, m)])
    beta0 = np.tile(b0, (N, 1))
    beta1 = np.tile(b1, (N, 1))
    for j in range(1, N):
        sup = 1 + rng.choice(m, size=s, replace=False)
        beta0[j, sup] += rng.uniform(-0.25, 0.25, s) * base_demand / m
        beta1[j, sup] += rng.uniform(-0.25, 0.25, s) * abs(base_slope) / m
    return PricingModel(beta0, beta1, p_min, p_max, tuple(experimental_prices))


def sample_pricing_context(d: int, rng: np.random.Generator, size: int) -> np.ndarray:
    """Intercept followed by ``d-1`` uniform features on ``[0, 1]``."""
    X = rng.uniform(0.0, 1.0, (size, d))
    X[:, 0] = 1.0
    return X


class PricingEnv:
    """Pre-drawn arrivals, contexts and demand noise for one seed."""

    def __init__(self, model: PricingModel, T: int, *, sigma=0.0, probs=None, seed: int = 0):
        if T < 1:
            raise InvalidConfig(f"horizon must be >= 1, got {T}")
        self.model = model
        self.T = int(T)
        self.seed = seed
        N = model.N
        self.probs = np.full(N, 1.0 / N) if probs is None else np.asarray(probs, dtype=float)
        if self.probs.shape != (N,) or abs(self.probs.sum() - 1.0) > 1e-9:
            raise InvalidConfig("arrival probabilities must have one entry per instance and sum to 1")
        self.sigmas = np.broadcast_to(np.asarray(sigma, dtype=float), (N,)).copy()
        _, arr_rng, ctx_rng, noise_rng = stream_rngs(seed)
        self.arrivals = sample_arrival(self.probs, arr_rng, size=self.T)
        self.contexts = sample_pricing_context(model.d, ctx_rng, self.T)
        self.noise = noise_rng.standard_normal(self.T) * self.sigmas[self.arrivals]

    @property
    def N(self) -> int:
        return self.model.N

    def demand(self, idx, prices) -> np.ndarray:
        idx = np.asarray(idx)
        Z, X = self.arrivals[idx], self.contexts[idx]
        a = np.einsum("nd,nd->n", X, self.model.beta0[Z])
        b = np.einsum("nd,nd->n", X, self.model.beta1[Z])
        return a + np.asarray(prices) * b + self.noise[idx]

    def oracle_prices(self) -> np.ndarray:
        m = self.model
        Z = self.arrivals
        return optimal_prices(self.contexts, m.beta0[Z], m.beta1[Z], m.p_min, m.p_max)

    def regret(self, prices) -> np.ndarray:
        m = self.model
        Z, X = self.arrivals, self.contexts
        a = np.einsum("nd,nd->n", X, m.beta0[Z])
        b = np.einsum("nd,nd->n", X, m.beta1[Z])
        best = self.oracle_prices()
        prices = np.asarray(prices, dtype=float)
        r = best * (a + best * b) - prices * (a + prices * b)
        return np.maximum(r, 0.0)


@dataclass
class PricingConfig:
    zeta0: float = 0.0
    eta0: float = 0.0
    lambda0: float | Sequence[float] = 1e-3
    price_scale: float | None = None  # prices are divided by this inside the regression

    def lambdas(self, N: int) -> np.ndarray:
        lam = np.broadcast_to(np.asarray(self.lambda0, dtype=float), (N,)).copy()
        if np.any(lam < 0):
            raise InvalidConfig("lambda0 must be non-negative")
        return lam


def pricing_lambda(lambda0: float, d: int, n: int) -> float:
    """``lambda0 * n^{1/4} * sqrt(log(d n))`` for ``n`` forced observations."""
    return lambda0 * n**0.25 * math.sqrt(math.log(d * n))


def pricing_omega(zeta0: float, eta0: float, d: int, counts) -> float:
    pos = [c for c in counts if c > 0]
    if not pos:
        return zeta0
    return zeta0 + eta0 * math.sqrt(math.log(d * min(pos)))


class _RobustPricingFitter:
    name = "rmx"

    def __init__(self):
        self.notes: list[str] = []

    def __call__(self, tasks, lambdas, omega, previous):
        ids = [t.instance_id for t in tasks]
        res = fit_robust_multitask(
            tasks,
            EstimatorHyper(lambdas={j: lambdas[j] for j in ids}, omega=omega),
            on_singular="exclude",
            clamp_trim=True,
            fallback_center={j: previous[j] for j in ids},
            strict_lasso=False,
        )
        for j, info in res.lasso_info.items():
            if not info.converged:
                self.notes.append(f"instance {j}: LASSO stopped at {info.sweeps} sweeps")
        return res.per_instance


_FITTERS = {"rmx": _RobustPricingFitter, "ilsx": OLSFitter, "ilqx": LassoFitter}


def forced_schedule(arrivals: np.ndarray, N: int) -> np.ndarray:
    """Experiment index (1, 2) per step, 0 when the step is not forced."""
    counts = np.zeros(N, dtype=int)
    out = np.zeros(arrivals.shape[0], dtype=int)
    for t, j in enumerate(arrivals.tolist()):
        counts[j] += 1
        out[t] = is_forced_period(int(counts[j])) or 0
    return out


def run_pricing(kind: str, env: PricingEnv, config: PricingConfig | None = None) -> RegretTrace:
    """Run RMX (``kind="rmx"``) or an independent OLS/LASSO baseline (``"ilsx"``/``"ilqx"``).

    The trace's ``arms`` column holds the experiment index (0 for a policy
    price) and ``prices`` holds the charged prices.
    """
    if kind not in _FITTERS:
        raise InvalidConfig(f"unknown pricing algorithm {kind!r}")
    config = config or PricingConfig()
    model = env.model
    N, dx, T = model.N, model.d, env.T
    D = 2 * dx
    scale = float(config.price_scale or model.p_max)
    lam0 = config.lambdas(N)
    fitter = _FITTERS[kind]()
    p1, p2 = model.experimental_prices

    forced = forced_schedule(env.arrivals, N)
    prices = np.empty(T)
    prices[forced == 1] = p1
    prices[forced == 2] = p2
    Y = np.empty(T)

    estimates = np.zeros((N, D))
    fitted = np.zeros(N, dtype=bool)
    times = update_times(N, T)
    notes: list[str] = []
    history = []
    # 0-based segments [0, u1), [u1, u2), ...: time u is priced before its update
    bounds = [0, *times.tolist(), T]
    for seg, (lo, hi) in enumerate(zip(bounds[:-1], bounds[1:])):
        if hi > lo:
            idx = np.arange(lo, hi)
            free = idx[forced[idx] == 0]
            if free.size:
                Z = env.arrivals[free]
                p = optimal_prices(
                    env.contexts[free], estimates[Z, :dx], estimates[Z, dx:] / scale,
                    model.p_min, model.p_max,
                )
                p[~fitted[Z]] = model.p_max
                prices[free] = p
            Y[idx] = env.demand(idx, prices[idx])
        if seg == len(bounds) - 2:
            break
        u = hi  # 1-based update time; trains on forced times r < u
        sel = np.flatnonzero(forced[: u - 1] > 0)
        tasks, lambdas, counts = [], {}, []
        for j in range(N):
            rows = sel[env.arrivals[sel] == j]
            counts.append(rows.size)
            if rows.size == 0:
                continue
            X = env.contexts[rows]
            design = np.hstack([X, X * (prices[rows] / scale)[:, None]])
            tasks.append(TaskDataset(j, design, Y[rows]))
            lambdas[j] = pricing_lambda(lam0[j], D, rows.size)
        omega = pricing_omega(config.zeta0, config.eta0, D, counts)
        try:
            new = fitter(tasks, lambdas, omega, {j: estimates[j] for j in range(N)})
        except RMBanditError as exc:
            notes.append(f"update at t={u}: {exc}; estimates retained")
            new = {}
        for j, beta in new.items():
            estimates[j] = beta
            fitted[j] = True
        history.append({"t": int(u), "counts": counts, "omega": omega, "lambdas": dict(lambdas)})

    notes.extend(getattr(fitter, "notes", []))
    return RegretTrace(
        instances=env.arrivals.copy(),
        arms=forced,
        regret=env.regret(prices),
        algorithm=kind,
        seed=env.seed,
        notes=notes,
        prices=prices,
        diagnostics={"update_times": times, "history": history,
                     "estimates": estimates.copy(), "price_scale": scale},
    )


def run_rmx(env: PricingEnv, config: PricingConfig | None = None) -> RegretTrace:
    return run_pricing("rmx", env, config)
