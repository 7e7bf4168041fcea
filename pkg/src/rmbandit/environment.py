"""Synthetic multitask linear contextual bandit environment.

Arm ``k`` at instance ``j`` has parameter ``shared[k] + deltas[j, k]`` with
``||deltas[j, k]||_0 <= s``. Contexts are clipped standard normals and
rewards carry gaussian noise with an instance-specific scale.

Arms and instances are 0-based throughout the package.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidConfig

SUPPORT_ATOL = 1e-12

# order of the child streams spawned from the root seed; do not reorder
_STREAMS = ("truth", "arrivals", "contexts", "noise")


def stream_rngs(seed: int, n: int = len(_STREAMS)) -> list[np.random.Generator]:
    """Independent Philox generators derived from one root seed."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.Generator(np.random.Philox(c)) for c in children]


@dataclass
class EnvSpec:
    N: int
    K: int
    d: int
    s: int
    sigma: float | Sequence[float] = 0.05
    x_max: float = 1.0
    arrival_probs: Sequence[float] | None = None
    bias_range: tuple = (-0.5, 0.5)
    data_poor: tuple | None = None  # (instance id, traffic ratio of a regular instance to it)
    seed: int = 0

    def __post_init__(self):
        for name in ("N", "K", "d"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0 <= self.s <= self.d:
            raise InvalidConfig(f"sparsity s={self.s} must lie in [0, d={self.d}]")
        if not self.x_max > 0:
            raise InvalidConfig(f"x_max must be positive, got {self.x_max}")
        lo, hi = self.bias_range
        if lo > hi:
            raise InvalidConfig(f"bias_range {self.bias_range} is empty")
        sig = self.sigmas
        if sig.shape != (self.N,) or np.any(sig < 0):
            raise InvalidConfig("sigma must be a non-negative scalar or one value per instance")
        p = self.probs
        if np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-9:
            raise InvalidConfig(f"arrival probabilities must be positive and sum to 1, got {p}")

    @property
    def sigmas(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.sigma, dtype=float), (self.N,)).copy()

    @property
    def probs(self) -> np.ndarray:
        if self.arrival_probs is not None:
            if self.data_poor is not None:
                raise InvalidConfig("give either arrival_probs or data_poor, not both")
            p = np.asarray(self.arrival_probs, dtype=float)
            if p.shape != (self.N,):
                raise InvalidConfig(f"arrival_probs needs {self.N} entries, got {p.shape}")
            return p
        w = np.ones(self.N)
        if self.data_poor is not None:
            j, ratio = self.data_poor
            if not 0 <= j < self.N or not ratio > 0:
                raise InvalidConfig(f"bad data_poor setting {self.data_poor}")
            w[int(j)] = 1.0 / ratio
        return w / w.sum()

    def fingerprint(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, default=list)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class GroundTruth:
    shared: np.ndarray  # (K, d)
    deltas: np.ndarray  # (N, K, d)

    @property
    def arm_params(self) -> np.ndarray:
        return self.shared[None, :, :] + self.deltas

    @property
    def N(self) -> int:
        return self.deltas.shape[0]

    @property
    def K(self) -> int:
        return self.shared.shape[0]

    @property
    def d(self) -> int:
        return self.shared.shape[1]

    def to_dict(self) -> dict:
        deltas = []
        for j in range(self.N):
            for k in range(self.K):
                support = np.flatnonzero(self.deltas[j, k] != 0.0)
                deltas.append(
                    {
                        "instance": j,
                        "arm": k,
                        "support": support.tolist(),
                        "values": self.deltas[j, k, support].tolist(),
                    }
                )
        return {"N": self.N, "K": self.K, "d": self.d, "shared": self.shared.tolist(), "deltas": deltas}

    @classmethod
    def from_dict(cls, data: dict) -> "GroundTruth":
        shared = np.asarray(data["shared"], dtype=float).reshape(data["K"], data["d"])
        deltas = np.zeros((data["N"], data["K"], data["d"]))
        for entry in data["deltas"]:
            deltas[entry["instance"], entry["arm"], entry["support"]] = entry["values"]
        return cls(shared=shared, deltas=deltas)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "GroundTruth":
        return cls.from_dict(json.loads(Path(path).read_text()))


def generate_ground_truth(spec: EnvSpec, rng: np.random.Generator | None = None) -> GroundTruth:
    """Shared arm parameters on the l1 sphere plus s-sparse uniform biases.

    Instance 0 has no bias. Every other (instance, arm) pair draws its own
    support of size ``s`` uniformly without replacement.
    """
    if spec.s > spec.d:
        raise InvalidConfig(f"s={spec.s} exceeds d={spec.d}")
    if rng is None:
        rng = stream_rngs(spec.seed)[0]
    shared = rng.standard_normal((spec.K, spec.d))
    shared /= np.abs(shared).sum(axis=1, keepdims=True)
    deltas = np.zeros((spec.N, spec.K, spec.d))
    lo, hi = spec.bias_range
    for j in range(1, spec.N):
        for k in range(spec.K):
            support = rng.choice(spec.d, size=spec.s, replace=False)
            deltas[j, k, support] = rng.uniform(lo, hi, size=spec.s)
    return GroundTruth(shared=shared, deltas=deltas)


def sample_arrival(p, rng: np.random.Generator, size=None):
    """Categorical draw(s) of the arriving instance."""
    p = np.asarray(p, dtype=float)
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    u = rng.random(size)
    return np.searchsorted(cdf, u, side="right")


def sample_context(d: int, x_max: float, rng: np.random.Generator, size=None) -> np.ndarray:
    """Standard normal context clipped coordinate-wise to ``[-x_max, x_max]``."""
    shape = (d,) if size is None else (size, d)
    return np.clip(rng.standard_normal(shape), -x_max, x_max)


def sample_reward(j, k, x, truth: GroundTruth, sigma, rng: np.random.Generator) -> float:
    sig = float(np.broadcast_to(np.asarray(sigma, dtype=float), (truth.N,))[j])
    return float(x @ truth.arm_params[j, k] + sig * rng.standard_normal())


def oracle_arm(j: int, x, truth: GroundTruth) -> int:
    """Best arm for context ``x`` at instance ``j``; lowest index wins ties."""
    return int(np.argmax(truth.arm_params[j] @ x))


def score_step(j: int, x, chosen: int, truth: GroundTruth) -> float:
    means = truth.arm_params[j] @ x
    return float(means.max() - means[chosen])


class MultitaskEnv:
    """A fully pre-drawn realization of the environment for one seed.

    Arrivals, contexts and standardized noise come from separate streams, so
    every policy run on the same (spec, seed, T) sees identical draws.
    """

    def __init__(self, spec: EnvSpec, T: int, truth: GroundTruth | None = None):
        if T < 1:
            raise InvalidConfig(f"horizon must be >= 1, got {T}")
        self.spec = spec
        self.T = int(T)
        truth_rng, arr_rng, ctx_rng, noise_rng = stream_rngs(spec.seed)
        self.truth = truth if truth is not None else generate_ground_truth(spec, truth_rng)
        self.arrivals = sample_arrival(spec.probs, arr_rng, size=self.T)
        self.contexts = sample_context(spec.d, spec.x_max, ctx_rng, size=self.T)
        self.noise = noise_rng.standard_normal(self.T) * spec.sigmas[self.arrivals]

    @property
    def N(self) -> int:
        return self.spec.N

    @property
    def K(self) -> int:
        return self.spec.K

    @property
    def d(self) -> int:
        return self.spec.d

    def clone(self) -> "MultitaskEnv":
        other = object.__new__(MultitaskEnv)
        other.spec = self.spec
        other.T = self.T
        other.truth = GroundTruth(self.truth.shared.copy(), self.truth.deltas.copy())
        other.arrivals = self.arrivals.copy()
        other.contexts = self.contexts.copy()
        other.noise = self.noise.copy()
        return other

    def mean_rewards(self, idx) -> np.ndarray:
        """Expected reward of every arm at the given steps, shape ``(len(idx), K)``."""
        params = self.truth.arm_params[self.arrivals[idx]]  # (n, K, d)
        return np.einsum("nkd,nd->nk", params, self.contexts[idx])

    def rewards(self, idx, arms) -> np.ndarray:
        idx = np.asarray(idx)
        params = self.truth.arm_params[self.arrivals[idx], np.asarray(arms)]
        return np.einsum("nd,nd->n", params, self.contexts[idx]) + self.noise[idx]


@dataclass
class RegretTrace:
    instances: np.ndarray
    arms: np.ndarray
    regret: np.ndarray
    algorithm: str = ""
    seed: int = 0
    config_hash: str = ""
    notes: list = field(default_factory=list)
    prices: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict, repr=False)

    @property
    def T(self) -> int:
        return self.regret.shape[0]

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.regret)

    def cumulative_by_instance(self, N: int | None = None) -> np.ndarray:
        """``(N, T)`` running regret restricted to each instance's arrivals."""
        N = int(self.instances.max()) + 1 if N is None else N
        out = np.zeros((N, self.T))
        for j in range(N):
            out[j] = np.cumsum(np.where(self.instances == j, self.regret, 0.0))
        return out

    def cumulative_instance_column(self) -> np.ndarray:
        """Per-step running regret of the instance that arrived at that step."""
        col = np.empty(self.T)
        totals: dict[int, float] = {}
        for t, (j, r) in enumerate(zip(self.instances.tolist(), self.regret.tolist())):
            totals[j] = totals.get(j, 0.0) + r
            col[t] = totals[j]
        return col


def score_trace(env: MultitaskEnv, arms, algorithm="", seed=None, notes=None) -> RegretTrace:
    arms = np.asarray(arms, dtype=int)
    means = env.mean_rewards(np.arange(env.T))
    regret = means.max(axis=1) - means[np.arange(env.T), arms]
    return RegretTrace(
        instances=env.arrivals.copy(),
        arms=arms,
        regret=np.maximum(regret, 0.0),
        algorithm=algorithm,
        seed=env.spec.seed if seed is None else seed,
        config_hash=env.spec.fingerprint(),
        notes=list(notes or []),
    )


def run_oracle(env: MultitaskEnv) -> RegretTrace:
    arms = np.argmax(env.mean_rewards(np.arange(env.T)), axis=1)
    return score_trace(env, arms, algorithm="oracle")


# --- similarity network -------------------------------------------------------


@dataclass
class SimilarityGraph:
    weights: np.ndarray  # (N, N) integer sparsity distances

    @property
    def N(self) -> int:
        return self.weights.shape[0]


def similarity_graph(truth: GroundTruth, atol: float = SUPPORT_ATOL) -> SimilarityGraph:
    """Edge weight = max over arms of the l0 distance between instance parameters."""
    P = truth.arm_params
    diff = np.abs(P[:, None, :, :] - P[None, :, :, :]) > atol  # (N, N, K, d)
    return SimilarityGraph(weights=diff.sum(axis=3).max(axis=2).astype(int))


def select_instances(graph: SimilarityGraph, j: int, s_tilde: float) -> list[int]:
    """Instances within sparsity distance ``s_tilde`` of ``j`` (always includes ``j``)."""
    chosen = set(np.flatnonzero(graph.weights[j] <= s_tilde).tolist())
    chosen.add(j)
    return sorted(chosen)


def threshold_for_size(graph: SimilarityGraph, j: int, n_tilde: int) -> int:
    """Smallest threshold whose neighbor set around ``j`` has at least ``n_tilde`` members."""
    row = np.sort(graph.weights[j])
    n_tilde = min(max(int(n_tilde), 1), graph.N)
    return int(row[n_tilde - 1])


def optimal_subset_size(d: int, alpha: float, N: int | None = None) -> int:
    """``ceil(d ** (1 / (alpha + 1)))`` clipped to ``[1, N]``."""
    if alpha < 0:
        raise InvalidConfig(f"alpha must be non-negative, got {alpha}")
    exponent = 0.0 if math.isinf(alpha) else 1.0 / (alpha + 1.0)
    v = d**exponent
    if abs(v - round(v)) < 1e-9:
        v = round(v)
    n = max(1, math.ceil(v))
    return n if N is None else min(n, N)
