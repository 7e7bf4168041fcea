"""Hyperparameter values under which the regret guarantees hold.

All logarithms are natural.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidConfig


@dataclass(frozen=True)
class HyperFragment:
    """Partial bandit configuration produced by :func:`theoretical_hyperparams`."""

    zeta0: float
    zeta10: float
    eta0: float
    eta10: float
    lambda0: np.ndarray
    lambda10: np.ndarray
    q: float
    flags: tuple = field(default_factory=tuple)

    def as_config_kwargs(self) -> dict:
        return {
            "zeta0": self.zeta0,
            "eta0": self.eta0,
            "zeta10": self.zeta10,
            "eta10": self.eta10,
            "lambda0": self.lambda0,
            "lambda10": self.lambda10,
            "q": self.q,
        }


def _positive(**values):
    for name, v in values.items():
        arr = np.atleast_1d(np.asarray(v, dtype=float))
        if arr.size == 0 or not np.all(np.isfinite(arr)) or np.any(arr <= 0):
            raise InvalidConfig(f"{name} must be positive, got {v!r}")


def forced_eta(c, h, x_max, d, K, p_star, psi, sigmas, probs, b0) -> float:
    """Trim slack of the forced-sample estimator.

    Written as ``a / sqrt(2 log(3 / a))`` with
    ``a = c h / (128 x_max d) * min_i sqrt(p_* psi p_i |B0| / (K sigma_i^2))``.
    """
    sigmas = np.asarray(sigmas, dtype=float)
    probs = np.asarray(probs, dtype=float)
    ratio = np.sqrt(p_star * psi * probs * b0 / (K * sigmas**2))
    a = c * h / (128.0 * x_max * d) * float(ratio.min())
    log_arg = 384.0 * x_max * d / (c * h) * float((1.0 / ratio).max())
    if log_arg <= 1.0:
        raise InvalidConfig(
            f"forced-sample trim slack undefined: log argument {log_arg:.4g} must exceed 1"
        )
    return a / math.sqrt(2.0 * math.log(log_arg))


def standard_q(x_max, sigmas, probs, p_star, psi, c, h, K, s, d, N) -> float:
    sigmas = np.asarray(sigmas, dtype=float)
    probs = np.asarray(probs, dtype=float)
    var_ratio = float((sigmas**2 / probs).max())
    p_min = float(probs.min())
    logd = math.log(d)
    terms = (
        (384.0 * math.sqrt(3.0)) ** 2 * x_max**2 * var_ratio * K * d**2 * logd * math.log(N)
        / (c**2 * h**2 * p_star * psi * N),
        192.0**3 * x_max**4 * var_ratio * K * s * d * logd / (h**2 * p_star**2 * psi**2),
        96.0 * x_max**2 * K * d * math.log(d * N) / (p_star * psi * p_min),
        60.0 * K * math.log(N) / (p_star * p_min),
    )
    return max(terms)


def data_poor_q(x_max, sigma_j, p_j, sigma_l, p_l, p_star, psi, psi_prime, h, K, s, d) -> float:
    C = max(0.5, psi_prime**2 / (512.0 * s * x_max**2))
    logd = math.log(d)
    terms = (
        (128.0 * math.sqrt(3.0)) ** 2 * sigma_l**2 * x_max**2 * K * d**2 * logd
        / (h**2 * p_star * psi * p_l),
        (2048.0 * math.sqrt(3.0)) ** 2 * x_max**4 * sigma_j**2 * K * s**2 * logd
        / (h**2 * p_j * p_star**2 * psi**2),
        96.0 * x_max**2 * K * d * logd / (p_star * psi * p_l),
        4.0 * K / (C**2 * p_star * p_j),
        20.0 * K / (p_star * p_j),
        12.0 * K * logd / (C**2 * p_star * p_j),
    )
    return max(terms)


def theoretical_hyperparams(
    *,
    x_max: float,
    sigmas: Sequence[float],
    p_star: float,
    psi: float,
    h: float,
    s: int,
    d: int,
    K: int,
    N: int,
    probs: Sequence[float],
    rho: float | None = None,
    c: float | None = None,
    T: int | None = None,
    data_poor: tuple[int, int] | None = None,
    psi_prime: float | None = None,
) -> HyperFragment:
    """Evaluate the theory-backed hyperparameters.

    Standard mode needs ``rho`` and the margin constant ``c``; the forced-sample
    slack ``eta0`` also depends on ``|B0| = ceil(q ln T)`` and so needs ``T``.
    Data-poor mode takes ``data_poor=(target, neighbor)`` and ``psi_prime``.
    """
    sigmas = np.asarray(sigmas, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if sigmas.shape != (N,) or probs.shape != (N,):
        raise InvalidConfig(f"sigmas and probs must have length N={N}")
    _positive(x_max=x_max, sigmas=sigmas, p_star=p_star, psi=psi, h=h, s=s, d=d, K=K, N=N,
              probs=probs)
    if s > d:
        raise InvalidConfig(f"sparsity s={s} exceeds dimension d={d}")
    lam10 = np.sqrt(64.0 * sigmas**2 * x_max**2 / p_star)
    flags = []

    if data_poor is not None:
        j, ell = data_poor
        if not (0 <= j < N and 0 <= ell < N) or j == ell:
            raise InvalidConfig(f"data_poor pair {data_poor!r} must name two distinct instances")
        _positive(psi_prime=psi_prime)
        lam0 = np.full(N, p_star * psi * h / (256.0 * x_max * s))
        q = data_poor_q(x_max, sigmas[j], probs[j], sigmas[ell], probs[ell], p_star, psi,
                        psi_prime, h, K, s, d)
        return HyperFragment(1.0, 1.0, 0.0, 0.0, lam0, lam10, q, ("data_poor",))

    _positive(rho=rho, c=c, T=T)
    zeta = math.sqrt(s / d)
    if s == d:
        flags.append("degenerate_zeta")
    eta10 = math.sqrt(9.0 / (rho * N))
    lam0 = np.full(N, p_star * psi * h / (192.0 * x_max * math.sqrt(s * d)))
    q = standard_q(x_max, sigmas, probs, p_star, psi, c, h, K, s, d, N)
    b0 = math.ceil(q * math.log(T))
    try:
        eta0 = forced_eta(c, h, x_max, d, K, p_star, psi, sigmas, probs, b0)
    except InvalidConfig:
        # the log argument drops below 1 once |B0| is large; leave it to the caller
        eta0 = math.nan
        flags.append("eta0_undefined")
    return HyperFragment(zeta, zeta, eta0, eta10, lam0, lam10, q, tuple(flags))
