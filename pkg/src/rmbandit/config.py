"""Experiment configuration: YAML schema, loading and validation.

Unknown keys are rejected. Errors carry the line of the offending key.
See ``configs/schema.md`` for the full schema.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .errors import InvalidConfig

SCENARIOS = ("standard", "data_poor", "network", "pricing", "static_estimators")
BANDIT_ALGORITHMS = ("rmbandit", "ols_bandit", "lasso_bandit")
PRICING_ALGORITHMS = ("rmx", "ilsx", "ilqx")

_ENV_KEYS = {
    "N": int, "K": int, "d": int, "s": int, "sigma": (float, list), "x_max": float,
    "arrival_probs": (list, type(None)), "data_poor": (list, type(None)),
    "bias_range": list,
}
_ALGO_KEYS = {
    "q": float, "h": float, "zeta0": float, "eta0": float, "zeta10": float, "eta10": float,
    "lambda0": (float, list), "lambda10": (float, list), "exclude_data_poor": (int, type(None)),
}
_NETWORK_KEYS = {"s_tilde": float}
_PRICING_KEYS = {
    "N": int, "d": int, "s": int, "sigma": float, "p_min": float, "p_max": float,
    "experimental_prices": list, "zeta0": float, "eta0": float, "lambda0": (float, list),
    "price_scale": (float, type(None)), "arrival_probs": (list, type(None)),
}
_PRICING_ALGO_KEYS = {
    "zeta0": float, "eta0": float, "lambda0": (float, list), "price_scale": (float, type(None)),
}
_STATIC_KEYS = {
    "N": int, "d": int, "s": int, "sigma": float, "n_values": list, "draws": int,
    "omega": (float, type(None)),
}
_OUTPUT_KEYS = {"dir": (str, type(None)), "thin": (int, type(None))}
_TOP_KEYS = {
    "scenario": str, "horizon": int, "seeds": list, "env": dict, "algorithms": dict,
    "network": dict, "pricing": dict, "static": dict, "output": dict,
}


class ConfigError(InvalidConfig):
    def __init__(self, message: str, line: int | None = None, path: str = ""):
        self.line = line
        self.path = path
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{path + ': ' if path else ''}{message}")


@dataclass(frozen=True)
class Diagnostic:
    field: str
    kind: str
    message: str
    line: int | None = None

    def __str__(self) -> str:
        where = f"line {self.line}: " if self.line is not None else ""
        return f"{where}{self.field}: [{self.kind}] {self.message}"


@dataclass
class ExperimentConfig:
    scenario: str
    seeds: list
    horizon: int | None = None
    env: dict = field(default_factory=dict)
    algorithms: dict = field(default_factory=dict)
    network: dict = field(default_factory=dict)
    pricing: dict = field(default_factory=dict)
    static: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    lines: dict = field(default_factory=dict, repr=False)  # dotted key path -> 1-based line
    source: str = ""

    def line_of(self, path: str) -> int | None:
        while path:
            if path in self.lines:
                return self.lines[path]
            path = path.rpartition(".")[0]
        return None


# --- YAML with line numbers ---------------------------------------------------


def _collect_lines(node, path, lines):
    if isinstance(node, yaml.MappingNode):
        seen = set()
        for key_node, value_node in node.value:
            key = str(key_node.value)
            sub = f"{path}.{key}" if path else key
            if key in seen:
                raise ConfigError(f"duplicate key {key!r}", key_node.start_mark.line + 1, sub)
            seen.add(key)
            lines[sub] = key_node.start_mark.line + 1
            _collect_lines(value_node, sub, lines)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _collect_lines(v, f"{path}[{i}]", lines)


def parse_yaml(text: str) -> tuple[Any, dict]:
    """Parsed document plus a map from dotted key paths to 1-based lines."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None) from exc
    lines: dict = {}
    if root is not None:
        _collect_lines(root, "", lines)
    return data, lines


# --- schema -------------------------------------------------------------------


def _check_type(value, kind, path, lines):
    kinds = kind if isinstance(kind, tuple) else (kind,)
    if float in kinds and isinstance(value, int) and not isinstance(value, bool):
        return
    if isinstance(value, bool) or not isinstance(value, kinds):
        names = "/".join(k.__name__ for k in kinds)
        raise ConfigError(f"expected {names}, got {type(value).__name__}", lines.get(path), path)


def _check_section(data, schema, prefix, lines):
    if not isinstance(data, dict):
        raise ConfigError("expected a mapping", lines.get(prefix), prefix)
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in schema:
            raise ConfigError(f"unknown key {key!r}", lines.get(path), path)
        _check_type(value, schema[key], path, lines)


def config_from_dict(data: dict, lines: dict | None = None, source: str = "") -> ExperimentConfig:
    lines = lines or {}
    _check_section(data, _TOP_KEYS, "", lines)
    for req in ("scenario", "seeds"):
        if req not in data:
            raise ConfigError(f"missing required key {req!r}")
    scenario = data["scenario"]
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}; expected one of {list(SCENARIOS)}",
                          lines.get("scenario"), "scenario")
    seeds = data["seeds"]
    if not seeds or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
        raise ConfigError("seeds must be a non-empty list of integers", lines.get("seeds"), "seeds")
    for name, schema in (("env", _ENV_KEYS), ("network", _NETWORK_KEYS), ("pricing", _PRICING_KEYS),
                         ("static", _STATIC_KEYS), ("output", _OUTPUT_KEYS)):
        if name in data:
            _check_section(data[name], schema, name, lines)
    if "algorithms" in data:
        allowed = PRICING_ALGORITHMS if scenario == "pricing" else BANDIT_ALGORITHMS
        algos = data["algorithms"]
        if not isinstance(algos, dict):
            raise ConfigError("expected a mapping", lines.get("algorithms"), "algorithms")
        for name, overrides in algos.items():
            path = f"algorithms.{name}"
            if name not in allowed:
                raise ConfigError(f"unknown algorithm {name!r} for scenario {scenario!r}",
                                  lines.get(path), path)
            _check_section(overrides or {}, _PRICING_ALGO_KEYS if scenario == "pricing" else _ALGO_KEYS,
                           path, lines)
            algos[name] = overrides or {}

    needs = {
        "standard": ("horizon", "env"), "data_poor": ("horizon", "env"),
        "network": ("horizon", "env", "network"), "pricing": ("horizon", "pricing"),
        "static_estimators": ("static",),
    }[scenario]
    for req in needs:
        if req not in data:
            raise ConfigError(f"scenario {scenario!r} requires {req!r}")
    if scenario == "data_poor" and not data["env"].get("data_poor"):
        raise ConfigError("scenario 'data_poor' requires env.data_poor: [instance, ratio]",
                          lines.get("env"), "env")
    if scenario in ("standard", "data_poor", "network"):
        for key in ("N", "K", "d", "s"):
            if key not in data["env"]:
                raise ConfigError(f"missing required key {key!r}", lines.get("env"), "env")
    if scenario == "static_estimators":
        for key in ("N", "d", "s", "sigma", "n_values", "draws"):
            if key not in data["static"]:
                raise ConfigError(f"missing required key {key!r}", lines.get("static"), "static")
    if scenario == "pricing":
        for key in ("N", "d"):
            if key not in data["pricing"]:
                raise ConfigError(f"missing required key {key!r}", lines.get("pricing"), "pricing")

    return ExperimentConfig(
        scenario=scenario,
        seeds=list(seeds),
        horizon=data.get("horizon"),
        env=dict(data.get("env", {})),
        algorithms=dict(data.get("algorithms", {})),
        network=dict(data.get("network", {})),
        pricing=dict(data.get("pricing", {})),
        static=dict(data.get("static", {})),
        output=dict(data.get("output", {})),
        lines=lines,
        source=source,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    data, lines = parse_yaml(text)
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", 1)
    return config_from_dict(data, lines, source=str(path))


# --- semantic checks ----------------------------------------------------------


def validate_config(config: ExperimentConfig) -> list[Diagnostic]:
    """Semantic diagnostics; an empty list means the config is runnable."""
    out: list[Diagnostic] = []

    def add(path, kind, message):
        out.append(Diagnostic(path, kind, message, config.line_of(path)))

    def check_simplex(probs, path, n):
        if probs is None:
            return
        p = np.asarray(probs, dtype=float)
        if p.shape != (n,):
            add(path, "InvalidConfig", f"needs {n} entries, got {p.size}")
        elif np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-9:
            add(path, "InvalidConfig", f"must be positive and sum to 1 (sum is {p.sum():.6g})")

    env = config.env
    if config.scenario in ("standard", "data_poor", "network"):
        N, d, s = env["N"], env["d"], env["s"]
        if s > d:
            add("env.s", "InvalidConfig", f"sparsity s={s} exceeds dimension d={d}")
        for key in ("N", "K", "d"):
            if env[key] < 1:
                add(f"env.{key}", "InvalidConfig", "must be >= 1")
        check_simplex(env.get("arrival_probs"), "env.arrival_probs", N)
        dp = env.get("data_poor")
        if dp is not None and (len(dp) != 2 or not 0 <= dp[0] < N or not dp[1] > 0):
            add("env.data_poor", "InvalidConfig", "must be [instance id in [0, N), ratio > 0]")
        T = config.horizon
        if T is None or T < 2:
            add("horizon", "InvalidConfig", "must be >= 2")
        for name, algo in config.algorithms.items():
            path = f"algorithms.{name}"
            for key in ("zeta0", "eta0", "zeta10", "eta10"):
                if algo.get(key, 0.0) < 0:
                    add(f"{path}.{key}", "InvalidConfig", "must be non-negative")
            for a, b in (("zeta0", "eta0"), ("zeta10", "eta10")):
                omega = algo.get(a, 0.0) + algo.get(b, 0.0)
                if omega >= 0.5:
                    add(f"{path}.{b}", "InvalidTrim",
                        f"trim fraction {a}+{b} = {omega:g} must be below 1/2")
            q, h = algo.get("q"), algo.get("h")
            if q is None or h is None:
                add(path, "InvalidConfig", "q and h are required")
                continue
            if q <= 0 or h <= 0:
                add(path, "InvalidConfig", "q and h must be positive")
            elif T is not None and T >= 2 and q * math.log(T) > T:
                add(f"{path}.q", "InvalidConfig",
                    f"q ln T = {q * math.log(T):.6g} exceeds T = {T}: no room for batch 1")
        if config.scenario == "network" and config.network.get("s_tilde", 0) < 0:
            add("network.s_tilde", "InvalidConfig", "must be non-negative")
        if not config.algorithms:
            add("algorithms", "InvalidConfig", "no algorithms requested")
    elif config.scenario == "pricing":
        pr = config.pricing
        p_min, p_max = pr.get("p_min", 0.0), pr.get("p_max", 1000.0)
        p1, p2 = pr.get("experimental_prices", [200.0, 600.0])
        if not p_min < p1 < p2 < p_max:
            add("pricing.experimental_prices", "InvalidConfig", "need p_min < p1 < p2 < p_max")
        if pr.get("s", 1) > pr["d"] - 1:
            add("pricing.s", "InvalidConfig", "sparsity must leave the intercept unbiased (s <= d-1)")
        check_simplex(pr.get("arrival_probs"), "pricing.arrival_probs", pr["N"])
        for name, algo in config.algorithms.items():
            omega = algo.get("zeta0", pr.get("zeta0", 0.0)) + algo.get("eta0", pr.get("eta0", 0.0))
            if omega >= 0.5:
                add(f"algorithms.{name}", "InvalidTrim", f"trim fraction {omega:g} must be below 1/2")
    else:
        st = config.static
        if st["s"] > st["d"]:
            add("static.s", "InvalidConfig", f"sparsity s={st['s']} exceeds dimension d={st['d']}")
        omega = st.get("omega")
        omega = math.sqrt(st["s"] / st["d"]) if omega is None else omega
        if not 0 <= omega < 0.5:
            add("static.omega", "InvalidTrim", f"trim fraction {omega:g} must lie in [0, 1/2)")
        if any(n < st["d"] for n in st["n_values"]):
            add("static.n_values", "InvalidConfig", "every n must be at least d for OLS")
    thin = config.output.get("thin")
    if thin is not None and thin < 1:
        add("output.thin", "InvalidConfig", "must be >= 1")
    return out
