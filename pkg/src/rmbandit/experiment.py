"""Seed-batched experiment runner, trace files and summary statistics."""

from __future__ import annotations

import csv
import glob as globmod
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bandit import BanditConfig, run_baseline_bandit, run_rmbandit
from .config import ExperimentConfig, validate_config
from .environment import EnvSpec, MultitaskEnv, RegretTrace, select_instances, similarity_graph
from .environment import stream_rngs
from .errors import InvalidConfig
from .pricing import PricingConfig, PricingEnv, generate_pricing_model, run_pricing
from .studies import STATIC_ESTIMATORS, estimator_errors

log = logging.getLogger(__name__)

OUT_DIR_ENV = "RMBANDIT_OUT_DIR"
TRACE_COLUMNS = (
    "seed", "algorithm", "t", "instance", "arm",
    "regret_step", "regret_cum_global", "regret_cum_instance",
)
STATIC_COLUMNS = ("seed", "estimator", "n", "draw", "l1_error")
Z95 = 1.959963984540054

# bundled defaults: the standard synthetic setup
DEFAULT_ALGORITHMS = {
    "rmbandit": {"q": 50, "h": 15, "zeta0": 0.0, "eta0": 0.2, "zeta10": 0.0, "eta10": 0.2,
                 "lambda0": 0.02, "lambda10": 0.02},
    "ols_bandit": {"q": 1, "h": 15, "lambda0": 0.02, "lambda10": 0.02},
    "lasso_bandit": {"q": 1, "h": 15, "lambda0": 0.02, "lambda10": 0.02},
}
DEFAULT_PRICING_ALGORITHMS = {"rmx": {}, "ilsx": {}, "ilqx": {}}


def default_thin(T: int) -> int:
    return 1 if T <= 100_000 else 10


def fmt(x: float) -> str:
    return f"{x:.17g}"


# --- single runs --------------------------------------------------------------


def env_spec(config: ExperimentConfig, seed: int) -> EnvSpec:
    env = config.env
    return EnvSpec(
        N=env["N"], K=env["K"], d=env["d"], s=env["s"],
        sigma=env.get("sigma", 0.05),
        x_max=env.get("x_max", 1.0),
        arrival_probs=env.get("arrival_probs"),
        bias_range=tuple(env.get("bias_range", (-0.5, 0.5))),
        data_poor=tuple(env["data_poor"]) if env.get("data_poor") else None,
        seed=seed,
    )


def bandit_config(config: ExperimentConfig, algorithm: str, env: MultitaskEnv) -> BanditConfig:
    params = dict(config.algorithms.get(algorithm) or DEFAULT_ALGORITHMS[algorithm])
    if algorithm == "rmbandit":
        dp = config.env.get("data_poor")
        if config.scenario == "data_poor" and "exclude_data_poor" not in params:
            params["exclude_data_poor"] = int(dp[0])
        if config.scenario == "network":
            graph = similarity_graph(env.truth)
            s_tilde = config.network.get("s_tilde", 2 * config.env["s"])
            params["instance_subsets"] = {
                j: select_instances(graph, j, s_tilde) for j in range(env.N)
            }
    else:
        params.pop("exclude_data_poor", None)
    return BanditConfig(T=config.horizon, N=env.N, K=env.K, d=env.d, **params)


def run_bandit_algorithm(config: ExperimentConfig, algorithm: str, seed: int) -> RegretTrace:
    spec = env_spec(config, seed)
    env = MultitaskEnv(spec, config.horizon)
    bc = bandit_config(config, algorithm, env)
    if algorithm == "rmbandit":
        trace = run_rmbandit(env, bc)
    else:
        trace = run_baseline_bandit(algorithm.removesuffix("_bandit"), env, bc)
    trace.algorithm = algorithm
    trace.seed = seed
    return trace


def pricing_env(config: ExperimentConfig, seed: int) -> PricingEnv:
    pr = config.pricing
    truth_rng = stream_rngs(seed)[0]
    model = generate_pricing_model(
        pr["N"], pr["d"], pr.get("s", 1), truth_rng,
        p_min=pr.get("p_min", 0.0), p_max=pr.get("p_max", 1000.0),
        experimental_prices=tuple(pr.get("experimental_prices", (200.0, 600.0))),
    )
    return PricingEnv(model, config.horizon, sigma=pr.get("sigma", 0.0),
                      probs=pr.get("arrival_probs"), seed=seed)


def run_pricing_algorithm(config: ExperimentConfig, algorithm: str, seed: int) -> RegretTrace:
    pr = config.pricing
    params = dict(config.algorithms.get(algorithm) or {})
    pc = PricingConfig(
        zeta0=params.get("zeta0", pr.get("zeta0", 0.0)),
        eta0=params.get("eta0", pr.get("eta0", 0.0)),
        lambda0=params.get("lambda0", pr.get("lambda0", 1e-3)),
        price_scale=params.get("price_scale", pr.get("price_scale")),
    )
    trace = run_pricing(algorithm, pricing_env(config, seed), pc)
    trace.seed = seed
    return trace


def run_static(config: ExperimentConfig, seed: int) -> list[tuple]:
    st = config.static
    rng = stream_rngs(seed)[0]
    rows = []
    for n in st["n_values"]:
        for draw in range(st["draws"]):
            errs = estimator_errors(st["N"], st["d"], st["s"], n, st["sigma"], rng,
                                    omega=st.get("omega"))
            rows.extend((seed, name, n, draw, errs[name]) for name in STATIC_ESTIMATORS)
    return rows


def algorithms_for(config: ExperimentConfig) -> list[str]:
    if config.scenario == "static_estimators":
        return ["static"]
    if config.algorithms:
        return list(config.algorithms)
    return list(DEFAULT_PRICING_ALGORITHMS if config.scenario == "pricing" else DEFAULT_ALGORITHMS)


@dataclass
class RunResult:
    algorithm: str
    seed: int
    wall_clock: float
    trace: RegretTrace | None = None
    static_rows: list | None = None
    error: str | None = None


def run_one(config: ExperimentConfig, algorithm: str, seed: int) -> RunResult:
    start = time.perf_counter()
    try:
        if config.scenario == "static_estimators":
            rows = run_static(config, seed)
            return RunResult(algorithm, seed, time.perf_counter() - start, static_rows=rows)
        if config.scenario == "pricing":
            trace = run_pricing_algorithm(config, algorithm, seed)
        else:
            trace = run_bandit_algorithm(config, algorithm, seed)
        trace.diagnostics = {}  # large arrays; not needed once the trace is scored
        return RunResult(algorithm, seed, time.perf_counter() - start, trace=trace)
    except Exception as exc:  # noqa: BLE001 - recorded per run, batch continues
        return RunResult(algorithm, seed, time.perf_counter() - start,
                         error=f"{type(exc).__name__}: {exc}")


# --- trace files --------------------------------------------------------------


def thinned_steps(T: int, thin: int) -> np.ndarray:
    """0-based indices of recorded steps: every ``thin``-th step and the last one."""
    idx = np.arange(thin - 1, T, thin)
    if idx.size == 0 or idx[-1] != T - 1:
        idx = np.append(idx, T - 1)
    return idx


def write_trace(path: Path, trace: RegretTrace, thin: int = 1) -> None:
    cum = trace.cumulative
    cum_inst = trace.cumulative_instance_column()
    cols = list(TRACE_COLUMNS) + (["price"] if trace.prices is not None else [])
    lines = [",".join(cols)]
    alg = trace.algorithm
    for i in thinned_steps(trace.T, thin).tolist():
        row = [str(trace.seed), alg, str(i + 1), str(int(trace.instances[i])),
               str(int(trace.arms[i])), fmt(trace.regret[i]), fmt(cum[i]), fmt(cum_inst[i])]
        if trace.prices is not None:
            row.append(fmt(trace.prices[i]))
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")


def read_trace(path) -> dict:
    """Columns of a trace file as arrays (``algorithm`` as a string)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        fields = reader.fieldnames or []
    if not rows:
        raise InvalidConfig(f"{path}: empty trace file")
    out = {"algorithm": rows[0]["algorithm"]}
    for name in fields:
        if name == "algorithm":
            continue
        kind = int if name in ("seed", "t", "instance", "arm") else float
        out[name] = np.array([kind(r[name]) for r in rows])
    return out


def write_static(path: Path, rows) -> None:
    lines = [",".join(STATIC_COLUMNS)]
    lines.extend(f"{s},{e},{n},{d},{fmt(v)}" for s, e, n, d, v in rows)
    path.write_text("\n".join(lines) + "\n")


# --- summaries ----------------------------------------------------------------


def mean_ci(samples: np.ndarray, axis: int = 0):
    """Mean and normal-approximation 95% half-width; zero width for one sample."""
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[axis]
    mean = samples.mean(axis=axis)
    if n < 2:
        return mean, np.zeros_like(mean)
    return mean, Z95 * samples.std(axis=axis, ddof=1) / math.sqrt(n)


@dataclass
class SummaryStats:
    algorithm: str
    t: np.ndarray
    mean: np.ndarray
    half_width: np.ndarray
    n_seeds: int
    final_mean: float
    final_half_width: float
    wall_clock: list = field(default_factory=list)

    def as_json(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "n_seeds": self.n_seeds,
            "final_mean": self.final_mean,
            "final_ci": [self.final_mean - self.final_half_width,
                         self.final_mean + self.final_half_width],
            "wall_clock_mean": float(np.mean(self.wall_clock)) if self.wall_clock else None,
        }


def summarize_curves(algorithm, t, curves, wall_clock=()) -> SummaryStats:
    """``curves`` is ``(seeds, len(t))`` cumulative regret sampled at steps ``t``."""
    curves = np.atleast_2d(np.asarray(curves, dtype=float))
    mean, hw = mean_ci(curves)
    return SummaryStats(algorithm, np.asarray(t), mean, hw, curves.shape[0],
                        float(mean[-1]), float(hw[-1]), list(wall_clock))


def write_summary(out_dir: Path, stats: list[SummaryStats], extra: dict | None = None) -> None:
    lines = ["algorithm,t,n_seeds,mean,ci_low,ci_high"]
    for s in stats:
        for t, m, h in zip(s.t.tolist(), s.mean.tolist(), s.half_width.tolist()):
            lines.append(f"{s.algorithm},{t},{s.n_seeds},{fmt(m)},{fmt(m - h)},{fmt(m + h)}")
    (out_dir / "summary.csv").write_text("\n".join(lines) + "\n")
    payload = {"algorithms": [s.as_json() for s in stats]}
    payload.update(extra or {})
    (out_dir / "summary.json").write_text(json.dumps(payload, indent=2) + "\n")


def summarize_files(paths) -> list[SummaryStats]:
    """Summary statistics recomputed from trace files (cumulative global column)."""
    groups: dict[str, list] = {}
    for p in sorted(paths):
        tr = read_trace(p)
        groups.setdefault(tr["algorithm"], []).append(tr)
    stats = []
    for alg, traces in sorted(groups.items()):
        t = traces[0]["t"]
        for tr in traces[1:]:
            if not np.array_equal(tr["t"], t):
                raise InvalidConfig(f"traces for {alg} are recorded at different steps")
        stats.append(summarize_curves(alg, t, [tr["regret_cum_global"] for tr in traces]))
    return stats


def summarize_static(rows) -> list[SummaryStats]:
    stats = []
    for name in STATIC_ESTIMATORS:
        ns = sorted({r[2] for r in rows if r[1] == name})
        if not ns:
            continue
        means, hws, count = [], [], 0
        for n in ns:
            vals = np.array([r[4] for r in rows if r[1] == name and r[2] == n])
            m, h = mean_ci(vals)
            means.append(float(m))
            hws.append(float(h))
            count = vals.size
        stats.append(SummaryStats(name, np.array(ns), np.array(means), np.array(hws), count,
                                  means[-1], hws[-1]))
    return stats


# --- orchestration ------------------------------------------------------------


@dataclass
class ExperimentOutcome:
    out_dir: Path
    trace_files: list
    failures: list
    stats: list

    @property
    def exit_code(self) -> int:
        return 0 if not self.failures else 1


def resolve_out_dir(config: ExperimentConfig, override=None) -> Path:
    if override:
        return Path(override)
    if config.output.get("dir"):
        return Path(config.output["dir"])
    return Path(os.environ.get(OUT_DIR_ENV, "runs"))


def run_experiment(
    config: ExperimentConfig,
    *,
    seeds=None,
    out_dir=None,
    workers: int | None = None,
    thin: int | None = None,
) -> ExperimentOutcome:
    """Run every (algorithm, seed) pair, write traces and a summary."""
    problems = validate_config(config)
    if problems:
        raise InvalidConfig("; ".join(str(p) for p in problems))
    seeds = list(config.seeds if seeds is None else seeds)
    out = resolve_out_dir(config, out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    if thin is None:
        thin = config.output.get("thin") or default_thin(config.horizon or 1)
    jobs = [(alg, s) for alg in algorithms_for(config) for s in seeds]
    workers = workers or os.cpu_count() or 1

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_one, config, alg, s) for alg, s in jobs]
            results = [f.result() for f in futures]
    else:
        results = [run_one(config, alg, s) for alg, s in jobs]

    files, failures = [], []
    by_alg: dict[str, list[RunResult]] = {}
    for res in results:
        if res.error:
            log.error("%s seed %s failed: %s", res.algorithm, res.seed, res.error)
            failures.append({"algorithm": res.algorithm, "seed": res.seed, "error": res.error})
            continue
        by_alg.setdefault(res.algorithm, []).append(res)
        if res.static_rows is not None:
            path = out / "traces" / f"static_seed{res.seed}.csv"
            write_static(path, res.static_rows)
        else:
            path = out / "traces" / f"{res.algorithm}_seed{res.seed}.csv"
            write_trace(path, res.trace, thin)
        files.append(path)

    if config.scenario == "static_estimators":
        stats = summarize_static([r for res in by_alg.get("static", []) for r in res.static_rows])
    else:
        stats = []
        for alg, runs in by_alg.items():
            idx = thinned_steps(runs[0].trace.T, thin)
            curves = [r.trace.cumulative[idx] for r in runs]
            stats.append(summarize_curves(alg, idx + 1, curves, [r.wall_clock for r in runs]))
    write_summary(out, stats, {"scenario": config.scenario, "seeds": seeds, "thin": thin,
                               "failures": failures})
    return ExperimentOutcome(out, files, failures, stats)


def expand_glob(pattern: str) -> list[str]:
    return sorted(globmod.glob(pattern, recursive=True))
