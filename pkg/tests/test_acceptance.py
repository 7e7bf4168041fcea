"""Acceptance criteria, each run at its stated scale and tolerance."""

import itertools
import logging
import math
import time

import numpy as np
import pytest

from rmbandit.bandit import (
    BanditConfig,
    BatchData,
    RobustMultitaskFitter,
    build_schedule,
    end_of_batch_refit,
    run_baseline_bandit,
    run_rmbandit,
)
from rmbandit.environment import EnvSpec, GroundTruth, MultitaskEnv, run_oracle
from rmbandit.experiment import mean_ci, write_trace
from rmbandit.linreg import trim_count, trimmed_mean
from rmbandit.multitask import EstimatorHyper, TaskDataset, fit_robust_multitask
from rmbandit.pricing import PricingConfig, PricingEnv, generate_pricing_model, run_rmx
from rmbandit.studies import data_poor_errors, estimator_errors, loglog_slope

logging.getLogger("rmbandit").setLevel(logging.ERROR)

SEEDS = range(15)
STANDARD = dict(K=10, d=20, s=2, sigma=0.05)
RM_STANDARD = dict(q=50, h=15, zeta0=0.0, eta0=0.2, zeta10=0.0, eta10=0.2, lambda0=0.02, lambda10=0.02)
BASE_STANDARD = dict(q=1, h=15, lambda0=0.02, lambda10=0.02)


def ci(values):
    m, h = mean_ci(np.asarray(values))
    return float(m), float(m - h), float(m + h)


def fmt_ci(c):
    return f"{c[0]:.1f} [{c[1]:.1f}, {c[2]:.1f}]"


# --- 1: standard regret ordering ------------------------------------------------


def test_criterion_1_standard_ordering(report):
    T = 40_000
    finals = {"rm": [], "ols": [], "lasso": []}
    start = time.perf_counter()
    for seed in SEEDS:
        env = MultitaskEnv(EnvSpec(N=10, seed=seed, **STANDARD), T)
        finals["rm"].append(run_rmbandit(env, BanditConfig(T=T, N=10, K=10, d=20, **RM_STANDARD)).cumulative[-1])
        base = BanditConfig(T=T, N=10, K=10, d=20, **BASE_STANDARD)
        finals["ols"].append(run_baseline_bandit("ols", env, base).cumulative[-1])
        finals["lasso"].append(run_baseline_bandit("lasso", env, base).cumulative[-1])
    elapsed = time.perf_counter() - start
    rm, ols, lasso = (ci(finals[k]) for k in ("rm", "ols", "lasso"))
    separated = rm[2] < ols[1] and rm[2] < lasso[1]
    indistinct = not (ols[2] < lasso[1] or lasso[2] < ols[1])
    ok = separated and indistinct and elapsed < 300
    report(1, ok, f"RM {fmt_ci(rm)} vs OLS {fmt_ci(ols)} vs LASSO {fmt_ci(lasso)}; "
                  f"OLS/LASSO overlap={indistinct}; {elapsed:.0f}s")
    assert separated
    assert indistinct
    assert elapsed < 300


# --- 2: data-poor regret ----------------------------------------------------------


def test_criterion_2_data_poor(report):
    T = 400_000
    dp = {"rm": [], "ols": [], "lasso": []}
    std = []
    arrivals = []
    for seed in SEEDS:
        env = MultitaskEnv(EnvSpec(N=2, data_poor=(0, 100), seed=seed, **STANDARD), T)
        arrivals.append(int((env.arrivals == 0).sum()))
        rm_cfg = BanditConfig(T=T, N=2, K=10, d=20, **{**RM_STANDARD, "q": 300}, exclude_data_poor=0)
        base = BanditConfig(T=T, N=2, K=10, d=20, **BASE_STANDARD)
        dp["rm"].append(run_rmbandit(env, rm_cfg).cumulative_by_instance(2)[0, -1])
        dp["ols"].append(run_baseline_bandit("ols", env, base).cumulative_by_instance(2)[0, -1])
        dp["lasso"].append(run_baseline_bandit("lasso", env, base).cumulative_by_instance(2)[0, -1])
        # standard setting with the same per-instance horizon: T/N = 4000 arrivals per instance
        senv = MultitaskEnv(EnvSpec(N=10, seed=seed, **STANDARD), 40_000)
        std_tr = run_rmbandit(senv, BanditConfig(T=40_000, N=10, K=10, d=20, **RM_STANDARD))
        std.append(std_tr.cumulative_by_instance(10)[0, -1])
    rm, ols, lasso, rm_std = ci(dp["rm"]), ci(dp["ols"]), ci(dp["lasso"]), ci(std)
    below_std = rm[0] < rm_std[0]
    separated = rm[2] < ols[1] and rm[2] < lasso[1]
    ok = below_std and separated
    report(2, ok, f"data-poor RM {fmt_ci(rm)} (~{np.mean(arrivals):.0f} arrivals) vs standard RM "
                  f"{fmt_ci(rm_std)}; OLS {fmt_ci(ols)}, LASSO {fmt_ci(lasso)}")
    assert below_std
    assert separated


# --- 3: static estimator ordering -------------------------------------------------


N_VALUES = (100, 400, 1600)


@pytest.fixture(scope="module")
def static_errors():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    out = {n: [] for n in N_VALUES}
    for n in N_VALUES:
        for _ in range(200):
            out[n].append(estimator_errors(12, 24, 2, n, 0.05, rng))
    elapsed = time.perf_counter() - start
    means = {name: np.array([np.mean([e[name] for e in out[n]]) for n in N_VALUES])
             for name in out[N_VALUES[0]][0]}
    return means, elapsed


def test_criterion_3_static_ordering(report, static_errors):
    means, elapsed = static_errors
    rm, am = means["robust"], means["averaging_multitask"]
    slope = loglog_slope(N_VALUES, rm)
    ratio = {k: float(v[-1] / v[0]) for k, v in means.items()}
    slope_ok = abs(slope + 0.5) <= 0.15
    plateau_ok = ratio["averaging"] > 0.5 and ratio["pooling"] > 0.5
    rm_drop_ok = ratio["robust"] < 0.2
    am_ok = bool(np.all(am > rm))
    ok = slope_ok and plateau_ok and rm_drop_ok and am_ok and elapsed < 120
    report(3, ok, f"RM slope {slope:.3f}; final/initial RM {ratio['robust']:.3f} (needs < 0.20), "
                  f"averaging {ratio['averaging']:.3f}, pooling {ratio['pooling']:.3f}; "
                  f"AM > RM at every n: {am_ok}; {elapsed:.0f}s")
    assert slope_ok
    assert plateau_ok
    assert am_ok
    assert elapsed < 120


@pytest.mark.xfail(strict=True, reason="a slope of -1/2 over a 16x range of n gives a ratio near "
                                       "16^-1/2 = 0.25, which cannot fall below 0.20")
def test_criterion_3_rm_below_twenty_percent(static_errors):
    means, _ = static_errors
    assert means["robust"][-1] / means["robust"][0] < 0.2


# --- 4: data-poor dimension scaling --------------------------------------------------


def test_criterion_4_dimension_scaling(report):
    rng = np.random.default_rng(7)
    dims = (10, 20, 40, 80)
    rm, ols = [], []
    for d in dims:
        draws = [data_poor_errors(d, 2, 50, 0.05, rng) for _ in range(100)]
        rm.append(np.mean([dr.robust for dr in draws]))
        ols.append(np.mean([dr.independent for dr in draws]))
    rm_slope = loglog_slope(dims, rm)
    defined = [i for i, v in enumerate(ols) if np.isfinite(v)]
    ols_slope = loglog_slope([dims[i] for i in defined], [ols[i] for i in defined])
    ok = rm_slope <= 0.35 and ols_slope >= 0.8
    report(4, ok, f"RM slope {rm_slope:.3f}; independent OLS slope {ols_slope:.3f} over d="
                  f"{[dims[i] for i in defined]} (OLS undefined at n_j=50 <= d)")
    assert rm_slope <= 0.35
    assert ols_slope >= 0.8


# --- 5: trimmed-mean breakdown -------------------------------------------------------


def test_criterion_5_breakdown(report):
    c = 3.7
    omega = 0.49
    checked = 0
    worst_plain = math.inf
    rng = np.random.default_rng(5)
    for N in (5, 10, 25):
        kmax = trim_count(N, omega)
        if N == 5:
            cases = [(pos, signs) for k in range(1, kmax + 1)
                     for pos in itertools.combinations(range(N), k)
                     for signs in itertools.product((-1.0, 1.0), repeat=k)]
        else:
            cases = []
            for _ in range(500):
                k = int(rng.integers(1, kmax + 1))
                cases.append((tuple(rng.choice(N, k, replace=False)), tuple(rng.choice([-1.0, 1.0], k))))
        for pos, signs in cases:
            v = np.full(N, c)
            v[list(pos)] = np.array(signs) * 1e6 * rng.uniform(1, 10, len(pos))
            assert trimmed_mean(v, omega) == c
            if abs(sum(signs)) == len(signs):  # same-sign corruptions cannot cancel
                err = abs(v.mean() - c)
                worst_plain = min(worst_plain, err)
                assert err >= 1e4
            checked += 1
    report(5, True, f"{checked} corruption patterns exact; smallest plain-mean error {worst_plain:.3g}")


# --- 6: exact-recovery invariants ------------------------------------------------------


def test_criterion_6_invariants(report, tmp_path):
    rng = np.random.default_rng(6)
    # zero-noise identical tasks
    beta = rng.normal(size=5)
    tasks = []
    for j in range(6):
        X = rng.normal(size=(40, 5))
        tasks.append(TaskDataset(j, X, X @ beta))
    res = fit_robust_multitask(tasks, EstimatorHyper({j: 0.1 for j in range(6)}, 0.2))
    recovery = max(np.abs(b - beta).max() for b in res.per_instance.values())
    assert recovery <= 1e-6

    # oracle traces
    env = MultitaskEnv(EnvSpec(N=10, seed=0, **STANDARD), 5000)
    assert (run_oracle(env).regret == 0).all()

    # batch schedule coverage and disjointness
    for _ in range(100):
        T = int(rng.integers(10, 100_000))
        q = float(rng.uniform(1.0 / math.log(T), T / math.log(T)))
        s = build_schedule(T, q)
        cover = np.zeros(T, dtype=int)
        for m in range(s.M + 1):
            lo, hi = s.bounds(m)
            cover[lo:hi] += 1
        assert (cover == 1).all()

    # forced-estimate immutability and batch isolation
    T = 40_000
    cfg = BanditConfig(T=T, N=10, K=10, d=20, **RM_STANDARD)
    tr = run_rmbandit(env := MultitaskEnv(EnvSpec(N=10, seed=1, **STANDARD), T), cfg)
    forced = tr.diagnostics["forced"]
    assert not forced.flags.writeable
    sched, path = tr.diagnostics["schedule"], tr.diagnostics["hyper_path"]
    history, rewards = tr.diagnostics["all_sample"], tr.diagnostics["rewards"]
    prev = forced
    for m in range(1, sched.M):
        lo, hi = sched.bounds(m)
        batch = BatchData(env.contexts[lo:hi], env.arrivals[lo:hi], tr.arms[lo:hi], rewards[lo:hi])
        refit = end_of_batch_refit(batch, dict(enumerate(path.lambda1[m - 1])),
                                   path.omega1[m - 1], prev, RobustMultitaskFitter())
        assert refit.tobytes() == history[m - 1].tobytes()
        prev = history[m - 1]

    # byte-identical traces for a repeated seed
    again = run_rmbandit(MultitaskEnv(EnvSpec(N=10, seed=1, **STANDARD), T), cfg)
    write_trace(tmp_path / "a.csv", tr)
    write_trace(tmp_path / "b.csv", again)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    report(6, True, f"recovery error {recovery:.2e}; oracle, schedule, immutability, "
                    f"isolation over {sched.M - 1} refits and determinism hold")


# --- 7: suboptimal-arm exclusion --------------------------------------------------------


def test_criterion_7_suboptimal_arm_excluded(report):
    h, x_max, d, K, N, T = 1.0, 1.0, 4, 3, 2, 20_000
    shared = np.array([[1.0, 0.5, 0.0, 0.0], [1.0, 0.0, 0.5, 0.0], [-1.0, 0.0, 0.0, 0.5]])
    truth = GroundTruth(shared, np.zeros((N, K, d)))
    pulls = []
    for seed in range(10):
        env = MultitaskEnv(EnvSpec(N=N, K=K, d=d, s=0, sigma=0.05, seed=seed), T, truth=truth)
        env.contexts[:, 0] = 1.0  # intercept: arm 2 trails arm 0 by >= 2 - 0.5 - 0.5 > h
        gaps = env.contexts @ (shared[0] - shared[2])
        assert gaps.min() >= h
        rng = np.random.default_rng(seed)
        noise = rng.uniform(-1, 1, size=(N, K, d))
        noise *= (0.99 * h / (4 * x_max)) / np.abs(noise).sum(axis=2, keepdims=True)
        mocked = truth.arm_params + noise
        cfg = BanditConfig(T=T, N=N, K=K, d=d, q=20, h=h, lambda0=0.01, lambda10=0.01)
        tr = run_rmbandit(env, cfg, forced_estimates=mocked)
        b0 = tr.diagnostics["schedule"].b0
        pulls.append(int((tr.arms[b0:] == 2).sum()))
    report(7, sum(pulls) == 0, f"pulls of the suboptimal arm after B0 per seed: {pulls}")
    assert sum(pulls) == 0


# --- 8: RMX convergence ------------------------------------------------------------------


def test_criterion_8_rmx_convergence(report):
    N, d = 3, 3
    T = N * (30**2 + 1)
    env = PricingEnv(generate_pricing_model(N, d, 1, np.random.default_rng(8)), T, sigma=0.0, seed=8)
    oracle = env.oracle_prices()
    assert (oracle > env.model.p_min).all() and (oracle < env.model.p_max).all()
    tr = run_rmx(env, PricingConfig(lambda0=1e-3))
    times = tr.diagnostics["update_times"]
    t = np.arange(T)
    policy = tr.arms == 0
    first = policy & (t >= times[0]) & (t < times[1])
    late = policy & (t >= times[19])
    ratio = tr.regret[late].mean() / tr.regret[first].mean()
    all_steps = tr.regret[t >= times[19]].mean() / tr.regret[(t >= times[0]) & (t < times[1])].mean()
    in_bounds = bool(((tr.prices >= env.model.p_min) & (tr.prices <= env.model.p_max)).all())
    ok = ratio < 0.01 and in_bounds
    report(8, ok, f"policy-step regret ratio {ratio:.2e} after update 20 "
                  f"(all steps incl. fixed experimental prices: {all_steps:.2e}); "
                  f"prices in bounds: {in_bounds}")
    assert ratio < 0.01
    assert in_bounds
