import itertools
import math

import numpy as np
import pytest

from rmbandit.errors import InvalidInput, InvalidTrim, SingularDesign
from rmbandit.linreg import lasso_fit, ols_fit
from rmbandit.multitask import (
    EstimatorHyper,
    TaskDataset,
    corollary_lambda,
    count_aligned,
    fit_averaging,
    fit_averaging_multitask,
    fit_independent,
    fit_pooling,
    fit_robust_multitask,
    l1_error,
)


def noiseless_tasks(betas, n=30, seed=0, sigma=0.0):
    rng = np.random.default_rng(seed)
    tasks = []
    for j, b in enumerate(betas):
        X = rng.normal(size=(n, len(b)))
        tasks.append(TaskDataset(j, X, X @ np.asarray(b) + sigma * rng.normal(size=n)))
    return tasks


def hyper(N, lam=0.1, omega=0.2, **kw):
    return EstimatorHyper(lambdas={j: lam for j in range(N)}, omega=omega, **kw)


def test_identical_tasks_exact_recovery():
    beta = np.array([0.3, -1.0, 2.0])
    tasks = noiseless_tasks([beta] * 3)
    for omega, lam in itertools.product((0.0, 0.2, 0.34), (0.0, 0.1, 5.0)):
        res = fit_robust_multitask(tasks, hyper(3, lam, omega))
        np.testing.assert_allclose(res.shared, beta, atol=1e-10)
        for j in range(3):
            np.testing.assert_allclose(res.per_instance[j], beta, atol=1e-10)


def test_biased_task_is_trimmed():
    base = np.array([1.0, 1.0])
    betas = [base.copy() for _ in range(5)]
    betas[2] = base + [0.5, 0.0]
    res = fit_robust_multitask(noiseless_tasks(betas), hyper(5, omega=0.2))
    assert res.trim_count == 1
    assert res.shared[0] == pytest.approx(1.0, abs=1e-12)
    assert res.shared[1] == pytest.approx(1.0, abs=1e-12)


def test_robust_beats_independent_on_standard_draws():
    # 50 draws of 10 tasks with d=20, s=2 biases, sigma=0.05, n_j=400, lambda=0.02
    rng = np.random.default_rng(11)
    N, d, s, n, sigma = 10, 20, 2, 400, 0.05
    rm_err, ind_err = [], []
    for _ in range(50):
        shared = rng.normal(size=d)
        shared /= np.abs(shared).sum()
        B = np.tile(shared, (N, 1))
        for j in range(1, N):
            B[j, rng.choice(d, s, replace=False)] += rng.uniform(-0.5, 0.5, s)
        tasks = []
        for j in range(N):
            X = np.clip(rng.normal(size=(n, d)), -1, 1)
            tasks.append(TaskDataset(j, X, X @ B[j] + sigma * rng.normal(size=n)))
        h = EstimatorHyper({j: 0.02 for j in range(N)}, omega=math.sqrt(s / d))
        res = fit_robust_multitask(tasks, h)
        rm_err.append(np.mean([l1_error(res.per_instance[j], B[j]) for j in range(N)]))
        ind_err.append(np.mean([l1_error(res.ols[j], B[j]) for j in range(N)]))
    assert np.mean(rm_err) < np.mean(ind_err)


def test_singular_task_is_tagged():
    tasks = noiseless_tasks([[1.0, 2.0]] * 3)
    tasks[1] = TaskDataset(1, np.ones((5, 2)), np.ones(5))
    with pytest.raises(SingularDesign) as info:
        fit_robust_multitask(tasks, hyper(3))
    assert info.value.instance_id == 1
    res = fit_robust_multitask(tasks, hyper(3, omega=0.0), on_singular="exclude")
    assert res.singular == (1,)
    np.testing.assert_allclose(res.shared, [1.0, 2.0], atol=1e-10)


def test_infeasible_trim():
    tasks = noiseless_tasks([[1.0, 2.0]] * 2)
    with pytest.raises(InvalidTrim):
        fit_robust_multitask(tasks, hyper(2, omega=0.5))
    res = fit_robust_multitask(tasks, hyper(2, omega=0.49), clamp_trim=True)
    assert res.trim_count == 0


def test_exclusion_leaves_neighbor_as_center():
    target = np.array([1.0, 0.0, 2.0])
    neighbor = np.array([1.0, 0.5, 2.0])
    tasks = noiseless_tasks([target, neighbor])
    res = fit_robust_multitask(tasks, hyper(2, lam=0.0, omega=0.0, exclude_from_trim={0}))
    np.testing.assert_allclose(res.centers[0], neighbor, atol=1e-10)
    assert res.trim_pool_size == 1


def test_exclusion_changes_others_only_through_center():
    rng = np.random.default_rng(3)
    betas = rng.normal(size=(4, 3))
    tasks = noiseless_tasks(betas, sigma=0.1)
    lam = {j: 0.05 for j in range(4)}
    res = fit_robust_multitask(tasks, EstimatorHyper(lam, 0.0, exclude_from_trim={0}))
    for t in tasks[1:]:
        ref = lasso_fit(t.X, t.Y, lam[t.instance_id], res.centers[t.instance_id])
        np.testing.assert_array_equal(res.per_instance[t.instance_id], ref)


def test_empty_pool_needs_fallback():
    tasks = noiseless_tasks([[1.0, 2.0]])
    with pytest.raises(InvalidTrim):
        fit_robust_multitask(tasks, hyper(1, exclude_from_trim={0}))
    res = fit_robust_multitask(tasks, hyper(1, lam=1e6, exclude_from_trim={0}),
                               fallback_center=np.array([5.0, 5.0]))
    np.testing.assert_allclose(res.per_instance[0], [5.0, 5.0])


def test_subsets_restrict_pool():
    betas = [[0.0, 0.0], [0.0, 0.0], [10.0, 10.0]]
    res = fit_robust_multitask(noiseless_tasks(betas), hyper(3, lam=0.0, omega=0.0),
                               subsets={0: [0, 1], 1: [0, 1], 2: [2]})
    np.testing.assert_allclose(res.centers[0], [0.0, 0.0], atol=1e-10)
    np.testing.assert_allclose(res.centers[2], [10.0, 10.0], atol=1e-10)


def test_shift_equivariance():
    rng = np.random.default_rng(4)
    N, d, n = 5, 4, 40
    betas = rng.normal(size=(N, d))
    v = rng.normal(size=d)
    Xs = [rng.normal(size=(n, d)) for _ in range(N)]
    eps = [0.1 * rng.normal(size=n) for _ in range(N)]
    t1 = [TaskDataset(j, Xs[j], Xs[j] @ betas[j] + eps[j]) for j in range(N)]
    t2 = [TaskDataset(j, Xs[j], Xs[j] @ (betas[j] + v) + eps[j]) for j in range(N)]
    h = hyper(N, lam=0.05, omega=0.2)
    r1, r2 = fit_robust_multitask(t1, h), fit_robust_multitask(t2, h)
    for j in range(N):
        np.testing.assert_allclose(r2.per_instance[j] - v, r1.per_instance[j], atol=1e-6)


def test_validation():
    with pytest.raises(InvalidInput):
        TaskDataset(0, np.ones((3, 2)), np.ones(2))
    tasks = noiseless_tasks([[1.0, 2.0]] * 2)
    with pytest.raises(InvalidInput):
        fit_robust_multitask(tasks + [tasks[0]], hyper(2))
    with pytest.raises(InvalidInput):
        fit_robust_multitask(tasks, EstimatorHyper({0: 0.1}, 0.0))
    with pytest.raises(InvalidInput):
        EstimatorHyper({0: -1.0}, 0.0)
    with pytest.raises(InvalidInput):
        fit_robust_multitask(tasks, hyper(2), on_singular="ignore")


# --- baselines ----------------------------------------------------------------


def test_independent_matches_ols_and_is_independent():
    rng = np.random.default_rng(5)
    X = np.eye(3)
    out = fit_independent([TaskDataset(0, X, [1.0, 2.0, 3.0])])
    np.testing.assert_allclose(out[0], [1.0, 2.0, 3.0])
    tasks = noiseless_tasks(rng.normal(size=(2, 3)), sigma=0.1)
    a = fit_independent(tasks)
    perturbed = [tasks[0], TaskDataset(1, tasks[1].X, tasks[1].Y + 7.0)]
    b = fit_independent(perturbed)
    np.testing.assert_array_equal(a[0], b[0])
    oracle = np.linalg.solve(tasks[0].X.T @ tasks[0].X, tasks[0].X.T @ tasks[0].Y)
    np.testing.assert_allclose(a[0], oracle, atol=1e-10)


def test_averaging():
    beta = np.array([1.0, -2.0])
    np.testing.assert_allclose(fit_averaging(noiseless_tasks([beta] * 3)), beta, atol=1e-10)
    np.testing.assert_allclose(
        fit_averaging(noiseless_tasks([[0.0, 0.0], [2.0, 4.0]])), [1.0, 2.0], atol=1e-10
    )
    tasks = noiseless_tasks([[1.0, 0.0], [0.0, 1.0]], n=200)
    out = fit_averaging(tasks)
    np.testing.assert_allclose(out, [0.5, 0.5], atol=1e-10)
    assert l1_error(out, [1.0, 0.0]) == pytest.approx(1.0)


def _orthogonal_design(n, d, rng):
    # columns scaled so that X'X / n = I exactly
    Q, _ = np.linalg.qr(rng.normal(size=(n, d)))
    return Q * math.sqrt(n)


def test_pooling():
    beta = np.array([0.5, 1.5, -1.0])
    np.testing.assert_allclose(fit_pooling(noiseless_tasks([beta] * 3)), beta, atol=1e-10)
    rng = np.random.default_rng(6)
    betas = rng.normal(size=(3, 3))
    tasks = [TaskDataset(j, X := _orthogonal_design(20, 3, rng), X @ betas[j] + rng.normal(size=20))
             for j in range(3)]
    np.testing.assert_allclose(fit_pooling(tasks), fit_averaging(tasks), atol=1e-10)
    sizes = [10, 30, 60]
    tasks = [TaskDataset(j, X := _orthogonal_design(n, 3, rng), X @ betas[j] + rng.normal(size=n))
             for j, n in enumerate(sizes)]
    ind = fit_independent(tasks)
    weighted = sum(n * ind[j] for j, n in enumerate(sizes)) / sum(sizes)
    np.testing.assert_allclose(fit_pooling(tasks), weighted, atol=1e-10)
    with pytest.raises(SingularDesign):
        fit_pooling([TaskDataset(0, np.ones((4, 2)), np.ones(4))])


def test_averaging_multitask_degenerate_trim():
    rng = np.random.default_rng(7)
    tasks = noiseless_tasks(rng.normal(size=(3, 4)), sigma=0.2)
    lam = {j: 0.1 for j in range(3)}
    am = fit_averaging_multitask(tasks, lam)
    rm = fit_robust_multitask(tasks, EstimatorHyper(lam, 0.1))  # floor(3 * 0.1) = 0
    for j in range(3):
        np.testing.assert_array_equal(am.per_instance[j], rm.per_instance[j])
    beta = np.array([1.0, 2.0, 3.0])
    am = fit_averaging_multitask(noiseless_tasks([beta] * 3), lam)
    for j in range(3):
        np.testing.assert_allclose(am.per_instance[j], beta, atol=1e-10)


def _poorly_aligned(N=12, d=24, seed=0):
    # task j deviates in coordinate j only
    rng = np.random.default_rng(seed)
    shared = rng.normal(size=d)
    B = np.tile(shared, (N, 1))
    for j in range(N):
        B[j, j] += rng.choice([-1, 1]) * rng.uniform(0.5, 1.0)
    return shared, B


def test_robust_beats_averaging_on_poorly_aligned_tasks():
    N, d, s = 12, 24, 1
    rm_err, am_err = [], []
    for seed in range(10):
        shared, B = _poorly_aligned(N, d, seed)
        tasks = noiseless_tasks(B, n=60, seed=seed)
        lam = {j: 0.01 for j in range(N)}
        rm = fit_robust_multitask(tasks, EstimatorHyper(lam, math.sqrt(s / d)))
        am = fit_averaging_multitask(tasks, lam)
        rm_err.append(np.mean([l1_error(rm.per_instance[j], B[j]) for j in range(N)]))
        am_err.append(np.mean([l1_error(am.per_instance[j], B[j]) for j in range(N)]))
    assert np.mean(am_err) > np.mean(rm_err)


def test_shared_estimate_sparsity_pattern():
    N, d, s = 12, 24, 1
    zeta = math.sqrt(s / d)
    shared, B = _poorly_aligned(N, d)
    tasks = noiseless_tasks(B, n=60)
    lam = {j: 0.0 for j in range(N)}
    rm = fit_robust_multitask(tasks, EstimatorHyper(lam, zeta))
    am = fit_averaging_multitask(tasks, lam)
    rm_dev = int((np.abs(rm.shared - shared) > 1e-9).sum())
    am_dev = int((np.abs(am.shared - shared) > 1e-9).sum())
    assert rm_dev <= s / zeta + s
    assert am_dev == min(N * s, d)


# --- alignment ----------------------------------------------------------------


def test_count_aligned_all_equal():
    shared = np.arange(5.0)
    poor, well = count_aligned(np.tile(shared, (4, 1)), shared, 0.3)
    assert poor == list(range(5)) and well == []


def test_count_aligned_direct_count():
    d = 6
    shared = np.zeros(d)
    B = np.zeros((10, d))
    B[:4, 0] = 1.0
    B[:2, 1] = 1.0
    poor, well = count_aligned(B, shared, 0.3)
    assert well == [0]
    assert poor == list(range(1, d))


def test_count_aligned_pigeonhole_bound():
    rng = np.random.default_rng(8)
    for _ in range(300):
        N, d = rng.integers(2, 15), rng.integers(2, 15)
        s = rng.integers(0, d + 1)
        zeta = rng.uniform(0.05, 1.0)
        shared = rng.normal(size=d)
        B = np.tile(shared, (N, 1))
        for j in range(N):
            k = rng.integers(0, s + 1)
            B[j, rng.choice(d, k, replace=False)] += rng.uniform(0.1, 1.0, k)
        poor, well = count_aligned(B, shared, zeta)
        assert sorted(poor + well) == list(range(d))
        assert len(well) <= s / zeta + 1e-9


def test_count_aligned_validation():
    with pytest.raises(InvalidInput):
        count_aligned(np.zeros((2, 3)), np.zeros(4), 0.3)
    with pytest.raises(InvalidInput):
        count_aligned(np.zeros((2, 3)), np.zeros(3), 0.0)


def test_corollary_lambda_formula():
    got = corollary_lambda(0.05, 1.0, 400, 20, 0.05)
    assert got == pytest.approx(math.sqrt(32 * 0.05**2 * math.log(4 * 20 / 0.05) / 400))


def test_ols_diagnostics_retained():
    tasks = noiseless_tasks([[1.0, 2.0]] * 3)
    res = fit_robust_multitask(tasks, hyper(3))
    for t in tasks:
        np.testing.assert_allclose(res.ols[t.instance_id], ols_fit(t.X, t.Y))
    assert set(res.lasso_info) == {0, 1, 2}
