import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from habmec import fedsvm
from habmec.fedsvm import Hyper, LocalDataset

HYPER = Hyper()


def random_data(rng, N, K=8, d=3):
    X = rng.uniform(0, fedsvm.FEATURE_SCALE, (K, d))
    return [LocalDataset(X, rng.integers(0, 2, K).astype(float)) for _ in range(N)]


def straight_line_primal(W, omega, datasets, hyper):
    total = 0.0
    for n, ds in enumerate(datasets):
        for x, a in zip(ds.X, ds.y):
            total += (a - float(np.dot(W[:, n], x))) ** 2
    total += hyper.lam1 * float(np.sum(W * W))
    total += hyper.lam2 * float(np.trace(W @ np.linalg.inv(omega) @ W.T))
    return total


def test_primal_trivial_values():
    zero = LocalDataset(np.ones((3, 3)) * 0.2, np.zeros(3))
    assert fedsvm.primal_objective(np.zeros((3, 1)), np.eye(1), [zero], HYPER) == 0.0
    one = LocalDataset([[0.3, 0.1, 0.2]], [1.0])
    assert fedsvm.primal_objective(np.zeros((3, 1)), np.eye(1), [one], HYPER) == 1.0


def test_primal_matches_straight_line():
    rng = np.random.default_rng(0)
    for _ in range(10):
        N = int(rng.integers(1, 4))
        data = random_data(rng, N)
        W = rng.standard_normal((3, N))
        omega = fedsvm.random_structure_matrix(N, rng) + 0.1 * np.eye(N)
        omega /= np.trace(omega)
        got = fedsvm.primal_objective(W, omega, data, HYPER)
        assert got == pytest.approx(straight_line_primal(W, omega, data, HYPER), rel=1e-10)


def test_singular_omega_without_floor():
    hyper = Hyper(eig_floor=0.0)
    with pytest.raises(fedsvm.SingularMatrixError):
        fedsvm.primal_objective(np.zeros((3, 2)), np.diag([1.0, 0.0]), random_data(np.random.default_rng(1), 2), hyper)


def test_primal_from_dual_at_zero():
    data = random_data(np.random.default_rng(2), 2)
    W = fedsvm.primal_from_dual([np.zeros(8), np.zeros(8)], np.eye(2) / 2, data, HYPER)
    assert np.all(W == 0)


def test_fenchel_young_and_gradient():
    rng = np.random.default_rng(3)
    for _ in range(20):
        N = int(rng.integers(1, 4))
        omega = fedsvm.random_structure_matrix(N, rng)
        Z = rng.standard_normal((3, N))
        W = fedsvm.conjugate_regularizer_grad(Z, omega, HYPER)
        lhs = fedsvm.regularizer(W, omega, HYPER) + fedsvm.conjugate_regularizer(Z, omega, HYPER)
        assert lhs == pytest.approx(float(np.sum(W * Z)), abs=1e-10)
        h = 1e-6
        fd = np.zeros_like(Z)
        for idx in np.ndindex(Z.shape):
            E = np.zeros_like(Z)
            E[idx] = h
            fd[idx] = (fedsvm.conjugate_regularizer(Z + E, omega, HYPER)
                       - fedsvm.conjugate_regularizer(Z - E, omega, HYPER)) / (2 * h)
        assert np.max(np.abs(fd - W)) <= 1e-5


def test_dual_examples():
    data = random_data(np.random.default_rng(4), 2)
    assert fedsvm.dual_objective([np.zeros(8)] * 2, np.eye(2) / 2, data, HYPER) == 0.0
    big = Hyper(lam1=1e12)
    single = LocalDataset([[0.3, 0.2, 0.1]], [1.0])
    assert fedsvm.dual_objective([np.array([2.0])], np.eye(1), [single], big) == pytest.approx(-1.0, abs=1e-10)


@settings(max_examples=60)
@given(st.integers(1, 3), st.integers(0, 2 ** 32 - 1))
def test_duality_gap_nonnegative(N, seed):
    rng = np.random.default_rng(seed)
    data = random_data(rng, N)
    omega = fedsvm.random_structure_matrix(N, rng)
    alpha = [rng.standard_normal(8) * 3 for _ in range(N)]
    assert fedsvm.duality_gap(alpha, omega, data, HYPER) >= -1e-12


def test_gap_at_zero_is_sum_of_squared_labels():
    rng = np.random.default_rng(5)
    data = random_data(rng, 3)
    omega = fedsvm.random_structure_matrix(3, rng)
    expected = sum(float(ds.y @ ds.y) for ds in data)
    assert fedsvm.duality_gap([np.zeros(8)] * 3, omega, data, HYPER) == pytest.approx(expected, abs=1e-12)


def test_conjugate_pair_inequality():
    rng = np.random.default_rng(6)
    u, v = rng.normal(0, 3, 10_000), rng.normal(0, 3, 10_000)
    a = rng.integers(0, 2, 10_000).astype(float)
    slack = fedsvm.squared_loss(u, a) + fedsvm.loss_conjugate(v, a) - u * v
    assert slack.min() >= -1e-12
    tight = 2 * (u - a)
    assert np.max(np.abs(fedsvm.squared_loss(u, a) + fedsvm.loss_conjugate(tight, a) - u * tight)) <= 1e-10


def test_local_subproblem_zero_step_is_dual_share():
    rng = np.random.default_rng(7)
    data = random_data(rng, 2)
    omega = fedsvm.random_structure_matrix(2, rng)
    alpha = [rng.standard_normal(8) for _ in range(2)]
    W = fedsvm.primal_from_dual(alpha, omega, data, HYPER)
    _, mu1 = fedsvm.structure_operator(omega, HYPER)
    r_star = fedsvm.conjugate_regularizer(fedsvm.z_matrix(alpha, data), omega, HYPER)
    total = sum(fedsvm.local_subproblem(np.zeros(8), W[:, n], alpha[n], data[n], 1.0, mu1, r_star / 2)
                for n in range(2))
    assert total == pytest.approx(fedsvm.dual_objective(alpha, omega, data, HYPER), rel=1e-12)


def test_local_models_upper_bound_dual_step():
    rng = np.random.default_rng(8)
    for _ in range(30):
        N = int(rng.integers(1, 4))
        data = random_data(rng, N)
        omega = fedsvm.random_structure_matrix(N, rng)
        alpha = [rng.standard_normal(8) for _ in range(N)]
        steps = [rng.standard_normal(8) for _ in range(N)]
        W = fedsvm.primal_from_dual(alpha, omega, data, HYPER)
        _, mu1 = fedsvm.structure_operator(omega, HYPER)
        share = fedsvm.conjugate_regularizer(fedsvm.z_matrix(alpha, data), omega, HYPER) / N
        model = sum(fedsvm.local_subproblem(steps[n], W[:, n], alpha[n], data[n], 1.0, mu1, share)
                    for n in range(N))
        moved = fedsvm.dual_objective([a + s for a, s in zip(alpha, steps)], omega, data, HYPER)
        assert moved <= model + 1e-9


def test_local_subproblem_is_quadratic():
    rng = np.random.default_rng(9)
    ds = random_data(rng, 1)[0]
    w, a = rng.standard_normal(3), rng.standard_normal(8)
    base, direction = rng.standard_normal(8), rng.standard_normal(8)
    f = lambda s: fedsvm.local_subproblem(base + s * direction, w, a, ds, 1.0, 0.4)
    second = [f(s + 1) - 2 * f(s) + f(s - 1) for s in (-2.0, 0.0, 3.0)]
    assert second == pytest.approx([second[0]] * 3, rel=1e-9)


def _local_setup(seed, K=8):
    rng = np.random.default_rng(seed)
    ds = random_data(rng, 1, K=K)[0]
    return ds, rng.standard_normal(3) * 0.3, rng.standard_normal(K) * 0.3, 0.4


def test_solve_local_optimal_alpha_returns_zero():
    ds, w, _, mu1 = _local_setup(10)
    # choose alpha so the subproblem gradient at 0 vanishes: -y + alpha/2 + X w = 0
    alpha = 2 * (ds.y - ds.X @ w)
    sol = fedsvm.solve_local(ds, w, alpha, mu1)
    assert np.abs(sol.delta).max() <= 1e-14
    exact = LocalDataset(ds.X, np.zeros(ds.size))
    sol = fedsvm.solve_local(exact, np.zeros(3), np.zeros(ds.size), mu1)
    assert np.all(sol.delta == 0) and sol.passes == 0


def test_solve_local_single_sample_exact():
    ds = LocalDataset([[0.2, 0.3, 0.1]], [1.0])
    w, alpha, mu1 = np.array([0.1, 0.0, 0.2]), np.array([0.4]), 0.5
    sol = fedsvm.solve_local(ds, w, alpha, mu1, Hyper(theta=1e-3))
    assert sol.passes == 1 and sol.theta == pytest.approx(0.0, abs=1e-12)
    x = ds.X[0]
    c = 1.0 / mu1
    expected = -(-1.0 + 0.2 + x @ w) / (0.5 + c * x @ x)
    assert sol.delta[0] == pytest.approx(expected, rel=1e-12)


def test_solve_local_sweep_modes_agree():
    for seed in range(5):
        ds, w, a, mu1 = _local_setup(seed, K=30)
        hyper = Hyper(theta=1e-4)
        dense = fedsvm.solve_local(ds, w, a, mu1, hyper, sweep="dense")
        loop = fedsvm.solve_local(ds, w, a, mu1, hyper, sweep="loop")
        compiled = fedsvm.solve_local(ds, w, a, mu1, hyper)
        assert dense.passes == loop.passes == compiled.passes
        np.testing.assert_allclose(dense.delta, loop.delta, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(compiled.delta, loop.delta, rtol=1e-12, atol=1e-14)
        assert compiled.theta == pytest.approx(loop.theta, rel=1e-9, abs=1e-14)


def test_solve_local_monotone_over_passes():
    ds, w, a, mu1 = _local_setup(11, K=25)
    values = []
    for passes in range(1, 12):
        sol = fedsvm.solve_local(ds, w, a, mu1, Hyper(theta=1e-12, max_passes=passes))
        values.append(fedsvm.local_subproblem(sol.delta, w, a, ds, 1.0, mu1))
    assert values[0] <= fedsvm.local_subproblem(np.zeros(25), w, a, ds, 1.0, mu1)
    assert all(b <= a_ + 1e-12 for a_, b in zip(values, values[1:]))


def test_solve_local_reaches_target():
    ds, w, a, mu1 = _local_setup(12, K=40)
    sol = fedsvm.solve_local(ds, w, a, mu1, Hyper(theta=0.1))
    assert sol.theta <= 0.1


def test_solve_local_rejects_unknown_mode():
    ds, w, a, mu1 = _local_setup(13)
    with pytest.raises(ValueError):
        fedsvm.solve_local(ds, w, a, mu1, sweep="gpu")


def test_structure_matrix_examples():
    assert fedsvm.update_structure_matrix(np.eye(3)[:, :2], 0.0) == pytest.approx(np.eye(2) / 2, abs=1e-12)
    W = np.zeros((3, 2))
    W[0, 0], W[1, 1] = 2.0, 3.0
    assert fedsvm.update_structure_matrix(W, 0.0) == pytest.approx(np.diag([0.4, 0.6]), abs=1e-12)
    assert fedsvm.update_structure_matrix(np.zeros((3, 4)), 0.0) == pytest.approx(np.eye(4) / 4)


@settings(max_examples=50)
@given(st.integers(1, 5), st.integers(0, 2 ** 32 - 1), st.sampled_from([0.0, 1e-8, 1e-3]))
def test_structure_matrix_feasible(N, seed, eps):
    W = np.random.default_rng(seed).standard_normal((3, N))
    omega = fedsvm.update_structure_matrix(W, eps)
    assert np.abs(omega - omega.T).max() <= 1e-10
    assert np.linalg.eigvalsh(omega).min() >= -1e-10
    assert np.trace(omega) == pytest.approx(1.0, abs=1e-10)


def test_random_structure_matrix_feasible():
    rng = np.random.default_rng(14)
    for N in range(1, 6):
        omega = fedsvm.random_structure_matrix(N, rng)
        assert np.trace(omega) == pytest.approx(1.0)
        assert np.linalg.eigvalsh(omega).min() >= -1e-12


def test_predict_examples():
    W = np.zeros((3, 2))
    W[0, 0], W[1, 1] = 1.0, 1.0
    assert fedsvm.predict_association(W, [1.0, 0.0, 0.0]) == 0
    assert fedsvm.predict_association(np.zeros((3, 3)), [0.3, 0.2, 0.1]) == 0
    assert fedsvm.one_hot(2, 4).tolist() == [0, 0, 1, 0]


@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-3, 1e3))
def test_predict_scale_invariant(seed, c):
    rng = np.random.default_rng(seed)
    W, x = rng.standard_normal((3, 4)), rng.uniform(0, 1, (5, 3))
    assert fedsvm.predict_association(W, x * c).tolist() == fedsvm.predict_association(W, x).tolist()


def test_proposition_factor_examples():
    assert fedsvm.proposition_factor(0.5, 1.0, 0.5) == 0.75
    assert fedsvm.rate_constant(1.0, 1.0) == pytest.approx(1 / 3)


def test_train_single_task_matches_centralized():
    data = random_data(np.random.default_rng(15), 1, K=30)
    _, trace = fedsvm.train(data, HYPER, iterations=500, tol=1e-12)
    _, _, central = fedsvm.centralized_solve(data, HYPER)
    assert -trace.dual[-1] == pytest.approx(central, abs=1e-6)


def test_train_multi_task_matches_centralized():
    data = random_data(np.random.default_rng(16), 3, K=25)
    state, trace = fedsvm.train(data, HYPER, iterations=1000, tol=1e-9)
    W, omega, central = fedsvm.centralized_solve(data, HYPER)
    assert state.converged
    assert trace.primal[-1] == pytest.approx(central, abs=1e-6)
    np.testing.assert_allclose(state.omega, omega, atol=1e-5)


def test_train_invariants_hold_each_iteration():
    data = random_data(np.random.default_rng(17), 3, K=20)
    state, trace = fedsvm.train(data, HYPER, iterations=200, tol=1e-8)
    assert max(trace.descent_residual) <= 1e-9
    assert min(trace.gap) >= -1e-12
    omega = state.omega
    assert np.trace(omega) == pytest.approx(1.0, abs=1e-10)
    np.testing.assert_allclose(state.W, fedsvm.primal_from_dual(state.alpha, omega, data, HYPER), atol=1e-12)


def test_train_deterministic():
    data = random_data(np.random.default_rng(18), 2, K=15)
    _, a = fedsvm.train(data, HYPER, iterations=50, seed=3)
    _, b = fedsvm.train(data, HYPER, iterations=50, seed=3)
    assert list(a.rows()) == list(b.rows())


def test_train_separable_labels_fit_perfectly():
    rng = np.random.default_rng(19)
    centres = np.eye(3) * 0.5
    which = rng.integers(0, 3, 60)
    X = centres[which] + rng.uniform(-0.03, 0.03, (60, 3))
    data = [LocalDataset(X, (which == n).astype(float)) for n in range(3)]
    state, _ = fedsvm.train(data, Hyper(lam1=1e-3, lam2=1e-3), iterations=500, tol=1e-8)
    assert (state.predict(X) == which).all()


def test_train_empty_task_is_allowed():
    rng = np.random.default_rng(20)
    data = random_data(rng, 2) + [LocalDataset.empty()]
    state, trace = fedsvm.train(data, HYPER, iterations=100, tol=1e-8)
    assert state.W.shape == (3, 3)
    assert np.all(np.isfinite(trace.gap))


def test_divergence_reported_with_trace():
    data = random_data(np.random.default_rng(21), 2, K=10)
    # eta = 1 with a far-too-small sigma overshoots every local step
    with pytest.raises(fedsvm.DivergenceError) as err:
        fedsvm.train(data, Hyper(sigma=1e-3, theta=0.01), iterations=200)
    assert len(err.value.trace) >= 1


def test_state_round_trip():
    rng = np.random.default_rng(22)
    data = random_data(rng, 2)
    norm = fedsvm.Normalizer.fit(rng.uniform(-500, 500, (20, 3)) + [0, 0, 1e6], 800.0)
    state, _ = fedsvm.train(data, HYPER, iterations=20, normalizer=norm)
    back = fedsvm.FedSvmState.from_json(state.to_json())
    assert np.array_equal(back.W, state.W) and np.array_equal(back.omega, state.omega)
    assert back.hyper == state.hyper
    assert np.array_equal(back.normalizer.low, norm.low) and np.array_equal(back.normalizer.high, norm.high)
    with pytest.raises(ValueError):
        fedsvm.FedSvmState.from_json('{"format": "other"}')


def test_normalizer_bounds_norm():
    rng = np.random.default_rng(23)
    raw = np.column_stack([rng.uniform(-800, 800, (50, 2)), rng.uniform(3e5, 1.2e6, 50)])
    x = fedsvm.Normalizer.fit(raw, 800.0)(raw)
    assert np.linalg.norm(x, axis=1).max() <= 1.0 + 1e-12
    assert x.min() >= 0


def test_bound_check_on_training_run():
    data = random_data(np.random.default_rng(24), 2, K=20)
    _, trace = fedsvm.train(data, HYPER, iterations=40, seed=0, omega0=np.eye(2) / 2)
    _, long = fedsvm.train(data, HYPER, iterations=400, seed=0, omega0=np.eye(2) / 2)
    report = fedsvm.convergence_bound_check(trace, min(long.dual), HYPER)
    assert report.descent_violation is None
    assert 0 < report.factor < 1
    assert report.ok, report.message


def test_bound_check_flags_violation():
    trace = fedsvm.ConvergenceTrace(dual=[-0.5, -0.6, -0.1], descent_residual=[0.0, 1e-3, 0.0],
                                    mu1=[1.0] * 3, theta=[0.1] * 3, gap=[1, 1, 1])
    report = fedsvm.convergence_bound_check(trace, -1.0, HYPER, s=0.5)
    assert not report.ok
    assert report.descent_violation == 1
    assert report.envelope_violation == 2


@pytest.mark.parametrize("kwargs", [{"lam1": 0.0}, {"eta": 0.0}, {"theta": 1.0}, {"sigma": 2.0},
                                    {"lam2": -1.0}, {"max_passes": 0}])
def test_hyper_validation(kwargs):
    with pytest.raises(ValueError):
        Hyper(**kwargs)
