import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from conftest import DESK_A, DESK_PI0, random_rate_matrix
from dualfilter import (
    JumpPath,
    RateMatrix,
    TimeGrid,
    check_simplex,
    expected_q,
    jump_cells,
    martingale_part,
    occupation_times,
    q_of_state,
    quadratic_variation,
    simulate_ctmc,
    state_vector,
    states_on_grid,
)


def test_rate_matrix_rederives_diagonal():
    A = RateMatrix(np.array([[-1.0 + 1e-10, 1.0], [2.0, -2.0]]))
    assert np.abs(A.entries.sum(axis=1)).max() <= 1e-12


@pytest.mark.parametrize("entries", [
    [[-1.0, -1.0], [1.0, -1.0]],
    [[-1.0, 1.0], [1.0, -0.5]],
    [[0.0]],
    [[-1.0, 1.0, 0.0], [1.0, -1.0, 0.0]],
])
def test_rate_matrix_rejects_invalid(entries):
    with pytest.raises(ValueError):
        RateMatrix(np.array(entries))


def test_stationary_law():
    A = RateMatrix(np.array([[-1.0, 1.0], [2.0, -2.0]]))
    np.testing.assert_allclose(A.stationary(), [2 / 3, 1 / 3], atol=1e-12)


def test_check_simplex():
    check_simplex([0.25, 0.75])
    for bad in ([0.5, 0.6], [-0.1, 1.1]):
        with pytest.raises(ValueError):
            check_simplex(bad)


def test_zero_generator_never_jumps():
    path = simulate_ctmc(np.zeros((2, 2)), [1.0, 0.0], 1.0, seed=4)
    assert path.n_jumps == 0
    assert path.states.tolist() == [0]


def test_simulation_is_seed_deterministic():
    a = simulate_ctmc(np.array(DESK_A), DESK_PI0, 5.0, seed=11)
    b = simulate_ctmc(np.array(DESK_A), DESK_PI0, 5.0, seed=11)
    np.testing.assert_array_equal(a.jump_times, b.jump_times)
    np.testing.assert_array_equal(a.states, b.states)


def test_long_run_occupation_matches_stationary_law():
    A = np.array([[-1.0, 1.0], [2.0, -2.0]])
    T = 1000.0
    path = simulate_ctmc(A, [1.0, 0.0], T, seed=2024)
    grid = TimeGrid(T, 1000)
    occ = np.diff(occupation_times(path, grid)[:, 0])
    # batch means over 1000 unit blocks, each much longer than the 1/3 correlation time
    mean, se = occ.mean(), occ.std(ddof=1) / np.sqrt(len(occ))
    assert abs(mean - 2 / 3) <= 3 * se


def test_mean_jump_count():
    A = np.array([[-5.0, 5.0], [5.0, -5.0]])
    counts = np.array([simulate_ctmc(A, [0.5, 0.5], 10.0, seed=s).n_jumps for s in range(10_000)])
    se = counts.std(ddof=1) / np.sqrt(len(counts))
    assert abs(counts.mean() - 50.0) <= 3 * se


def test_state_law_matches_matrix_exponential():
    A = np.array(DESK_A)
    t = 0.7
    n = 100_000
    states = np.array([simulate_ctmc(A, DESK_PI0, t, seed=s).states[-1] for s in range(n)])
    freq = np.bincount(states, minlength=3) / n
    p = expm(A.T * t) @ np.array(DESK_PI0)
    se = np.sqrt(p * (1 - p) / n)
    assert np.all(np.abs(freq - p) <= 4 * se)


def _two_state_path():
    return JumpPath(1.0, np.array([0.5]), np.array([0, 1]), 2)


def test_state_vector_right_continuous():
    path = _two_state_path()
    np.testing.assert_array_equal(state_vector(path, 0.5), [0.0, 1.0])
    np.testing.assert_array_equal(state_vector(path, 0.49), [1.0, 0.0])
    constant = JumpPath(1.0, np.array([]), np.array([1]), 3)
    for t in (0.0, 0.3, 1.0):
        np.testing.assert_array_equal(state_vector(constant, t), [0.0, 1.0, 0.0])
    with pytest.raises(ValueError):
        state_vector(path, 1.5)


@pytest.mark.parametrize("times, states", [
    ([0.5, 0.4], [0, 1, 0]),
    ([0.5], [0, 0]),
    ([1.0], [0, 1]),
    ([0.5], [0, 2]),
])
def test_jump_path_rejects_invalid(times, states):
    with pytest.raises(ValueError):
        JumpPath(1.0, np.array(times), np.array(states), 2)


def test_grid_helpers_on_hand_path():
    grid = TimeGrid(1.0, 4)
    path = JumpPath(1.0, np.array([0.3]), np.array([0, 1]), 2)
    assert states_on_grid(path, grid).tolist() == [0, 0, 1, 1, 1]
    np.testing.assert_allclose(occupation_times(path, grid)[:, 0], [0, 0.25, 0.3, 0.3, 0.3], atol=1e-15)
    assert jump_cells(path, grid).tolist() == [1]


def test_quadratic_variation_examples():
    grid = TimeGrid(1.0, 10)
    still = JumpPath(1.0, np.array([]), np.array([0]), 2)
    assert np.all(quadratic_variation(still, grid) == 0)
    one = quadratic_variation(_two_state_path(), grid)
    np.testing.assert_array_equal(one[-1], [[1, -1], [-1, 1]])
    assert np.all(one[:5] == 0)
    two = JumpPath(1.0, np.array([0.2, 0.6]), np.array([0, 1, 2]), 3)
    e = np.eye(3)
    expected = np.outer(e[1] - e[0], e[1] - e[0]) + np.outer(e[2] - e[1], e[2] - e[1])
    np.testing.assert_array_equal(quadratic_variation(two, grid)[-1], expected)


def test_quadratic_variation_increments_are_rank_one_trace_two():
    path = simulate_ctmc(np.array(DESK_A), DESK_PI0, 3.0, seed=5)
    grid = TimeGrid(3.0, 3000)
    inc = np.diff(quadratic_variation(path, grid), axis=0)
    nz = inc[np.abs(inc).sum(axis=(1, 2)) > 0]
    assert len(nz) == path.n_jumps
    np.testing.assert_allclose(np.trace(nz, axis1=1, axis2=2), 2.0)
    assert np.all(np.linalg.matrix_rank(nz) == 1)
    assert np.linalg.eigvalsh(nz).min() >= -1e-12


def test_martingale_part_examples():
    grid = TimeGrid(1.0, 10)
    still = JumpPath(1.0, np.array([]), np.array([1]), 2)
    B = martingale_part(still, np.zeros((2, 2)), grid)
    assert np.all(B - B[0] == 0)
    A = RateMatrix(np.array([[-1.0, 1.0], [2.0, -2.0]]))
    jump = JumpPath(1.0, np.array([0.55]), np.array([0, 1]), 2)
    fine = TimeGrid(1.0, 100_000)
    B = martingale_part(jump, A, fine)
    k = 55_000
    np.testing.assert_allclose(B[k] - B[k - 1], [-1.0, 1.0], atol=1e-4)


def test_martingale_mean_zero():
    A = RateMatrix(np.array(DESK_A))
    grid = TimeGrid(1.0, 10)
    incr = np.array([np.diff(martingale_part(simulate_ctmc(A, DESK_PI0, 1.0, seed=s), A, grid)[[0, -1]], axis=0)[0]
                     for s in range(10_000)])
    se = incr.std(axis=0, ddof=1) / np.sqrt(len(incr))
    assert np.all(np.abs(incr.mean(axis=0)) <= 3 * se)


def test_q_of_state_examples():
    A = RateMatrix(np.array([[-1.0, 1.0], [2.0, -2.0]]))
    np.testing.assert_array_equal(q_of_state(A, 0), [[1, -1], [-1, 1]])
    absorbing = RateMatrix(np.array([[0.0, 0.0], [1.0, -1.0]]))
    assert np.all(q_of_state(absorbing, 0) == 0)
    rho = np.array([0.25, 0.75])
    np.testing.assert_allclose(expected_q(A, rho), 0.25 * q_of_state(A, 0) + 0.75 * q_of_state(A, 1))


def test_q_of_state_is_small_time_limit():
    A = RateMatrix(np.array(DESK_A))
    e = np.eye(3)
    for i in range(3):
        errs = []
        for h in (1e-2, 1e-3):
            P = expm(A.entries * h)[i]
            second = sum(P[j] * np.outer(e[j] - e[i], e[j] - e[i]) for j in range(3)) / h
            errs.append(np.abs(second - q_of_state(A, i)).max())
        assert errs[1] < errs[0]
    # Monte Carlo at h = 1e-2 against the exact second moment
    h, n, i = 1e-2, 200_000, 1
    rng = np.random.default_rng(9)
    ends = np.array([simulate_ctmc(A, e[i], h, seed=rng).states[-1] for _ in range(n)])
    D = e[ends] - e[i]
    sample = D[:, :, None] * D[:, None, :]
    P = expm(A.entries * h)[i]
    exact = sum(P[j] * np.outer(e[j] - e[i], e[j] - e[i]) for j in range(3))
    se = sample.std(axis=0, ddof=1) / np.sqrt(n)
    assert np.all(np.abs(sample.mean(axis=0) - exact) <= 4 * se + 1e-15)


def test_quadratic_variation_compensator_under_stationarity():
    A = RateMatrix(np.array(DESK_A))
    pi = A.stationary()
    T, n = 2.0, 4000
    grid = TimeGrid(T, 2)
    qv = np.array([quadratic_variation(simulate_ctmc(A, pi, T, seed=s), grid)[-1] for s in range(n)]) / T
    target = expected_q(A, pi)
    se = qv.std(axis=0, ddof=1) / np.sqrt(n)
    assert np.all(np.abs(qv.mean(axis=0) - target) <= 4 * se + 1e-12)


@settings(max_examples=60, deadline=None)
@given(d=st.integers(2, 4), seed=st.integers(0, 2**31 - 1), absorbing=st.booleans())
def test_simulated_paths_satisfy_invariants(d, seed, absorbing):
    rng = np.random.default_rng(seed)
    A = random_rate_matrix(rng, d)
    if absorbing:
        a = A.entries.copy()
        a[0] = 0.0
        A = RateMatrix(a)
    pi0 = rng.dirichlet(np.ones(d))
    path = simulate_ctmc(A, pi0, 2.0, seed=seed)
    assert np.all(np.diff(path.jump_times) > 0)
    assert np.all(path.states[1:] != path.states[:-1])
    assert path.states.min() >= 0 and path.states.max() < d
    if absorbing and 0 in path.states:
        assert path.states[-1] == 0
