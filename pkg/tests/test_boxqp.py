import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import enumerate_box_qp, random_spd
from splitsqp.boxqp import (BoxQP, NotPositiveDefiniteError, project_box,
                            recover_projection_multipliers, solve_box_qp)


def _random_qp(rng, n):
    H = random_spd(rng, n, cond=50.0)
    g = 3.0 * rng.standard_normal(n)
    lower = -rng.uniform(0.1, 2.0, n)
    upper = rng.uniform(0.1, 2.0, n)
    return BoxQP(H, g, lower, upper)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 6))
def test_matches_enumeration(seed, n):
    qp = _random_qp(np.random.default_rng(seed), n)
    sol = solve_box_qp(qp)
    ref = enumerate_box_qp(qp.H, qp.g, qp.lower, qp.upper)
    assert np.max(np.abs(sol.v_star - ref)) <= 1e-8


def test_multipliers_satisfy_stationarity_and_signs(rng):
    for _ in range(20):
        qp = _random_qp(rng, 10)
        sol = solve_box_qp(qp)
        grad = qp.H @ sol.v_star + qp.g
        assert np.allclose(grad - sol.alpha + sol.gamma, 0.0, atol=1e-9)
        assert np.all(sol.alpha >= 0) and np.all(sol.gamma >= 0)
        assert np.allclose(sol.alpha * (sol.v_star - qp.lower), 0.0, atol=1e-9)
        assert np.allclose(sol.gamma * (qp.upper - sol.v_star), 0.0, atol=1e-9)


def test_interior_minimizer_is_newton_point(rng):
    H = random_spd(rng, 4)
    g = 0.01 * rng.standard_normal(4)
    sol = solve_box_qp(BoxQP(H, g, np.full(4, -10.0), np.full(4, 10.0)))
    assert np.allclose(sol.v_star, np.linalg.solve(H, -g), atol=1e-12)
    assert not sol.alpha.any() and not sol.gamma.any()


def test_infinite_bounds_are_supported(rng):
    H = random_spd(rng, 3)
    g = rng.standard_normal(3)
    sol = solve_box_qp(BoxQP(H, g, np.full(3, -np.inf), np.full(3, np.inf)))
    assert np.allclose(sol.v_star, np.linalg.solve(H, -g))


def test_one_dimensional_clipping():
    sol = solve_box_qp(BoxQP(np.array([[2.0]]), np.array([-10.0]), np.array([0.0]), np.array([1.0])))
    assert sol.v_star[0] == 1.0
    assert sol.gamma[0] == pytest.approx(8.0)


def test_indefinite_matrix_is_rejected():
    with pytest.raises(NotPositiveDefiniteError) as err:
        BoxQP(np.diag([1.0, -1.0]), np.zeros(2), -np.ones(2), np.ones(2))
    assert err.value.smallest_pivot == pytest.approx(-1.0)


def test_empty_problem():
    sol = solve_box_qp(BoxQP(np.zeros((0, 0)), np.zeros(0), np.zeros(0), np.zeros(0)))
    assert sol.v_star.size == 0


def test_projection_and_multipliers():
    lower, upper = np.array([0.0, 0.0, 0.0]), np.array([1.0, 1.0, 1.0])
    hat = np.array([-0.5, 0.3, 2.0])
    v = project_box(hat, lower, upper)
    assert np.array_equal(v, [0.0, 0.3, 1.0])
    alpha, gamma = recover_projection_multipliers(v, hat, 4.0, lower, upper)
    assert np.allclose(4.0 * (v - hat) - alpha + gamma, 0.0)
    assert np.array_equal(alpha, [2.0, 0.0, 0.0]) and np.array_equal(gamma, [0.0, 0.0, 4.0])
    with pytest.raises(ValueError):
        recover_projection_multipliers(hat, hat, 1.0, lower, upper)
