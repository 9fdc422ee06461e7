import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from ira_mmc.optimizer import (
    GcmmaState,
    MmaState,
    SwitchMonitor,
    build_subproblem,
    check_stop,
    gcmma_step,
    mma_step,
    should_switch,
)


def _random_problem(rng, n):
    x = rng.uniform(0.2, 0.8, n)
    return x, rng.standard_normal(n), float(rng.uniform(-0.5, 0.5)), rng.standard_normal(n)


# ---------------------------------------------------------------- MMA


def test_mma_one_variable_quadratic_decreases_to_optimum():
    state = MmaState(np.array([-5.0]), np.array([5.0]))
    x = np.array([3.0])
    values = [float((x[0] - 1) ** 2)]
    for it in range(1, 50):
        # the constraint x - 10 <= 0 never binds
        x_new = mma_step(x, values[-1], 2 * (x - 1), x[0] - 10.0, np.ones(1), state)
        values.append(float((x_new[0] - 1) ** 2))
        stop, reason = check_stop(x_new, x, 1e-3, it, 50)
        x = x_new
        if stop:
            break
    assert reason == "converged"
    assert all(b <= a + 1e-15 for a, b in zip(values, values[1:]))
    assert x[0] == pytest.approx(1.0, abs=1e-3)


@settings(max_examples=30)
@given(x0=st.floats(0.0, 1.0), c=st.floats(0.05, 0.95), w=st.floats(0.1, 100.0))
def test_gcmma_descends_monotonically(x0, c, w):
    state = GcmmaState(np.zeros(1), np.ones(1), move_limit=0.2)

    def ev(z):
        return float(w * (z[0] - c) ** 2), float(z[0] - 2.0)

    x = np.array([x0])
    f, g = ev(x)
    for _ in range(60):
        res = gcmma_step(x, f, np.array([2 * w * (x[0] - c)]), g, np.ones(1), ev, state)
        if res.conservative:
            assert res.f0 <= f + 1e-12 * max(1.0, f)
        x, f, g = res.x, res.f0, res.g
    assert abs(x[0] - c) <= 2e-2


@settings(max_examples=50)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 30))
def test_subproblem_dual_solution_satisfies_kkt(seed, n):
    rng = np.random.default_rng(seed)
    x, df0, g, dg = _random_problem(rng, n)
    state = MmaState(np.zeros(n), np.ones(n))
    sub = build_subproblem(x, 1.0, df0, g, dg, state)
    assert sub.kkt_residual(sub.solve()) <= 1e-8


@pytest.mark.parametrize("seed", range(5))
def test_subproblem_matches_generic_constrained_solver(seed):
    rng = np.random.default_rng(seed)
    n = 6
    x, df0, g, dg = _random_problem(rng, n)
    state = MmaState(np.zeros(n), np.ones(n), move_limit=0.3)
    sub = build_subproblem(x, 1.0, df0, g, dg, state)
    sol = sub.solve()
    assert sol.y == 0.0
    ref = minimize(
        lambda z: sub.approx(z)[0],
        x,
        method="SLSQP",
        bounds=list(zip(sub.alpha, sub.beta)),
        constraints=[{"type": "ineq", "fun": lambda z: -sub.approx(z)[1]}],
        options={"ftol": 1e-14, "maxiter": 500},
    )
    assert ref.success
    assert sub.approx(sol.x)[0] <= ref.fun + 1e-8
    np.testing.assert_allclose(sol.x, ref.x, atol=1e-5)


@settings(max_examples=50)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 20), steps=st.integers(1, 8))
def test_iterates_stay_in_box_and_between_asymptotes(seed, n, steps):
    rng = np.random.default_rng(seed)
    xmin, xmax = -rng.uniform(0.1, 2, n), rng.uniform(0.1, 2, n)
    state = MmaState(xmin, xmax, move_limit=0.2)
    x = rng.uniform(xmin, xmax)
    for _ in range(steps):
        x_new = mma_step(x, 0.0, rng.standard_normal(n), float(rng.uniform(-1, 1)), rng.standard_normal(n), state)
        assert np.all(state.low < x) and np.all(x < state.upp)
        assert np.all(x_new >= xmin) and np.all(x_new <= xmax)
        assert np.all(np.abs(x_new - x) <= 0.2 * (xmax - xmin) + 1e-12)
        x = x_new


def test_unreachable_constraint_uses_artificial_variable():
    n = 4
    state = MmaState(np.zeros(n), np.ones(n), move_limit=0.01)
    x = np.full(n, 0.5)
    # the constraint needs a much bigger step than the move limit allows
    sub = build_subproblem(x, 0.0, np.zeros(n), 5.0, np.ones(n), state)
    sol = sub.solve()
    assert sol.y > 0
    np.testing.assert_allclose(sol.x, x - 0.01, rtol=1e-9)


def test_state_validation():
    with pytest.raises(ValueError):
        MmaState(np.ones(2), np.zeros(2))
    with pytest.raises(ValueError):
        MmaState(np.array([-np.inf]), np.array([1.0]))
    state = MmaState(np.zeros(2), np.ones(2))
    with pytest.raises(ValueError):
        mma_step(np.array([0.5, 2.0]), 0.0, np.zeros(2), 0.0, np.zeros(2), state)
    with pytest.raises(ValueError):
        mma_step(np.array([0.5, 0.5]), 0.0, np.zeros(3), 0.0, np.zeros(2), state)


# ---------------------------------------------------------------- GCMMA


def _quadratic(center, weight):
    def evaluator(z):
        return float(weight * np.sum((z - center) ** 2)), float(np.sum(z) - 10.0)

    return evaluator


def test_gcmma_rho_grows_until_conservative():
    n = 3
    center = np.full(n, 0.5)
    ev = _quadratic(center, 100.0)
    x = center + 1e-4  # tiny gradient, large curvature: the first guess is far too bold
    state = GcmmaState(np.zeros(n), np.ones(n), move_limit=0.5, rho_eps=1e-12)
    f0, g = ev(x)
    res = gcmma_step(x, f0, 200.0 * (x - center), g, np.ones(n), ev, state)
    rho0 = [r[0] for r in res.rho_history]
    assert res.inner_iterations >= 1
    assert all(b > a for a, b in zip(rho0, rho0[1:]))
    assert res.conservative
    f_apx, g_apx = state.last_subproblem.approx(res.x)
    assert f_apx >= res.f0 and g_apx >= res.g
    assert res.f0 <= f0


def test_gcmma_linear_problem_accepts_first_trial():
    n = 4
    c = np.array([1.0, -2.0, 0.5, 0.0])

    def ev(z):
        return float(c @ z), float(np.sum(z) - 3.0)

    x = np.full(n, 0.5)
    state = GcmmaState(np.zeros(n), np.ones(n))
    res = gcmma_step(x, *ev(x)[:1], c, ev(x)[1], np.ones(n), ev, state)
    assert res.inner_iterations == 0 and res.conservative
    # same subproblem solved directly
    twin = GcmmaState(np.zeros(n), np.ones(n))
    sub = build_subproblem(x, ev(x)[0], c, ev(x)[1], np.ones(n), twin, state.rho0, state.rho1)
    np.testing.assert_array_equal(sub.solve().x, res.x)


def test_gcmma_fixed_point():
    n = 3
    x = np.array([0.2, 0.5, 0.7])
    state = GcmmaState(np.zeros(n), np.ones(n))

    def ev(z):
        return 1.0, -1.0

    res = gcmma_step(x, 1.0, np.zeros(n), -1.0, np.zeros(n), ev, state)
    np.testing.assert_allclose(res.x, x, atol=1e-14)
    assert res.conservative


def test_gcmma_inner_cap():
    n = 2
    state = GcmmaState(np.zeros(n), np.ones(n), inner_iter_cap=3)
    x = np.full(n, 0.5)

    def ev(z):  # always worse than any approximation can promise
        return 1e9, 0.0

    res = gcmma_step(x, 0.0, np.ones(n), -1.0, np.ones(n), ev, state)
    assert res.inner_iterations == 3 and not res.conservative
    assert len(res.rho_history) == 4


# ---------------------------------------------------------------- switch and stop


def _monitor(values, delta=0.002):
    m = SwitchMonitor(delta)
    m.f_hist = list(values)
    return m


@pytest.mark.parametrize(
    "values,expected",
    [((100, 100, 100), False), ((10, 9.999, 10.0), True), ((10, 8, 9), False), ((10, 9), False), ((), False)],
)
def test_should_switch_examples(values, expected):
    assert should_switch(_monitor(values)) is expected


@given(
    a=st.floats(0.1, 100), b=st.floats(0.1, 100), c=st.floats(0.1, 100),
    k=st.floats(1e-3, 1e3), sign=st.sampled_from([-1.0, 1.0]),
)
def test_should_switch_scale_and_sign_invariant(a, b, c, k, sign):
    assert should_switch(_monitor((a, b, c))) == should_switch(_monitor((sign * k * a, sign * k * b, sign * k * c)))


def test_switch_latches():
    m = SwitchMonitor(0.002)
    sequence = [20.0, 15.0, 12.0, 11.0, 10.0, 9.999, 10.0, 7.0, 12.0, 3.0]
    states = [m.push(f, i) for i, f in enumerate(sequence)]
    first = states.index(True)
    assert first == 6 and all(states[first:])
    assert m.switch_iteration == 6


@pytest.mark.parametrize(
    "change,it,expected",
    [(5e-4, 3, (True, "converged")), (5e-3, 50, (True, "budget")), (5e-3, 10, (False, None))],
)
def test_check_stop_examples(change, it, expected):
    x_old = np.zeros(3)
    x_new = np.array([0.0, change, -change / 2])
    assert check_stop(x_new, x_old, 1e-3, it, 50) == expected
