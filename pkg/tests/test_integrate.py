import numpy as np
import pytest
from numba import njit
from scipy.integrate import solve_ivp

from scaleinv.integrate import (
    InputSignal,
    IntegrationError,
    PreAdaptationError,
    SteadyStateClass,
    find_steady_state,
    integrate,
    read_trajectory_csv,
    step_response,
)
from scaleinv.kinetics import Field, build_rhs, linear_ffl, linear_ffl_steady_state, load_fixture


@njit(cache=True)
def decay_rhs(x, u, p):
    return np.array([u - p[0] * x[0]])


@njit(cache=True)
def drift_rhs(x, u, p):
    return np.array([1.0])


@njit(cache=True)
def oscillator_rhs(x, u, p):
    return np.array([x[1], -x[0]])


@njit(cache=True)
def stiff_rhs(x, u, p):
    return np.array([-p[0] * (x[0] - np.cos(x[1])), 1.0])


def scalar(rhs, params=(1.0,), dim=1):
    return Field(rhs, np.array(params, dtype=float), dim, tuple(f"x{i}" for i in range(dim)), bounded=False,
                 output_index=0)


def test_exponential_decay():
    traj = integrate(scalar(decay_rhs), [1.0], 0.0, 1.0, samples=11)
    np.testing.assert_allclose(traj.y, np.exp(-traj.times), rtol=1e-7)
    assert traj.y[-1] == pytest.approx(np.exp(-1), rel=1e-8)


def test_piecewise_input():
    sig = InputSignal((0.0, 1.0), (0.0, 1.0))
    traj = integrate(scalar(decay_rhs), [0.0], sig, 3.0, t_eval=np.array([0.5, 1.0, 3.0]))
    np.testing.assert_allclose(traj.y, [0.0, 0.0, 1 - np.exp(-2.0)], atol=1e-8)


@pytest.mark.parametrize("u", [0.3, 0.6, 1.0, 3.0])
def test_eq3_steady_states(u):
    k = (1.0, 2.0, 0.5, 1.5, 3.0, 0.7)
    res = find_steady_state(linear_ffl(k).field(), u, np.ones(3))
    assert res.converged and res.classification == SteadyStateClass.CONVERGED
    np.testing.assert_allclose(res.state, linear_ffl_steady_state(k, u), rtol=1e-9)
    assert res.residual < 1e-9


def test_timed_out_classification():
    res = find_steady_state(scalar(drift_rhs), 0.0, [0.0], t_max=100.0)
    assert res.classification == SteadyStateClass.TIMED_OUT and not res.converged


def test_oscillatory_classification():
    res = find_steady_state(scalar(oscillator_rhs, dim=2), 0.0, [1.0, 0.0], t_max=200.0)
    assert res.classification == SteadyStateClass.OSCILLATORY


def test_step_budget_is_reported():
    with pytest.raises(IntegrationError):
        integrate(scalar(stiff_rhs, (1e7,), dim=2), [0.0, 0.0], 0.0, 10.0, max_steps=1000)
    res = find_steady_state(scalar(stiff_rhs, (1e7,), dim=2), 0.0, [0.0, 0.0], max_steps=1000)
    assert res.classification == SteadyStateClass.STIFF_FAILED


def test_step_response_matches_radau():
    fld = build_rhs(load_fixture("circuit-01"))
    traj = step_response(fld, 0.5, 0.6, samples=401)
    x0 = traj.states[0]
    ref = solve_ivp(lambda t, x: fld(x, 0.6), (0, traj.times[-1]), x0, method="Radau", rtol=1e-11, atol=1e-13,
                    t_eval=traj.times, jac=lambda t, x: fld.jacobian(x, 0.6))
    np.testing.assert_allclose(traj.states, ref.y.T, atol=1e-7)
    assert traj.equilibrated


def test_step_response_starts_at_equilibrium():
    fld = build_rhs(load_fixture("circuit-05"))
    traj = step_response(fld, 0.3, 0.36)
    assert np.max(np.abs(fld(traj.states[0], 0.3))) < 1e-9
    assert np.max(np.abs(fld(traj.states[-1], 0.36))) < 1e-6
    assert traj.input.at(-1.0) == 0.3 and traj.input.at(0.0) == 0.36


def test_no_step_stays_put():
    fld = build_rhs(load_fixture("circuit-01"))
    traj = step_response(fld, 0.4, 0.4, samples=50)
    np.testing.assert_allclose(traj.states, np.broadcast_to(traj.states[0], traj.states.shape), atol=1e-9)


def test_determinism():
    fld = build_rhs(load_fixture("circuit-09"))
    a = step_response(fld, 0.5, 0.6)
    b = step_response(fld, 0.5, 0.6)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.times, b.times)


def test_refining_the_grid_does_not_change_values():
    fld = build_rhs(load_fixture("circuit-01"))
    x0 = find_steady_state(fld, 0.5, np.full(3, 0.5)).state
    coarse = integrate(fld, x0, 0.6, 50.0, samples=51)
    fine = integrate(fld, x0, 0.6, 50.0, samples=5001)
    np.testing.assert_allclose(fine.states[::100], coarse.states, atol=1e-8)


def test_pre_adaptation_failure():
    with pytest.raises(PreAdaptationError) as info:
        step_response(scalar(drift_rhs), 0.0, 1.0, t_max=10.0)
    assert info.value.result.classification == SteadyStateClass.TIMED_OUT


def test_csv_roundtrip(tmp_path):
    fld = build_rhs(load_fixture("circuit-01"))
    traj = integrate(fld, np.full(3, 0.5), InputSignal((0.3, 0.6), (0.0, 5.0)), 10.0, samples=21)
    traj.to_csv(tmp_path / "t.csv")
    back = read_trajectory_csv(tmp_path / "t.csv")
    assert np.array_equal(back.states, traj.states) and np.array_equal(back.times, traj.times)
    np.testing.assert_array_equal(back.input.at(back.times), traj.input.at(traj.times))


def test_invalid_arguments():
    fld = scalar(decay_rhs)
    with pytest.raises(ValueError):
        integrate(fld, [1.0], 0.0, 0.0)
    with pytest.raises(ValueError):
        integrate(fld, [1.0], 0.0, 1.0, rtol=0.0)
