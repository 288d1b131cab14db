from fractions import Fraction

import numpy as np
import pytest

from graphnls.errors import ConvergenceError, ValidationError
from graphnls.graph import TwoComponentState, kinetic_form, lp_norm, make_graph
from graphnls.profiles import (CubicParams, coupled_cubic_ground_state, half_soliton, j_closed_form,
                               j_endpoint, j_single, mass_targets)
from graphnls.variational import (MinimizeConfig, energy, minimize_fixed_masses, minimize_single,
                                  single_coefficient)

FIXTURE_A = CubicParams(a=2.0, b=1.0, c=2.0, gamma=1.0, omega=0.16)

# fixture A: alpha = beta = 2/15, K1 = 3/2; J1 = -(K^2 a^3/3 + K gamma a^2 + gamma^2 a)/9
_A = Fraction(2, 15)
_K = Fraction(3, 2)
J1_EXACT = float(-(_K ** 2 * _A ** 3 / 3 + _K * _A ** 2 + _A) / 9)


@pytest.fixture(scope="module")
def desk():
    return make_graph(3, 30.0, 3001)


@pytest.fixture(scope="module")
def ground(desk):
    alpha, beta = mass_targets(FIXTURE_A, 3)
    return minimize_fixed_masses(FIXTURE_A, alpha, beta, MinimizeConfig(), graph=desk)


def test_j1_oracle_value():
    assert J1_EXACT == pytest.approx(-0.017975, abs=5e-7)
    assert j_closed_form(FIXTURE_A, 3)[0] == pytest.approx(J1_EXACT, rel=1e-13)


# -- energy functional -----------------------------------------------------

def test_energy_of_zero_state(desk):
    assert energy(TwoComponentState.zeros(desk), FIXTURE_A) == 0.0


def test_energy_closed_form_ground_state(desk):
    state = coupled_cubic_ground_state(FIXTURE_A, desk)
    assert energy(state, FIXTURE_A) == pytest.approx(2 * J1_EXACT, rel=1e-4)


def test_energy_phase_invariant(desk):
    state = coupled_cubic_ground_state(FIXTURE_A, desk)
    E = energy(state, FIXTURE_A)
    assert energy(state.phase_rotated(0.7, -2.1), FIXTURE_A) == pytest.approx(E, rel=1e-13)


def test_energy_cubic_formula(desk):
    # E = |u'|^2 + |v'|^2 - gamma(...) - (a|u|_4^4 + c|v|_4^4)/2 - b|uv|_2^2 with u = 2v
    phi = half_soliton(0.5, 1.0, desk)
    state = TwoComponentState(phi * 2.0, phi)
    kin = kinetic_form(phi, 1.0) * 5
    q4 = lp_norm(phi, 4) ** 4
    expect = kin - (2.0 * 16 * q4 + 2.0 * q4) / 2 - 1.0 * 4 * q4
    assert energy(state, FIXTURE_A) == pytest.approx(expect, rel=1e-12)


# -- fixed-mass minimization -----------------------------------------------

def test_ground_state_energy_and_multipliers(ground):
    assert ground.converged
    assert ground.energy == pytest.approx(2 * J1_EXACT, rel=1e-4)
    assert ground.omega1 == pytest.approx(0.16, abs=1e-3)
    assert ground.omega2 == pytest.approx(0.16, abs=1e-3)
    assert abs(ground.omega1 - ground.omega2) < 1e-3
    assert ground.energy < 0


def test_ground_state_matches_closed_form_pair(desk, ground):
    ref = coupled_cubic_ground_state(FIXTURE_A, desk)
    assert np.max(np.abs(ground.state.u.values - ref.u.values)) < 1e-3
    assert np.max(np.abs(ground.state.v.values - ref.v.values)) < 1e-3
    # canonical phase: vertex value real and positive
    assert ground.state.u.values[0, 0].real > 0 and ground.state.u.values[0, 0].imag == 0


def test_ground_state_ratio_law():
    # a != c so the two components have different amplitudes
    params = CubicParams(a=2.0, b=1.0, c=3.0, gamma=1.0, omega=0.16)
    graph = make_graph(3, 30.0, 1501)
    alpha, beta = mass_targets(params, 3)
    res = minimize_fixed_masses(params, alpha, beta, MinimizeConfig(), graph=graph)
    assert res.converged
    a, b, c = params.a, params.b, params.c
    left = ((b - a) / (b - c)) ** 0.25 * np.abs(res.state.u.values)
    right = ((b - c) / (b - a)) ** 0.25 * np.abs(res.state.v.values)
    np.testing.assert_allclose(left, right, atol=1e-3)


def test_masses_and_monotone_energy(ground):
    alpha, beta = mass_targets(FIXTURE_A, 3)
    assert lp_norm(ground.state.u) ** 2 == pytest.approx(alpha, rel=1e-12)
    assert lp_norm(ground.state.v) ** 2 == pytest.approx(beta, rel=1e-12)
    energies = np.array([e for _, e, _ in ground.trace])
    assert np.all(np.diff(energies) <= 1e-13 * np.abs(energies[1:]))


@pytest.mark.parametrize("kind", ["closed_form_perturbed", "random"])
def test_initialization_independence(desk, ground, kind):
    alpha, beta = mass_targets(FIXTURE_A, 3)
    res = minimize_fixed_masses(FIXTURE_A, alpha, beta, MinimizeConfig(init_kind=kind),
                                graph=desk)
    assert res.energy == pytest.approx(ground.energy, rel=1e-5)


def test_complex_descent_reaches_same_energy(desk, ground):
    alpha, beta = mass_targets(FIXTURE_A, 3)
    res = minimize_fixed_masses(FIXTURE_A, alpha, beta, MinimizeConfig(complex_fields=True),
                                graph=desk)
    assert res.energy == pytest.approx(ground.energy, rel=1e-5)


def test_non_convergence_is_flagged(desk):
    alpha, beta = mass_targets(FIXTURE_A, 3)
    res = minimize_fixed_masses(FIXTURE_A, alpha, beta, MinimizeConfig(max_iters=3), graph=desk)
    assert not res.converged and res.iterations == 3


def test_step_floor_raises(desk):
    alpha, beta = mass_targets(FIXTURE_A, 3)
    cfg = MinimizeConfig(step_size=1e3, min_step=1e2, max_step=1e4)
    with pytest.raises(ConvergenceError):
        minimize_fixed_masses(FIXTURE_A, alpha, beta, cfg, graph=desk)


@pytest.mark.parametrize("kwargs", [dict(init_kind="uniform"), dict(step_size=0.0),
                                    dict(max_iters=0)])
def test_config_validation(kwargs):
    with pytest.raises(ValidationError):
        MinimizeConfig(**kwargs)


def test_minimize_rejects_bad_masses(desk):
    with pytest.raises(ValidationError):
        minimize_fixed_masses(FIXTURE_A, 0.0, 0.1, graph=desk)
    with pytest.raises(ValidationError):
        minimize_fixed_masses(FIXTURE_A, 0.1, 0.1)


# -- single-constraint reductions ------------------------------------------

def test_single_j1_value(desk):
    alpha, _ = mass_targets(FIXTURE_A, 3)
    _, E, res = minimize_single("J1", alpha, FIXTURE_A, graph=desk)
    assert res.converged
    assert E == pytest.approx(J1_EXACT, rel=1e-4)
    assert res.omega1 == pytest.approx(0.16, abs=1e-3)


def test_single_coefficients():
    assert single_coefficient("J1", FIXTURE_A) == 1.5
    assert single_coefficient("J2", FIXTURE_A) == 1.5
    assert single_coefficient("endpoint_a", FIXTURE_A) == 1.0
    with pytest.raises(ValidationError):
        single_coefficient("J3", FIXTURE_A)


def test_single_rejects_nonpositive_coefficient(desk):
    weird = CubicParams(a=-2.0, b=1.0, c=2.0, gamma=1.0, omega=0.16)
    with pytest.raises(ValidationError):
        minimize_single("endpoint_a", 0.1, weird, graph=desk)
    with pytest.raises(ValidationError):
        minimize_single("J1", -0.1, FIXTURE_A, graph=desk)


def test_subadditivity(desk):
    alpha, _ = mass_targets(FIXTURE_A, 3)
    _, full, _ = minimize_single("J1", alpha, FIXTURE_A, graph=desk)
    _, half, _ = minimize_single("J1", alpha / 2, FIXTURE_A, graph=desk)
    assert full < 2 * half
    assert half == pytest.approx(j_single(alpha / 2, 1.5, 1.0, 3), rel=1e-4)


def test_endpoint_exceeds_j2(desk):
    _, beta = mass_targets(FIXTURE_A, 3)
    _, E_end, _ = minimize_single("endpoint_c", beta, FIXTURE_A, graph=desk)
    _, E_j2, _ = minimize_single("J2", beta, FIXTURE_A, graph=desk)
    assert E_end > E_j2
    assert E_end == pytest.approx(j_endpoint(beta, 2.0, 1.0, 3), rel=1e-4)
