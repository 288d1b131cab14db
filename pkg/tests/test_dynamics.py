import numpy as np
import pytest

from graphnls.dynamics import (EvolveConfig, Perturbation, ProfileFamily, conserved_quantities,
                               evolve, orbital_deviation, stability_experiment)
from graphnls.errors import BlowUpError, ConvergenceError, ValidationError
from graphnls.graph import (GridField, TwoComponentState, lp_norm, make_graph,
                            random_smooth_field, x_norm)
from graphnls.profiles import (CubicParams, PowerParams, coupled_cubic_ground_state,
                               j_closed_form, mass_targets)

FIXTURE_A = CubicParams(a=2.0, b=1.0, c=2.0, gamma=1.0, omega=0.16)
SYMMETRIC = ProfileFamily("two_component", omega=1.0, gamma=1.0, p=2.0, b=0.5)


@pytest.fixture(scope="module")
def small():
    return make_graph(3, 10.0, 501)


@pytest.fixture(scope="module")
def breather(small):
    """Non-stationary smooth data: unequal rescaling of the symmetric profile."""
    prof = SYMMETRIC.profile(small, discrete=True)
    return TwoComponentState(prof.u * 1.1, prof.v * 0.9)


def diff(a, b):
    return x_norm(TwoComponentState(a.u - b.u, a.v - b.v), tol=np.inf)


# -- conserved quantities --------------------------------------------------

def test_conserved_quantities_zero(small):
    assert conserved_quantities(TwoComponentState.zeros(small), FIXTURE_A) == (0, 0, 0, 0)


def test_conserved_quantities_fixture_a():
    g = make_graph(3, 30.0, 3001)
    qu, qv, E, q1 = conserved_quantities(coupled_cubic_ground_state(FIXTURE_A, g), FIXTURE_A)
    alpha, beta = mass_targets(FIXTURE_A, 3)
    # trapezoid vertex bias is about 4e-6 relative at h = 0.01
    assert qu == pytest.approx(alpha, rel=1e-5)
    assert qv == pytest.approx(beta, rel=1e-5)
    assert E == pytest.approx(j_closed_form(FIXTURE_A, 3)[2], rel=1e-4)
    assert q1 == 0.0


def test_rotation_profile_q1(small):
    fam = ProfileFamily("rotation", omega0=2.5, omega1=0.5, gamma=1.0)
    prof = fam.profile(small)
    _, _, _, q1 = conserved_quantities(prof, fam.params())
    # u = i Phi / sqrt 2, v = Phi / sqrt 2, so Im int u conj(v) = |Phi|^2 / 2
    assert q1 == pytest.approx(lp_norm(prof.v) ** 2, rel=1e-12)
    assert q1 > 0


# -- evolution -------------------------------------------------------------

def test_zero_state_stays_zero(small):
    final, trace = evolve(TwoComponentState.zeros(small), SYMMETRIC.params(),
                          EvolveConfig(dt=0.02, t_final=0.2))
    assert np.all(final.u.values == 0) and np.all(final.v.values == 0)
    assert max(trace.energy) == 0.0


def test_trace_shape(small, breather):
    _, trace = evolve(breather, SYMMETRIC.params(), EvolveConfig(dt=0.02, t_final=0.2))
    lists = [trace.times, trace.mass_u, trace.mass_v, trace.energy, trace.q1,
             trace.orbital_dev]
    assert {len(x) for x in lists} == {11}
    assert trace.times[-1] == pytest.approx(0.2)
    assert min(trace.orbital_dev) >= 0


def test_standing_wave_fixture_a():
    g = make_graph(3, 30.0, 3001)
    state = coupled_cubic_ground_state(FIXTURE_A, g)
    _, trace = evolve(state, FIXTURE_A, EvolveConfig(dt=0.01, t_final=20.0))
    assert max(trace.orbital_dev) <= 1e-4
    assert trace.drift("mass_u") <= 1e-8 and trace.drift("mass_v") <= 1e-8
    assert trace.drift("energy") <= 1e-6


def test_conservation_nonstationary(small, breather):
    _, trace = evolve(breather, SYMMETRIC.params(), EvolveConfig(dt=0.02, t_final=4.0))
    assert trace.drift("mass_u") <= 1e-8
    assert trace.drift("mass_v") <= 1e-8
    assert trace.drift("energy") <= 1e-6


def test_q1_conserved_for_rotation_system(small):
    fam = ProfileFamily("rotation", omega0=2.5, omega1=0.5, gamma=1.0)
    prof = fam.profile(small, discrete=True)
    rng = np.random.default_rng(3)
    state = TwoComponentState(prof.u + random_smooth_field(small, rng, True) * 0.05,
                              prof.v + random_smooth_field(small, rng, True) * 0.05)
    _, trace = evolve(state, fam.params(), EvolveConfig(dt=0.02, t_final=2.0))
    assert trace.drift("q1") <= 1e-6


def test_time_reversal(small, breather):
    cfg = EvolveConfig(dt=0.02, t_final=1.0)
    fwd, _ = evolve(breather, SYMMETRIC.params(), cfg)
    back, _ = evolve(fwd, SYMMETRIC.params(), EvolveConfig(dt=-0.02, t_final=1.0))
    scale = np.max(np.abs(breather.u.values))
    err = max(np.max(np.abs(back.u.values - breather.u.values)),
              np.max(np.abs(back.v.values - breather.v.values)))
    assert err <= 10 * cfg.nonlinear_tol * max(1.0, scale)


def test_second_order_in_time_for_standing_wave(small):
    prof = SYMMETRIC.profile(small, discrete=True)
    ref, _ = evolve(prof, SYMMETRIC.params(), EvolveConfig(dt=0.02 / 64, t_final=2.0))
    errs = [diff(evolve(prof, SYMMETRIC.params(), EvolveConfig(dt=dt, t_final=2.0))[0], ref)
            for dt in (0.02, 0.01, 0.005)]
    for e0, e1 in zip(errs, errs[1:]):
        assert 3.6 < e0 / e1 < 4.4


def test_strang_agrees_with_crank_nicolson(small, breather):
    a, _ = evolve(breather, SYMMETRIC.params(), EvolveConfig(dt=0.01, t_final=1.0))
    b, tr = evolve(breather, SYMMETRIC.params(),
                   EvolveConfig(dt=0.01, t_final=1.0, scheme="strang_split"))
    assert diff(a, b) < 2e-3 * x_norm(breather)
    assert tr.drift("mass_u") <= 1e-10


def test_dt_halving_is_logged(small):
    prof = SYMMETRIC.profile(small, discrete=True)
    _, trace = evolve(prof, SYMMETRIC.params(), EvolveConfig(dt=0.02, t_final=0.2, max_picard=8))
    assert trace.dt_halvings
    assert all(half < 0.02 for _, half in trace.dt_halvings)
    assert trace.drift("mass_u") <= 1e-8


def test_fixed_point_failure_raises(small):
    prof = SYMMETRIC.profile(small, discrete=True)
    with pytest.raises(ConvergenceError):
        evolve(prof, SYMMETRIC.params(), EvolveConfig(dt=0.02, t_final=0.2, max_picard=3))


def test_blowup_is_flagged(small):
    # focusing degree-9 nonlinearity with a heavy bump collapses
    params = PowerParams(p=3.0, q=10.0, r=10.0, a=1.0, b=0.0, c=1.0, gamma=1.0, omega=1.0)
    u = GridField.from_profile(small, lambda x: 1.2 * np.exp(-x ** 2))
    with pytest.raises(BlowUpError) as info:
        evolve(TwoComponentState(u, GridField.zeros(small)), params,
               EvolveConfig(dt=0.02, t_final=3.0))
    final, trace = info.value.result
    assert trace.blowup
    assert np.max(np.abs(final.u.values)) > 1.2


def test_dt_above_h_rejected(small):
    with pytest.raises(ValidationError):
        evolve(TwoComponentState.zeros(small), SYMMETRIC.params(),
               EvolveConfig(dt=0.05, t_final=1.0))


@pytest.mark.parametrize("kwargs", [dict(scheme="rk4"), dict(dt=0.0), dict(t_final=-1.0)])
def test_evolve_config_validation(kwargs):
    with pytest.raises(ValidationError):
        EvolveConfig(**kwargs)


def test_on_step_callback(small, breather):
    seen = []
    evolve(breather, SYMMETRIC.params(), EvolveConfig(dt=0.02, t_final=0.1),
           on_step=lambda *row: seen.append(row))
    assert len(seen) == 6 and len(seen[0]) == 6


# -- orbital deviation -----------------------------------------------------

def test_orbital_deviation_phase_orbit(small):
    prof = SYMMETRIC.profile(small)
    assert orbital_deviation(prof, prof) == 0.0
    rotated = prof.phase_rotated(np.pi / 3, -np.pi / 7)
    assert orbital_deviation(rotated, prof) < 1e-12
    assert orbital_deviation(prof.phase_rotated(0.4, 0.4), prof, "common") < 1e-12
    assert orbital_deviation(rotated, prof, "common") > 0.1


def test_orbital_deviation_zero_reference(small, breather):
    zero = TwoComponentState.zeros(small)
    assert orbital_deviation(breather, zero) == pytest.approx(x_norm(breather), rel=1e-12)


def test_orbital_deviation_monotone(small):
    prof = SYMMETRIC.profile(small)
    bump = GridField.from_profile(small, lambda x: np.exp(-(x - 2.0) ** 2))
    devs = [orbital_deviation(TwoComponentState(prof.u + bump * d, prof.v), prof)
            for d in np.linspace(0, 0.1, 11)]
    assert np.all(np.diff(devs) > 0)


def test_orbital_deviation_errors(small):
    prof = SYMMETRIC.profile(small)
    with pytest.raises(ValidationError):
        orbital_deviation(prof, SYMMETRIC.profile(make_graph(3, 10.0, 251)))
    with pytest.raises(ValidationError):
        orbital_deviation(prof, prof, "none")


# -- stability experiments (short horizons; full runs live in acceptance) ---

def test_stability_experiment_short_bounded(small):
    fam = ProfileFamily("one_component", omega=2.0, gamma=1.0, k=0)
    res = stability_experiment(fam, Perturbation(1e-3), EvolveConfig(dt=0.02, t_final=2.0),
                               graph=small)
    assert res.verdict == "BOUNDED"
    assert res.threshold == pytest.approx(1e-2)
    assert set(res.as_dict()) == {"verdict", "max_dev", "efold_rate", "horizon", "amplitude",
                                  "threshold", "predicted_rate"}


def test_stability_experiment_needs_unstable_mode(small):
    fam = ProfileFamily("one_component", omega=2.0, gamma=1.0, k=0)
    with pytest.raises(ValidationError):
        stability_experiment(fam, Perturbation(1e-3, "unstable_eigvec"),
                             EvolveConfig(dt=0.02, t_final=0.1), graph=small)


def test_perturbation_validation():
    with pytest.raises(ValidationError):
        Perturbation(1e-3, "sideways")
    with pytest.raises(ValidationError):
        ProfileFamily("three_component")
