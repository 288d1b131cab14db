"""Time integration of the coupled system and orbital-stability experiments.

The default scheme is Crank-Nicolson with a discrete-gradient midpoint
nonlinearity,

    W (u1 - u0) = i dt ( -K ubar + W g_u ubar ),   ubar = (u0 + u1) / 2,

where g_u is the symmetric difference quotient of G in |u|^2.  The
implicit equation is solved by Picard iteration.  The scheme conserves
both masses and the discrete energy up to the fixed-point tolerance and
is symmetric, hence time reversible.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import BlowUpError, ConvergenceError, ValidationError
from .graph import (GridField, StarGraph, TwoComponentState, complex_pairing, from_vector,
                    random_smooth_field, to_vector, x_norm)
from .operators import (assemble_one_component_linearization,
                        assemble_two_component_linearization, instability_eigenvalues,
                        stiffness_matrix)
from .profiles import (CubicParams, PowerParams, coupled_cubic_ground_state, nls_profile_family,
                       polish_profile, potential_density, potential_partials, rotation_params,
                       rotation_profile, two_component_params, two_component_profile)

SCHEMES = ("crank_nicolson_fixed_point", "strang_split")
GROWTH_FACTOR = 10.0
BLOWUP_FACTOR = 1e3


@dataclass
class EvolveConfig:
    dt: float = 0.01
    t_final: float = 1.0
    scheme: str = "crank_nicolson_fixed_point"
    nonlinear_tol: float = 1e-13
    max_picard: int = 50
    max_halvings: int = 6

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValidationError(f"scheme must be one of {SCHEMES}")
        if self.dt == 0 or not self.t_final >= 0:
            raise ValidationError("need dt != 0 and t_final >= 0")


@dataclass
class EvolutionTrace:
    times: list = field(default_factory=list)
    mass_u: list = field(default_factory=list)
    mass_v: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    q1: list = field(default_factory=list)
    orbital_dev: list = field(default_factory=list)
    dt_halvings: list = field(default_factory=list)
    blowup: bool = False

    def append(self, t, qu, qv, E, q1, dev):
        self.times.append(t)
        self.mass_u.append(qu)
        self.mass_v.append(qv)
        self.energy.append(E)
        self.q1.append(q1)
        self.orbital_dev.append(dev)

    def drift(self, name: str) -> float:
        """max_t |X(t) - X(0)| / |X(0)| (absolute when X(0) = 0)."""
        vals = np.asarray(getattr(self, name))
        ref = abs(vals[0])
        return float(np.max(np.abs(vals - vals[0])) / (ref if ref > 0 else 1.0))


def _power(params) -> PowerParams:
    return params.as_power() if isinstance(params, CubicParams) else params


# -- diagnostics -----------------------------------------------------------

def conserved_quantities(state: TwoComponentState, params) -> tuple[float, float, float, float]:
    """(Q(u), Q(v), E(u, v), Q1(u, v) = Im int u conj(v))."""
    params = _power(params)
    graph = state.graph
    w = graph.vector_weights()
    K = stiffness_matrix(graph, float(params.gamma))
    u, v = to_vector(state.u), to_vector(state.v)
    return _quantities(u, v, w, K, params)


def _quantities(u, v, w, K, params):
    ru, rv = np.abs(u) ** 2, np.abs(v) ** 2
    kin = np.real(np.vdot(u, K @ u)) + np.real(np.vdot(v, K @ v))
    E = kin - np.dot(w, potential_density(ru, rv, params))
    q1 = np.imag(np.sum(w * u * np.conj(v)))
    return float(np.dot(w, ru)), float(np.dot(w, rv)), float(E), float(q1)


def orbital_deviation(state: TwoComponentState, reference: TwoComponentState,
                      phases: str = "independent") -> float:
    """inf over phases of ||state - phased reference||_X."""
    if state.graph != reference.graph:
        raise ValidationError("state and reference live on different graphs")
    cu = complex_pairing(state.u, reference.u, h1=True)
    cv = complex_pairing(state.v, reference.v, h1=True)
    if phases == "independent":
        tu, tv = np.angle(cu), np.angle(cv)
    elif phases == "common":
        tu = tv = np.angle(cu + cv)
    else:
        raise ValidationError("phases must be 'independent' or 'common'")
    diff = TwoComponentState(state.u - reference.u * np.exp(1j * tu),
                             state.v - reference.v * np.exp(1j * tv))
    return x_norm(diff, tol=np.inf)


# -- time stepping ---------------------------------------------------------

def _power_quotient(x0: np.ndarray, x1: np.ndarray, m: float) -> np.ndarray:
    """(x1^m - x0^m) / (x1 - x0) for x0, x1 >= 0, evaluated without cancellation."""
    if m == 1:
        return np.ones_like(x0)
    if m == 2:
        return x0 + x1
    if m == 3:
        return x0 * x0 + x0 * x1 + x1 * x1
    hi = np.maximum(x0, x1)
    lo = np.minimum(x0, x1)
    out = np.zeros_like(hi)
    pos = hi > 0
    h, l = hi[pos], lo[pos]
    with np.errstate(divide="ignore", invalid="ignore"):
        lt = np.log(l / h)
        ratio = np.where(lt == 0.0, m, np.expm1(m * lt) / np.expm1(lt))
    out[pos] = h ** (m - 1) * ratio
    return out


def _discrete_gradient(r0, r1, s0, s1, params):
    """Symmetric difference quotients of G in rho = |u|^2 and sigma = |v|^2."""
    p, q, r = params.p, params.q, params.r
    gu = (2 * params.a / q) * _power_quotient(r0, r1, q / 2)
    gv = (2 * params.c / r) * _power_quotient(s0, s1, r / 2)
    if params.b != 0:
        cb = params.b / p
        gu = gu + cb * (s0 ** (p / 2) + s1 ** (p / 2)) * _power_quotient(r0, r1, p / 2)
        gv = gv + cb * (r0 ** (p / 2) + r1 ** (p / 2)) * _power_quotient(s0, s1, p / 2)
    return gu, gv


class _Stepper:
    def __init__(self, graph: StarGraph, params: PowerParams, cfg: EvolveConfig):
        self.params = params
        self.cfg = cfg
        self.K = stiffness_matrix(graph, float(params.gamma)).tocsc()
        self.w = graph.vector_weights()
        self.W = sp.diags(self.w).tocsc()
        self._lu = {}
        self.cap = np.inf
        self.diverged = False
        self.fail_time = 0.0

    def _factor(self, dt):
        if dt not in self._lu:
            lhs = (self.W + 0.5j * dt * self.K).tocsc()
            rhs = (self.W - 0.5j * dt * self.K).tocsr()
            self._lu[dt] = (spla.splu(lhs), rhs)
        return self._lu[dt]

    def step(self, u0, v0, dt):
        """One step; returns (u1, v1) or None if the fixed point fails."""
        self.diverged = False
        lu, rhs_mat = self._factor(dt)
        if self.cfg.scheme == "strang_split":
            u, v = self._phase(u0, v0, 0.5 * dt)
            X = lu.solve(np.column_stack([rhs_mat @ u, rhs_mat @ v]))
            return self._phase(X[:, 0], X[:, 1], 0.5 * dt)
        base = np.column_stack([rhs_mat @ u0, rhs_mat @ v0])
        r0, s0 = np.abs(u0) ** 2, np.abs(v0) ** 2
        u1, v1 = u0, v0
        tol = self.cfg.nonlinear_tol
        for _ in range(self.cfg.max_picard):
            with np.errstate(over="ignore", invalid="ignore"):
                gu, gv = _discrete_gradient(r0, np.abs(u1) ** 2, s0, np.abs(v1) ** 2,
                                            self.params)
                ub, vb = 0.5 * (u0 + u1), 0.5 * (v0 + v1)
                X = lu.solve(base + 1j * dt * np.column_stack([self.w * gu * ub,
                                                               self.w * gv * vb]))
            un, vn = X[:, 0], X[:, 1]
            scale = max(1.0, np.max(np.abs(un)), np.max(np.abs(vn)))
            if not np.isfinite(scale) or scale > self.cap:
                # iterates run away: the nonlinearity dominates at this amplitude
                self.diverged = True
                return None
            err = max(np.max(np.abs(un - u1)), np.max(np.abs(vn - v1)))
            u1, v1 = un, vn
            if err <= tol * scale:
                return u1, v1
        return None

    def _phase(self, u, v, dt):
        gu, gv = potential_partials(np.abs(u) ** 2, np.abs(v) ** 2, self.params)
        return u * np.exp(1j * dt * gu), v * np.exp(1j * dt * gv)


def evolve(initial: TwoComponentState, params, cfg: EvolveConfig,
           reference: TwoComponentState | None = None,
           on_step: Callable | None = None,
           phases: str = "independent") -> tuple[TwoComponentState, EvolutionTrace]:
    """Integrate i u_t + Delta_gamma u + g_u u = 0 (and the v equation).

    A negative dt integrates backward in time.  ``on_step`` receives
    (t, Q_u, Q_v, E, Q1, dev) after every recorded step.
    """
    params = replace(_power(params), rotation=0.0)
    graph = initial.graph
    h = graph.spacing
    if abs(cfg.dt) > h * (1 + 1e-12):
        raise ValidationError(f"|dt| = {abs(cfg.dt)} exceeds the grid spacing h = {h}")
    initial.u.check_continuity()
    initial.v.check_continuity()
    reference = reference if reference is not None else initial
    stepper = _Stepper(graph, params, cfg)
    w, K = stepper.w, stepper.K
    u, v = to_vector(initial.u), to_vector(initial.v)
    sup0 = max(np.max(np.abs(u)), np.max(np.abs(v)))
    stepper.cap = BLOWUP_FACTOR * max(sup0, 1.0)
    trace = EvolutionTrace()

    def record(t, u, v):
        st = TwoComponentState(from_vector(graph, u), from_vector(graph, v))
        qu, qv, E, q1 = _quantities(u, v, w, K, params)
        dev = orbital_deviation(st, reference, phases)
        trace.append(t, qu, qv, E, q1, dev)
        if on_step is not None:
            on_step(t, qu, qv, E, q1, dev)

    record(0.0, u, v)
    n_steps = int(round(cfg.t_final / abs(cfg.dt)))
    t = 0.0
    def blowup(t, u, v, what="sup norm"):
        trace.blowup = True
        final = TwoComponentState(from_vector(graph, np.nan_to_num(u)),
                                  from_vector(graph, np.nan_to_num(v)))
        return BlowUpError(f"{what} exceeded {BLOWUP_FACTOR:g} x initial at t = {t:.6g}",
                           result=(final, trace))

    for n in range(1, n_steps + 1):
        out = stepper.step(u, v, cfg.dt)
        if out is None:
            try:
                out = _halved(stepper, u, v, cfg.dt, cfg.max_halvings, trace, t)
            except ConvergenceError:
                if stepper.diverged:
                    raise blowup(stepper.fail_time, u, v, "fixed-point iterate") from None
                raise
        u, v = out
        t = n * cfg.dt
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))) or (
                sup0 > 0 and max(np.max(np.abs(u)), np.max(np.abs(v))) > BLOWUP_FACTOR * sup0):
            raise blowup(t, u, v)
        record(t, u, v)
    final = TwoComponentState(from_vector(graph, u), from_vector(graph, v))
    return final, trace


def _halved(stepper, u, v, dt, remaining, trace, t):
    if remaining <= 0:
        stepper.fail_time = t
        raise ConvergenceError(f"fixed-point iteration failed at t = {t:.6g} after dt halving",
                               result=trace)
    half = 0.5 * dt
    trace.dt_halvings.append((t, half))
    out = stepper.step(u, v, half)
    if out is None:
        out = _halved(stepper, u, v, half, remaining - 1, trace, t)
    out2 = stepper.step(*out, half)
    if out2 is None:
        out2 = _halved(stepper, *out, half, remaining - 1, trace, t + half)
    return out2


# -- stability experiments -------------------------------------------------

FAMILY_KINDS = ("one_component", "two_component", "cubic_ground_state", "rotation")


@dataclass(frozen=True)
class ProfileFamily:
    """Descriptor of a standing-wave family and its parameters."""
    kind: str
    omega: float = 1.0
    gamma: float = 1.0
    k: int = 0
    q: float = 4.0
    a: float = 1.0
    p: float = 2.0
    b: float = 0.0
    c: float = 1.0
    omega0: float = 0.0
    omega1: float = 0.0

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise ValidationError(f"family kind must be one of {FAMILY_KINDS}")

    @property
    def frequency(self) -> float:
        return self.omega0 - self.omega1 if self.kind == "rotation" else self.omega

    def params(self) -> PowerParams:
        if self.kind == "one_component":
            # v stays identically zero; p > 2 keeps the v equation decoupled
            return PowerParams(p=3.0, q=self.q, r=self.q, a=self.a, b=0.0, c=1.0,
                               gamma=self.gamma, omega=self.omega, k=self.k)
        if self.kind == "two_component":
            return two_component_params(self.omega, self.gamma, self.b, self.p, self.k)
        if self.kind == "cubic_ground_state":
            return CubicParams(self.a, self.b, self.c, self.gamma, self.omega).as_power()
        return rotation_params(self.omega0, self.omega1, self.gamma, self.k)

    def profile(self, graph: StarGraph, discrete: bool = False) -> TwoComponentState:
        """Closed-form profile sampled on the grid.

        With ``discrete=True`` the scalar shape is Newton-polished onto the
        exact stationary state of the discretization, so that the discrete
        flow does not make it breathe.
        """
        if self.kind == "one_component":
            phi = nls_profile_family(self.omega, self.gamma, self.k, self.q, self.a, graph)
            if discrete:
                phi = polish_profile(phi, self.omega, self.gamma, self.a, self.q - 1)
            return TwoComponentState(phi, GridField.zeros(graph))
        if self.kind == "two_component":
            prof = two_component_profile(self.omega, self.gamma, self.b, self.p, self.k, graph)
            if discrete:
                phi = polish_profile(prof.u, self.omega, self.gamma, 1 + self.b, 2 * self.p - 1)
                prof = TwoComponentState(phi, phi.copy())
            return prof
        if self.kind == "cubic_ground_state":
            cp = CubicParams(self.a, self.b, self.c, self.gamma, self.omega)
            prof = coupled_cubic_ground_state(cp, graph)
            if discrete:
                det = self.b ** 2 - self.a * self.c
                s1 = (self.b - self.c) / det
                s2 = (self.b - self.a) / det
                phi = polish_profile(prof.u * (1 / np.sqrt(s1)), self.omega, self.gamma, 1.0, 3.0)
                prof = TwoComponentState(phi * np.sqrt(s1), phi * np.sqrt(s2))
            return prof
        prof = rotation_profile(self.omega0, self.omega1, self.gamma, self.k, graph)
        if discrete:
            phi = polish_profile(prof.v * np.sqrt(2), self.frequency, self.gamma, 1.0, 3.0)
            prof = TwoComponentState(phi * (1j / np.sqrt(2)), phi * (1 / np.sqrt(2)))
        return prof

    def linearization(self, graph: StarGraph):
        """(LR, LI) of the Hamiltonian linearization about the discrete profile."""
        prof = self.profile(graph, discrete=True)
        if self.kind == "one_component":
            pp = self.params()
            return (assemble_one_component_linearization(prof.u, pp, "R"),
                    assemble_one_component_linearization(prof.u, pp, "I"))
        if self.kind == "two_component":
            return (assemble_two_component_linearization(prof.u, self.p, self.b, self.omega,
                                                          self.gamma, "R"),
                    assemble_two_component_linearization(prof.u, self.p, self.b, self.omega,
                                                          self.gamma, "I"))
        raise ValidationError(f"no instability eigenproblem wired for family {self.kind!r}")


@dataclass(frozen=True)
class Perturbation:
    amplitude: float = 1e-3
    direction: str = "random"
    seed: int = 0

    def __post_init__(self):
        if self.direction not in ("random", "unstable_eigvec"):
            raise ValidationError("direction must be 'random' or 'unstable_eigvec'")


@dataclass
class StabilityVerdict:
    verdict: str
    max_dev: float
    efold_rate: float | None
    horizon: float
    amplitude: float
    threshold: float
    predicted_rate: float | None
    trace: EvolutionTrace
    final: TwoComponentState

    def as_dict(self) -> dict:
        return {"verdict": self.verdict, "max_dev": self.max_dev, "efold_rate": self.efold_rate,
                "horizon": self.horizon, "amplitude": self.amplitude,
                "threshold": self.threshold, "predicted_rate": self.predicted_rate}


def _perturbation_direction(family: ProfileFamily, pert: Perturbation, graph: StarGraph):
    predicted = None
    if pert.direction == "random":
        rng = np.random.default_rng(pert.seed)
        du = random_smooth_field(graph, rng, complex_valued=True)
        dv = (GridField.zeros(graph) if family.kind == "one_component"
              else random_smooth_field(graph, rng, complex_valued=True))
    else:
        LR, LI = family.linearization(graph)
        res = instability_eigenvalues(LR, LI, tol=1e-6, return_vectors=True)
        if not res.eigenvalues:
            raise ValidationError("no unstable eigenvalue to seed the perturbation")
        predicted = res.eigenvalues[0].real
        hR, hI = res.vectors[0]
        hR = [f.values.real for f in hR]
        hI = [f.values.real for f in hI]
        du = GridField(graph, hR[0] + 1j * hI[0])
        dv = GridField(graph, hR[1] + 1j * hI[1]) if len(hR) > 1 else GridField.zeros(graph)
    pert_state = TwoComponentState(du, dv)
    nrm = x_norm(pert_state, tol=np.inf)
    scale = pert.amplitude / nrm
    return TwoComponentState(du * scale, dv * scale), predicted


def _efold_rate(times, devs, amplitude, ceiling):
    """Least-squares slope of log(dev) over the clean exponential window."""
    times, devs = np.asarray(times), np.asarray(devs)
    lo, hi = 3 * amplitude, min(300 * amplitude, ceiling)
    idx = np.where((devs >= lo) & (devs <= hi))[0]
    if idx.size < 5:
        return None
    first = idx[0]
    stop = first
    while stop + 1 < len(devs) and devs[stop + 1] <= hi:
        stop += 1
    sel = slice(first, stop + 1)
    if stop - first < 4:
        return None
    slope = np.polyfit(times[sel], np.log(devs[sel]), 1)[0]
    return float(slope)


def stability_experiment(family: ProfileFamily, perturbation: Perturbation,
                         cfg: EvolveConfig | None = None, graph: StarGraph | None = None,
                         on_step: Callable | None = None) -> StabilityVerdict:
    """Evolve a perturbed profile and classify the orbital deviation."""
    if graph is None:
        raise ValidationError("a graph is required")
    horizon = 50.0 / np.sqrt(family.frequency)
    cfg = cfg or EvolveConfig(dt=graph.spacing, t_final=horizon)
    prof = family.profile(graph, discrete=True)
    delta, predicted = _perturbation_direction(family, perturbation, graph)
    initial = TwoComponentState(prof.u + delta.u, prof.v + delta.v)
    phases = "common" if family.kind == "rotation" else "independent"
    final, trace = evolve(initial, family.params(), cfg, reference=prof, on_step=on_step,
                          phases=phases)
    devs = np.asarray(trace.orbital_dev)
    threshold = GROWTH_FACTOR * perturbation.amplitude
    verdict = "GROWTH" if np.any(devs > threshold) else "BOUNDED"
    ceiling = 0.05 * x_norm(prof)
    rate = _efold_rate(trace.times, devs, perturbation.amplitude, ceiling)
    return StabilityVerdict(verdict, float(devs.max()), rate, float(cfg.t_final),
                            perturbation.amplitude, threshold, predicted, trace, final)
