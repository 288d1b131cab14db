"""Energy functional and constrained minimization at fixed masses.

The descent is a Sobolev gradient flow: the L^2 gradient is mapped to its
H^1 Riesz representative, projected onto the tangent space of the mass
sphere of each component, and after the step each component is rescaled
back onto its sphere.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, ValidationError
from .graph import (GridField, StarGraph, TwoComponentState, edge_integrals, from_vector,
                    to_vector)
from .operators import kinetic_form, stiffness_matrix
from .profiles import (CubicParams, PowerParams, coupled_cubic_ground_state, potential_density,
                       potential_partials)

INIT_KINDS = ("closed_form_perturbed", "gaussian_bumps", "random")


@dataclass
class MinimizeConfig:
    step_size: float = 0.5
    max_iters: int = 5000
    grad_tol: float = 1e-7
    mass_tol: float = 1e-12
    init_kind: str = "gaussian_bumps"
    rng_seed: int = 0
    complex_fields: bool = False
    min_step: float = 1e-10
    max_step: float = 2.0

    def __post_init__(self):
        if self.init_kind not in INIT_KINDS:
            raise ValidationError(f"init_kind must be one of {INIT_KINDS}")
        if not self.step_size > 0 or self.max_iters < 1:
            raise ValidationError("step_size must be positive and max_iters >= 1")


@dataclass
class MinimizeResult:
    state: TwoComponentState
    energy: float
    omega1: float
    omega2: float
    iterations: int
    converged: bool
    grad_norm: float
    trace: list = field(default_factory=list)

    @property
    def field(self) -> GridField:
        return self.state.u


def _power(params) -> PowerParams:
    return params.as_power() if isinstance(params, CubicParams) else params


def potential_energy(state: TwoComponentState, params) -> float:
    params = _power(params)
    rho = np.abs(state.u.values) ** 2
    sigma = np.abs(state.v.values) ** 2
    return float(np.sum(edge_integrals(state.graph, potential_density(rho, sigma, params))))


def energy(state: TwoComponentState, params) -> float:
    """||u'||^2 + ||v'||^2 - gamma(|u(0)|^2 + |v(0)|^2) - int G(u, v)."""
    params = _power(params)
    return (kinetic_form(state.u, params.gamma) + kinetic_form(state.v, params.gamma)
            - potential_energy(state, params))


# -- descent engine --------------------------------------------------------

class _Problem:
    """Energy and gradients on the unknown vectors of the active components."""

    def __init__(self, graph: StarGraph, params: PowerParams, active: tuple[bool, bool]):
        self.graph = graph
        self.params = params
        self.active = active
        self.K = stiffness_matrix(graph, float(params.gamma))
        self.w = graph.vector_weights()
        N = graph.num_edges
        c = max(1.0, 2.0 * max(params.gamma, 0.0) ** 2 / N ** 2)
        self.P = (self.K + c * sp.diags(self.w)).tocsc()
        self.P_lu = spla.splu(self.P)

    def energy(self, u: np.ndarray, v: np.ndarray) -> float:
        kin = np.real(np.vdot(u, self.K @ u)) + np.real(np.vdot(v, self.K @ v))
        G = potential_density(np.abs(u) ** 2, np.abs(v) ** 2, self.params)
        return float(kin - np.dot(self.w, G))

    def gradients(self, u: np.ndarray, v: np.ndarray):
        """Euclidean gradients 2(K u - W g_u u), 2(K v - W g_v v)."""
        gu, gv = potential_partials(np.abs(u) ** 2, np.abs(v) ** 2, self.params)
        return (2 * (self.K @ u - self.w * gu * u), 2 * (self.K @ v - self.w * gv * v))

    def solve_P(self, rhs: np.ndarray) -> np.ndarray:
        if np.iscomplexobj(rhs):
            return self.P_lu.solve(np.real(rhs)) + 1j * self.P_lu.solve(np.imag(rhs))
        return self.P_lu.solve(rhs)

    def wdot(self, f: np.ndarray, g: np.ndarray) -> float:
        return float(np.real(np.vdot(f, self.w * g)))

    def directions(self, comps, grads):
        """Projected H^1 gradients and their combined H^1 norm."""
        out, sq = [], 0.0
        for x, gr, on in zip(comps, grads, self.active):
            if not on:
                out.append(np.zeros_like(x))
                continue
            d = self.solve_P(gr)
            z = self.solve_P(self.w * x)
            d = d - (self.wdot(x, d) / self.wdot(x, z)) * z
            sq += float(np.real(np.vdot(d, self.P @ d)))
            out.append(d)
        return out, np.sqrt(sq)

    def multiplier(self, x: np.ndarray, grad: np.ndarray) -> float:
        mass = self.wdot(x, x)
        return -float(np.real(np.vdot(x, grad))) / (2 * mass) if mass > 0 else np.nan


def _rescale(x: np.ndarray, w: np.ndarray, mass: float) -> np.ndarray:
    cur = float(np.real(np.vdot(x, w * x)))
    if cur <= 0:
        raise ValidationError("cannot rescale a zero field to positive mass")
    return x * np.sqrt(mass / cur)


def _initial(graph: StarGraph, kind: str, rng: np.random.Generator, closed=None,
             complex_fields=False) -> np.ndarray:
    N, M = graph.shape
    x = graph.x
    L = graph.edge_length
    if kind == "closed_form_perturbed":
        if closed is None:
            raise ValidationError("closed_form_perturbed init needs a closed-form state")
        base = np.real(to_vector(closed))
        bump = np.real(to_vector(_bumps(graph, rng)))
        vec = base * (1.0 + 0.05 * bump / max(np.max(np.abs(bump)), 1e-300))
    elif kind == "gaussian_bumps":
        vec = np.real(to_vector(_bumps(graph, rng)))
    else:
        vals = np.abs(rng.normal(size=(N, M)))
        vals[:, 0] = vals[0, 0]
        vals *= np.exp(-x / (L / 6))
        vec = to_vector(GridField(graph, vals)).real
    if complex_fields:
        vec = vec * np.exp(1j * rng.uniform(0, 2 * np.pi, size=vec.size))
        vec[0] = abs(vec[0])
    return vec


def _bumps(graph: StarGraph, rng: np.random.Generator) -> GridField:
    """Positive Gaussian bumps: one at the vertex plus one per edge."""
    N, M = graph.shape
    x = graph.x
    L = graph.edge_length
    width = min(3.0, L / 6)
    vals = np.zeros((N, M))
    for e in range(N):
        c = rng.uniform(0.1, 0.3) * L
        s = rng.uniform(0.5, 1.0) * width
        vals[e] = np.exp(-(x / width) ** 2) + 0.5 * rng.uniform(0.2, 1.0) * (
            np.exp(-((x - c) / s) ** 2) - np.exp(-(c / s) ** 2) * np.exp(-(x / s) ** 2))
    vals[:, -1] = 0.0
    return GridField(graph, np.abs(vals))


def _descend(problem: _Problem, comps, masses, cfg: MinimizeConfig):
    w = problem.w
    comps = [(_rescale(x, w, m) if on else np.zeros_like(x))
             for x, m, on in zip(comps, masses, problem.active)]
    E = problem.energy(*comps)
    grads = problem.gradients(*comps)
    dirs, gnorm = problem.directions(comps, grads)
    tau = cfg.step_size
    trace = [(0, E, gnorm)]
    it = 0
    converged = gnorm < cfg.grad_tol
    while not converged and it < cfg.max_iters:
        it += 1
        while True:
            trial = [(_rescale(x - tau * d, w, m) if on else x)
                     for x, d, m, on in zip(comps, dirs, masses, problem.active)]
            E_new = problem.energy(*trial)
            if E_new <= E + 1e-13 * (abs(E) + 1e-300):
                break
            tau *= 0.5
            if tau < cfg.min_step:
                raise ConvergenceError(
                    f"step size fell below {cfg.min_step} at iteration {it} (energy {E:.12g})")
        comps, E = trial, E_new
        grads = problem.gradients(*comps)
        dirs, gnorm = problem.directions(comps, grads)
        trace.append((it, E, gnorm))
        converged = gnorm < cfg.grad_tol
        tau = min(tau * 1.25, cfg.max_step)
    return comps, E, grads, gnorm, it, converged, trace


def _align_phase(vec: np.ndarray) -> np.ndarray:
    if abs(vec[0]) == 0:
        return vec
    return vec * np.exp(-1j * np.angle(vec[0]))


def minimize_fixed_masses(params: CubicParams, alpha: float, beta: float,
                          cfg: MinimizeConfig | None = None,
                          graph: StarGraph | None = None) -> MinimizeResult:
    """Minimize E(u, v) subject to ||u||^2 = alpha, ||v||^2 = beta."""
    cfg = cfg or MinimizeConfig()
    if graph is None:
        raise ValidationError("a graph is required")
    if not alpha > 0 or not beta > 0:
        raise ValidationError("masses must be positive")
    pw = _power(params)
    rng = np.random.default_rng(cfg.rng_seed)
    closed = None
    if cfg.init_kind == "closed_form_perturbed":
        closed = coupled_cubic_ground_state(params, graph, enforce_mass_restriction=False)
    u0 = _initial(graph, cfg.init_kind, rng, closed.u if closed else None, cfg.complex_fields)
    v0 = _initial(graph, cfg.init_kind, rng, closed.v if closed else None, cfg.complex_fields)
    problem = _Problem(graph, pw, (True, True))
    comps, E, grads, gnorm, it, ok, trace = _descend(problem, [u0, v0], [alpha, beta], cfg)
    om1 = problem.multiplier(comps[0], grads[0])
    om2 = problem.multiplier(comps[1], grads[1])
    u = from_vector(graph, _align_phase(comps[0].astype(complex)))
    v = from_vector(graph, _align_phase(comps[1].astype(complex)))
    return MinimizeResult(TwoComponentState(u, v), E, om1, om2, it, ok, gnorm, trace)


SINGLE_PROBLEMS = ("J1", "J2", "endpoint_a", "endpoint_c")


def single_coefficient(problem: str, params: CubicParams) -> float:
    """K in E_K(u) = ||u'||^2 - gamma|u(0)|^2 - K ||u||_4^4 for each reduction."""
    a, b, c = params.a, params.b, params.c
    if problem == "J1":
        return (b * b - a * c) / (2 * (b - c))
    if problem == "J2":
        return (b * b - a * c) / (2 * (b - a))
    if problem == "endpoint_a":
        return a / 2
    if problem == "endpoint_c":
        return c / 2
    raise ValidationError(f"problem must be one of {SINGLE_PROBLEMS}")


def minimize_single(problem: str, mass: float, params: CubicParams,
                    cfg: MinimizeConfig | None = None,
                    graph: StarGraph | None = None) -> tuple[GridField, float, MinimizeResult]:
    """Single-constraint reduction; returns (field, energy, full result)."""
    cfg = cfg or MinimizeConfig()
    if graph is None:
        raise ValidationError("a graph is required")
    if not mass > 0:
        raise ValidationError("mass must be positive")
    K = single_coefficient(problem, params)
    if not K > 0:
        raise ValidationError(f"quartic coefficient {K} must be positive")
    pw = PowerParams(p=2.0, q=4.0, r=4.0, a=2 * K, b=0.0, c=1.0, gamma=params.gamma,
                     omega=params.omega)
    rng = np.random.default_rng(cfg.rng_seed)
    kind = "gaussian_bumps" if cfg.init_kind == "closed_form_perturbed" else cfg.init_kind
    u0 = _initial(graph, kind, rng, None, cfg.complex_fields)
    prob = _Problem(graph, pw, (True, False))
    comps, E, grads, gnorm, it, ok, trace = _descend(prob, [u0, np.zeros_like(u0)], [mass, 0.0], cfg)
    om = prob.multiplier(comps[0], grads[0])
    u = from_vector(graph, _align_phase(comps[0].astype(complex)))
    res = MinimizeResult(TwoComponentState(u, GridField.zeros(graph)), E, om, np.nan, it, ok,
                         gnorm, trace)
    return u, E, res
