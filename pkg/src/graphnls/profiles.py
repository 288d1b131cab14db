"""Closed-form standing waves, constraint targets and minimum energies.

Also holds the parameter records and the pointwise nonlinearity

    G(u, v) = (2a/q)|u|^q + (2c/r)|v|^r + (2b/p)|u|^p |v|^p,

whose partial derivatives drive the stationary equations and the flow.
The cubic system is the case p = 2, q = r = 4.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, DomainError, RegimeError, ValidationError
from .graph import (GridField, StarGraph, TwoComponentState, from_vector, stiffness_matrix,
                    to_vector)

ARTANH_LIMIT = 1.0 - 1e-12


@dataclass(frozen=True)
class PowerParams:
    """Coefficients of the general coupled system.

    ``rotation`` is the coefficient of the Im<u, v> coupling that appears in
    the stationary equations of the rotating standing waves; it is zero for
    ordinary standing waves.
    """
    p: float = 2.0
    q: float = 4.0
    r: float = 4.0
    a: float = 1.0
    b: float = 0.0
    c: float = 1.0
    gamma: float = 0.0
    omega: float = 1.0
    k: int = 0
    rotation: float = 0.0

    def __post_init__(self):
        if not (self.p > 1 and self.q > 2 and self.r > 2 and 2 * self.p > 2):
            raise ValidationError("need p > 1 and q, r, 2p > 2")


@dataclass(frozen=True)
class CubicParams:
    a: float
    b: float
    c: float
    gamma: float
    omega: float

    def as_power(self) -> PowerParams:
        return PowerParams(p=2.0, q=4.0, r=4.0, a=self.a, b=self.b, c=self.c,
                           gamma=self.gamma, omega=self.omega)


def regime(params: CubicParams) -> str:
    """Return 'A1' or 'A2', or raise RegimeError."""
    a, b, c = params.a, params.b, params.c
    if 0 < b < min(a, c):
        return "A1"
    if a > 0 and c > 0 and b > max(a, c):
        return "A2"
    raise RegimeError(
        f"(a, b, c) = ({a}, {b}, {c}) satisfies neither 0 < b < min(a, c) "
        "nor a, c > 0 with b > max(a, c)")


def mass_restriction_holds(params: CubicParams, N: int) -> bool:
    return N * np.sqrt(params.omega) - params.gamma <= 2 * params.gamma / N


def check_cubic(params: CubicParams, N: int, enforce_mass_restriction: bool = True) -> str:
    """Validate a cubic configuration; returns the regime label."""
    if not params.gamma > 0:
        raise DomainError(f"gamma must be positive, got {params.gamma}")
    if not params.omega > params.gamma ** 2 / N ** 2:
        raise DomainError(
            f"omega = {params.omega} must exceed gamma^2/N^2 = {params.gamma ** 2 / N ** 2}")
    label = regime(params)
    if enforce_mass_restriction and not mass_restriction_holds(params, N):
        raise RegimeError(
            f"mass restriction N*sqrt(omega) - gamma <= 2*gamma/N fails: "
            f"{N * np.sqrt(params.omega) - params.gamma:.6g} > {2 * params.gamma / N:.6g}")
    return label


def artanh(t: float) -> float:
    if abs(t) >= ARTANH_LIMIT:
        raise DomainError(f"artanh argument {t} outside (-1, 1)")
    return 0.5 * np.log((1 + t) / (1 - t))


def max_k(N: int) -> int:
    return (N - 1) // 2


def vertex_shift(omega: float, gamma: float, k: int, N: int) -> float:
    """a_k = artanh(gamma / ((N - 2k) sqrt(omega)))."""
    if int(k) != k or not 0 <= k <= max_k(N):
        raise ValidationError(f"k = {k} outside 0..floor((N-1)/2) = 0..{max_k(N)}")
    if not omega > 0:
        raise DomainError(f"omega must be positive, got {omega}")
    return artanh(gamma / ((N - 2 * k) * np.sqrt(omega)))


# -- constraint targets and profiles ------------------------------------

def mass_targets(params: CubicParams, N: int) -> tuple[float, float]:
    if not params.omega > params.gamma ** 2 / N ** 2:
        raise DomainError(
            f"omega = {params.omega} must exceed gamma^2/N^2 = {params.gamma ** 2 / N ** 2}")
    a, b, c = params.a, params.b, params.c
    gap = N * np.sqrt(params.omega) - params.gamma
    det = b * b - a * c
    return 2 * (b - c) * gap / det, 2 * (b - a) * gap / det


def half_soliton(omega: float, gamma: float, graph: StarGraph) -> GridField:
    N = graph.num_edges
    if not omega > 0:
        raise DomainError(f"omega must be positive, got {omega}")
    a0 = artanh(gamma / (N * np.sqrt(omega)))
    s = np.sqrt(omega)
    return GridField.from_profile(graph, lambda x: np.sqrt(2 * omega) / np.cosh(s * x + a0))


def nls_profile_family(omega: float, gamma: float, k: int, q: float, a: float,
                       graph: StarGraph) -> GridField:
    """Profile Phi_k with k edges carrying a bump (edges 1..k) and N-k tails."""
    N = graph.num_edges
    if not a > 0 or not q > 2:
        raise ValidationError("need a > 0 and q > 2")
    if not omega > gamma ** 2 / (N - 2 * k) ** 2:
        raise DomainError(
            f"omega = {omega} must exceed gamma^2/(N-2k)^2 = {gamma ** 2 / (N - 2 * k) ** 2}")
    ak = vertex_shift(omega, gamma, k, N)
    x = graph.x
    arg = 0.5 * (q - 2) * np.sqrt(omega) * x
    amp = q * omega / (2 * a)
    vals = np.empty(graph.shape, dtype=complex)
    for e in range(N):
        shift = -ak if e < k else ak
        vals[e] = (amp / np.cosh(arg + shift) ** 2) ** (1.0 / (q - 2))
    return GridField(graph, vals)


def coupled_cubic_ground_state(params: CubicParams, graph: StarGraph,
                               enforce_mass_restriction: bool = True) -> TwoComponentState:
    N = graph.num_edges
    check_cubic(params, N, enforce_mass_restriction)
    a, b, c = params.a, params.b, params.c
    det = b * b - a * c
    s1, s2 = (b - c) / det, (b - a) / det
    if s1 <= 0 or s2 <= 0:
        raise RegimeError("scale factors (b-c)/(b^2-ac) and (b-a)/(b^2-ac) must be positive")
    phi = half_soliton(params.omega, params.gamma, graph)
    return TwoComponentState(phi * np.sqrt(s1), phi * np.sqrt(s2))


def two_component_profile(omega: float, gamma: float, b: float, p: float, k: int,
                          graph: StarGraph) -> TwoComponentState:
    if not b > -1:
        raise ValidationError(f"need b > -1, got {b}")
    if not p >= 2:
        raise ValidationError(f"need p >= 2, got {p}")
    phi = nls_profile_family(omega, gamma, k, 2 * p, b + 1, graph)
    return TwoComponentState(phi, phi.copy())


def two_component_params(omega: float, gamma: float, b: float, p: float, k: int = 0) -> PowerParams:
    """System parameters whose symmetric standing wave is two_component_profile."""
    return PowerParams(p=p, q=2 * p, r=2 * p, a=1.0, b=b, c=1.0, gamma=gamma, omega=omega, k=k)


def rotation_profile(omega0: float, omega1: float, gamma: float, k: int,
                     graph: StarGraph) -> TwoComponentState:
    gap = omega0 - omega1
    N = graph.num_edges
    if not gap > gamma ** 2 / (N - 2 * k) ** 2:
        raise DomainError(
            f"omega0 - omega1 = {gap} must exceed gamma^2/(N-2k)^2 = {gamma ** 2 / (N - 2 * k) ** 2}")
    phi = nls_profile_family(gap, gamma, k, 4.0, 1.0, graph)
    return TwoComponentState(phi * (1j / np.sqrt(2)), phi * (1 / np.sqrt(2)))


def rotation_params(omega0: float, omega1: float, gamma: float, k: int = 0) -> PowerParams:
    """Cubic system with a = b = c = 1 in the frame rotating under T0 and T1."""
    return PowerParams(p=2.0, q=4.0, r=4.0, a=1.0, b=1.0, c=1.0, gamma=gamma,
                       omega=omega0, k=k, rotation=omega1)


# -- closed-form minimum energies ------------------------------------------

def _j_branch(K: float, mass: float, gamma: float, N: int) -> float:
    return -(K * K * mass ** 3 / 3 + K * gamma * mass ** 2 + gamma ** 2 * mass) / N ** 2


def j_closed_form(params: CubicParams, N: int) -> tuple[float, float, float]:
    check_cubic(params, N)
    a, b, c = params.a, params.b, params.c
    alpha, beta = mass_targets(params, N)
    det = b * b - a * c
    J1 = _j_branch(det / (2 * (b - c)), alpha, params.gamma, N)
    J2 = _j_branch(det / (2 * (b - a)), beta, params.gamma, N)
    return J1, J2, J1 + J2


def j_single(mass: float, K: float, gamma: float, N: int) -> float:
    """Minimum of ||u'||^2 - gamma|u(0)|^2 - K ||u||_4^4 at fixed mass, K > 0."""
    return _j_branch(K, mass, gamma, N)


def j_endpoint(delta: float, coeff: float, gamma: float, N: int) -> float:
    if not delta >= 0 or not coeff > 0:
        raise ValidationError("need delta >= 0 and coeff > 0")
    return -(coeff ** 2 * delta ** 3 / 12 + coeff * gamma * delta ** 2 / 2 + gamma ** 2 * delta) / N ** 2


# -- nonlinearity ----------------------------------------------------------

def _power_times(z: np.ndarray, e: float) -> np.ndarray:
    """|z|^e z with the value 0 at z = 0 (safe for e > -1)."""
    mod = np.abs(z)
    out = np.zeros_like(z)
    nz = mod > 0
    out[nz] = mod[nz] ** e * z[nz]
    return out


def nonlinear_force(u: np.ndarray, v: np.ndarray, params: PowerParams):
    """(a|u|^{q-2} u + b|v|^p |u|^{p-2} u, c|v|^{r-2} v + b|u|^p |v|^{p-2} v)."""
    p, q, r = params.p, params.q, params.r
    fu = params.a * _power_times(u, q - 2)
    fv = params.c * _power_times(v, r - 2)
    if params.b != 0:
        fu = fu + params.b * np.abs(v) ** p * _power_times(u, p - 2)
        fv = fv + params.b * np.abs(u) ** p * _power_times(v, p - 2)
    return fu, fv


def potential_density(rho: np.ndarray, sigma: np.ndarray, params: PowerParams) -> np.ndarray:
    """G as a function of rho = |u|^2 and sigma = |v|^2."""
    p, q, r = params.p, params.q, params.r
    g = (2 * params.a / q) * rho ** (q / 2) + (2 * params.c / r) * sigma ** (r / 2)
    if params.b != 0:
        g = g + (2 * params.b / p) * (rho * sigma) ** (p / 2)
    return g


def potential_partials(rho: np.ndarray, sigma: np.ndarray, params: PowerParams):
    """dG/drho and dG/dsigma, with 0 * inf read as 0."""
    p, q, r = params.p, params.q, params.r
    gu = params.a * rho ** (q / 2 - 1)
    gv = params.c * sigma ** (r / 2 - 1)
    if params.b != 0:
        with np.errstate(divide="ignore", invalid="ignore"):
            cu = np.where(sigma > 0, rho ** (p / 2 - 1) * sigma ** (p / 2), 0.0)
            cv = np.where(rho > 0, sigma ** (p / 2 - 1) * rho ** (p / 2), 0.0)
        gu = gu + params.b * np.nan_to_num(cu, posinf=0.0)
        gv = gv + params.b * np.nan_to_num(cv, posinf=0.0)
    return gu, gv


# -- residual of the stationary equations ----------------------------------

def _as_power(params) -> PowerParams:
    return params.as_power() if isinstance(params, CubicParams) else params


def stationary_residual(state: TwoComponentState, params) -> float:
    """Max of the interior residual of the stationary equations and the
    vertex flux defects |sum_e u_e'(0) + gamma u(0)| for both components."""
    params = _as_power(params)
    state.u.check_continuity()
    state.v.check_continuity()
    h = state.graph.spacing
    u, v = state.u.values, state.v.values
    fu, fv = nonlinear_force(u, v, params)
    rot = params.rotation

    def interior(w, f, other, sign):
        lap = (w[:, 2:] - 2 * w[:, 1:-1] + w[:, :-2]) / h ** 2
        res = -lap + params.omega * w[:, 1:-1] - f[:, 1:-1]
        if rot:
            res = res + sign * 1j * rot * other[:, 1:-1]
        return float(np.max(np.abs(res))) if res.size else 0.0

    def flux(w):
        slopes = (-3 * w[:, 0] + 4 * w[:, 1] - w[:, 2]) / (2 * h)
        return float(abs(np.sum(slopes) + params.gamma * w[0, 0]))

    return max(interior(u, fu, v, -1.0), interior(v, fv, u, 1.0), flux(u), flux(v))


def with_omega(params: PowerParams, omega: float) -> PowerParams:
    return replace(params, omega=omega)


# -- discrete stationary states --------------------------------------------

def polish_profile(phi: GridField, omega: float, gamma: float, coeff: float, power: float,
                   tol: float = 1e-10, max_iter: int = 40) -> GridField:
    """Newton's method for the discrete equation
    -Delta_gamma phi + omega phi - coeff phi^power = 0, started from phi.

    The closed forms solve the continuous equation; the polished profile is
    the nearby exact stationary state of the discretization, so the discrete
    flow keeps it fixed and the discrete linearization annihilates it.
    """
    graph = phi.graph
    K = stiffness_matrix(graph, float(gamma))
    w = graph.vector_weights()
    x = np.real(to_vector(phi)).copy()
    scale = np.sqrt(np.dot(w, x * x))
    best = np.inf
    for _ in range(max_iter):
        xp = np.abs(x) ** (power - 1)
        F = K @ x + w * (omega * x - coeff * xp * x)
        res = np.sqrt(np.dot(F * F, 1.0 / w)) / max(scale, 1e-300)
        if res < tol and res >= 0.5 * best:
            # converged to rounding level: further steps no longer reduce the residual
            return from_vector(graph, x.astype(complex))
        best = min(best, res)
        J = K + sp.diags(w * (omega - coeff * power * xp))
        x = x - spla.spsolve(J.tocsc(), F)
    raise ConvergenceError(f"Newton polish did not converge (relative residual {res:.3e})")
