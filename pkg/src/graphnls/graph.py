"""Discretized star graph, fields on it, norms and the symmetric rearrangement.

Every edge is the interval [0, L] sampled at M equispaced points; index 0
is the shared vertex and index M-1 the truncation point, where fields are
taken to vanish (homogeneous Dirichlet).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import ContinuityError, ValidationError

CONTINUITY_TOL = 1e-8


@dataclass(frozen=True)
class StarGraph:
    num_edges: int
    edge_length: float
    points_per_edge: int

    @property
    def spacing(self) -> float:
        return self.edge_length / (self.points_per_edge - 1)

    @property
    def x(self) -> np.ndarray:
        """Grid coordinates shared by all edges."""
        return np.linspace(0.0, self.edge_length, self.points_per_edge)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_edges, self.points_per_edge)

    @property
    def dimension(self) -> int:
        """Number of unknowns: one vertex value plus the interior nodes."""
        return 1 + self.num_edges * (self.points_per_edge - 2)

    def edge_weights(self) -> np.ndarray:
        """Trapezoid weights for the samples of a single edge."""
        w = np.full(self.points_per_edge, self.spacing)
        w[0] = w[-1] = 0.5 * self.spacing
        return w

    def vector_weights(self) -> np.ndarray:
        """Trapezoid weights on the unknown vector (vertex carries N*h/2)."""
        w = np.full(self.dimension, self.spacing)
        w[0] = 0.5 * self.num_edges * self.spacing
        return w


def make_graph(N: int, L: float, M: int) -> StarGraph:
    if int(N) != N or N < 2:
        raise ValidationError(f"a star graph needs N >= 2 edges, got {N}")
    if int(M) != M or M < 3:
        raise ValidationError(f"need M >= 3 points per edge, got {M}")
    if not L > 0:
        raise ValidationError(f"edge length must be positive, got {L}")
    return StarGraph(int(N), float(L), int(M))


@dataclass
class GridField:
    graph: StarGraph
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=complex)
        if vals.shape != self.graph.shape:
            raise ValidationError(
                f"field shape {vals.shape} does not match graph {self.graph.shape}")
        self.values = vals

    @classmethod
    def zeros(cls, graph: StarGraph) -> "GridField":
        return cls(graph, np.zeros(graph.shape, dtype=complex))

    @classmethod
    def from_profile(cls, graph: StarGraph, func) -> "GridField":
        """Sample the same radial function on every edge."""
        row = np.asarray(func(graph.x), dtype=complex)
        return cls(graph, np.tile(row, (graph.num_edges, 1)))

    def continuity_defect(self) -> float:
        v0 = self.values[:, 0]
        return float(np.max(np.abs(v0 - v0[0])))

    def check_continuity(self, tol: float = CONTINUITY_TOL) -> None:
        defect = self.continuity_defect()
        if defect > tol:
            raise ContinuityError(
                f"vertex values differ by {defect:.3e} (tolerance {tol:.1e})")

    def copy(self) -> "GridField":
        return GridField(self.graph, self.values.copy())

    def __mul__(self, scalar) -> "GridField":
        return GridField(self.graph, self.values * scalar)

    __rmul__ = __mul__

    def __add__(self, other: "GridField") -> "GridField":
        _same_graph(self, other)
        return GridField(self.graph, self.values + other.values)

    def __sub__(self, other: "GridField") -> "GridField":
        _same_graph(self, other)
        return GridField(self.graph, self.values - other.values)


@dataclass
class TwoComponentState:
    u: GridField
    v: GridField

    def __post_init__(self):
        _same_graph(self.u, self.v)

    @property
    def graph(self) -> StarGraph:
        return self.u.graph

    @classmethod
    def zeros(cls, graph: StarGraph) -> "TwoComponentState":
        return cls(GridField.zeros(graph), GridField.zeros(graph))

    def copy(self) -> "TwoComponentState":
        return TwoComponentState(self.u.copy(), self.v.copy())

    def phase_rotated(self, theta_u: float, theta_v: float) -> "TwoComponentState":
        return TwoComponentState(self.u * np.exp(1j * theta_u), self.v * np.exp(1j * theta_v))


@dataclass(frozen=True)
class GraphPoint:
    edge: int
    coordinate: float

    def __post_init__(self):
        if self.edge < 1:
            raise ValidationError("edges are numbered from 1")
        if self.coordinate < 0:
            raise ValidationError("coordinates on an edge are nonnegative")


def _same_graph(f: GridField, g: GridField) -> None:
    if f.graph != g.graph:
        raise ValidationError("fields live on different graphs")


# -- unknown-vector layout -------------------------------------------------

def to_vector(f: GridField) -> np.ndarray:
    """Pack a field as [u(0), interior of edge 1, ..., interior of edge N]."""
    vals = f.values
    return np.concatenate(([vals[0, 0]], vals[:, 1:-1].ravel()))


def from_vector(graph: StarGraph, vec: np.ndarray) -> GridField:
    """Inverse of to_vector; the truncation point is set to zero."""
    vec = np.asarray(vec)
    N, M = graph.shape
    vals = np.zeros((N, M), dtype=complex)
    vals[:, 0] = vec[0]
    vals[:, 1:-1] = vec[1:].reshape(N, M - 2)
    return GridField(graph, vals)


# -- discrete Dirichlet form -------------------------------------------

@lru_cache(maxsize=32)
def stiffness_matrix(graph: StarGraph, gamma: float) -> sp.csr_matrix:
    """Form matrix K with u^T K u = discrete ||u'||^2 - gamma |u(0)|^2."""
    N, M = graph.shape
    h = graph.spacing
    n_int = M - 2
    D = graph.dimension
    first = 1 + np.arange(N) * n_int
    # links vertex -- first interior node of each edge
    left = [np.zeros(N, dtype=int)]
    right = [first]
    # links between consecutive interior nodes
    if n_int > 1:
        base = (first[:, None] + np.arange(n_int - 1)[None, :]).ravel()
        left.append(base)
        right.append(base + 1)
    left = np.concatenate(left)
    right = np.concatenate(right)
    w = 1.0 / h
    rows = np.concatenate([left, right, left, right])
    cols = np.concatenate([left, right, right, left])
    vals = np.concatenate([np.full(left.size, w), np.full(left.size, w),
                           np.full(left.size, -w), np.full(left.size, -w)])
    K = sp.coo_matrix((vals, (rows, cols)), shape=(D, D)).tocsr()
    # the last interior node of each edge links to the Dirichlet point
    diag = np.zeros(D)
    diag[first + n_int - 1] += w
    diag[0] -= gamma
    K = K + sp.diags(diag)
    return K.tocsr()


def kinetic_form(f: GridField, gamma: float) -> float:
    """Discrete ||f'||^2 - gamma |f(0)|^2 (the sample at x = L is taken as 0)."""
    vec = to_vector(f)
    K = stiffness_matrix(f.graph, float(gamma))
    return float(np.real(np.vdot(vec, K @ vec)))


# -- norms -----------------------------------------------------------------

def edge_integrals(graph: StarGraph, density: np.ndarray) -> np.ndarray:
    """Trapezoid integral of an N x M sample array, one value per edge."""
    return np.asarray(density) @ graph.edge_weights()


def lp_norm(f: GridField, p: float = 2.0) -> float:
    mod = np.abs(f.values)
    if np.isinf(p):
        return float(mod.max())
    if p < 1:
        raise ValidationError(f"lp_norm needs p >= 1, got {p}")
    return float(np.sum(edge_integrals(f.graph, mod ** p)) ** (1.0 / p))


def derivative(f: GridField) -> np.ndarray:
    """Centered differences inside, second-order one-sided at both ends."""
    return np.gradient(f.values, f.graph.spacing, axis=1, edge_order=2)


def h1_norm(f: GridField, tol: float = CONTINUITY_TOL) -> float:
    f.check_continuity(tol)
    df = derivative(f)
    dens = np.abs(df) ** 2 + np.abs(f.values) ** 2
    return float(np.sqrt(np.sum(edge_integrals(f.graph, dens))))


def x_norm(s: TwoComponentState, tol: float = CONTINUITY_TOL) -> float:
    return float(np.hypot(h1_norm(s.u, tol), h1_norm(s.v, tol)))


def inner_product(f: GridField, g: GridField) -> float:
    _same_graph(f, g)
    return float(np.sum(edge_integrals(f.graph, (f.values * np.conj(g.values)).real)))


def complex_pairing(f: GridField, g: GridField, h1: bool = False) -> complex:
    """Sesquilinear pairing sum_e int f conj(g), optionally with derivatives."""
    _same_graph(f, g)
    dens = f.values * np.conj(g.values)
    if h1:
        dens = dens + derivative(f) * np.conj(derivative(g))
    return complex(np.sum(edge_integrals(f.graph, dens)))


# -- metric structure ------------------------------------------------------

def graph_distance(x: GraphPoint, y: GraphPoint) -> float:
    if x.edge == y.edge:
        return abs(x.coordinate - y.coordinate)
    return x.coordinate + y.coordinate


def _segment_integral(g: np.ndarray, h: float, lo: float, hi: float) -> float:
    """Integral over [lo, hi] of the piecewise-linear interpolant of g."""
    if hi <= lo:
        return 0.0
    cum = np.concatenate(([0.0], np.cumsum(0.5 * h * (g[1:] + g[:-1]))))
    n = len(g)

    def primitive(x):
        i = min(int(np.floor(x / h)), n - 2)
        t = x - i * h
        slope = (g[i + 1] - g[i]) / h
        return cum[i] + g[i] * t + 0.5 * slope * t * t

    return float(primitive(hi) - primitive(lo))


def ball_norm(f: GridField, center: GraphPoint, r: float, p: float = 2.0) -> float:
    """L^p norm of f on the open ball {y : d(center, y) < r}."""
    graph = f.graph
    if not r > 0:
        raise ValidationError("ball radius must be positive")
    if center.edge > graph.num_edges:
        raise ValidationError("center lies on a nonexistent edge")
    L, h = graph.edge_length, graph.spacing
    x0 = center.coordinate
    mod = np.abs(f.values)
    intervals = []
    for e in range(graph.num_edges):
        if e == center.edge - 1:
            intervals.append((e, max(0.0, x0 - r), min(L, x0 + r)))
        elif r > x0:
            intervals.append((e, 0.0, min(L, r - x0)))
    if np.isinf(p):
        out = 0.0
        x = graph.x
        for e, lo, hi in intervals:
            mask = (x >= lo) & (x < hi)
            if mask.any():
                out = max(out, float(mod[e, mask].max()))
        return out
    total = sum(_segment_integral(mod[e] ** p, h, lo, hi) for e, lo, hi in intervals)
    return float(max(total, 0.0) ** (1.0 / p))


# -- symmetric rearrangement -----------------------------------------------

def rearrange(f: GridField) -> GridField:
    """Symmetric decreasing rearrangement of |f|.

    All N*M sample moduli are sorted in decreasing order (ties keep the
    (edge, index) order) and laid along one profile of step h/N, which is
    copied onto every edge.  The result therefore lives on a refined graph
    with N*M points per edge; each original sample of weight h reappears on
    the N edges with weight h/N each.
    """
    graph = f.graph
    N, M = graph.shape
    flat = np.abs(f.values).ravel()
    order = np.argsort(-flat, kind="stable")
    profile = flat[order]
    fine = make_graph(N, (N * M - 1) * graph.spacing / N, N * M)
    return GridField(fine, np.tile(profile, (N, 1)).astype(complex))


def rectangle_lp_power(f: GridField, p: float) -> float:
    """Rectangle-rule sum h * sum |f|^p over every edge sample."""
    return float(f.graph.spacing * np.sum(np.abs(f.values) ** p))


def random_smooth_field(graph: StarGraph, rng: np.random.Generator, n_bumps: int = 4,
                        complex_valued: bool = False, nonnegative: bool = False) -> GridField:
    """Random smooth field, continuous at the vertex and small near x = L.

    Each edge gets a sum of Gaussian bumps; a common radial bump centred at
    the vertex fixes the shared vertex value.
    """
    N, M = graph.shape
    x = graph.x
    L = graph.edge_length
    vals = np.zeros((N, M), dtype=complex)
    width0 = L / 8.0
    amp0 = rng.normal()
    for e in range(N):
        row = amp0 * np.exp(-(x / width0) ** 2)
        for _ in range(n_bumps):
            c = rng.uniform(0.15 * L, 0.6 * L)
            w = rng.uniform(0.04 * L, 0.12 * L)
            amp = rng.normal()
            if complex_valued:
                amp = amp + 1j * rng.normal()
            # bumps vanish at the vertex so continuity is exact
            row = row + amp * (np.exp(-((x - c) / w) ** 2) - np.exp(-(c / w) ** 2) * np.exp(-(x / w) ** 2))
        vals[e] = row
    vals[:, -1] = 0.0
    if nonnegative:
        vals = np.abs(vals).astype(complex)
    return GridField(graph, vals)
