"""Discretized linearized operators, their spectra and index counts.

All scalar operators have the form  -Delta_gamma + shift + V(x)  acting on
the unknown vector [u(0), interior nodes of each edge].  The Laplacian is
assembled from its quadratic form

    sum_e sum_i |u_e(x_{i+1}) - u_e(x_i)|^2 / h  -  gamma |u(0)|^2,

with trapezoid weights W (vertex weight N h / 2).  Operators are stored in
the W-orthonormal coordinates y = W^{1/2} u, where the matrix is exactly
symmetric and its eigenvalues are those of the operator.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, DomainError, ValidationError
from .graph import (GridField, StarGraph, TwoComponentState, from_vector, kinetic_form, lp_norm,
                    stiffness_matrix, to_vector)
from .profiles import PowerParams, nls_profile_family

DENSE_LIMIT = 4000
DENSE_LIMIT_NONSYMMETRIC = 2000


# -- assembly --------------------------------------------------------------

def _laplacian_lower_bound(graph: StarGraph, gamma: float) -> float:
    """Bottom of the discrete -Delta_gamma on the infinite uniform grid."""
    if gamma <= 0:
        return 0.0
    N, h = graph.num_edges, graph.spacing
    bb = 2 * N + 2 * gamma * h
    s = (bb - np.sqrt(bb * bb - 8 * N * gamma * h)) / (2 * N)
    if not 0 < s < 1:
        return -4.0 / h ** 2 - gamma * 2 / (N * h)
    return -s * s / ((1 - s) * h * h)


@dataclass
class OperatorMatrix:
    """Discretized operator in W-orthonormal coordinates."""
    matrix: sp.csr_matrix
    sqrt_weights: np.ndarray
    graph: StarGraph
    symmetric: bool
    block_structure: str
    essential_bottom: float
    lower_bound: float
    name: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def nblocks(self) -> int:
        return {"scalar": 1, "2-block": 2, "4-block": 4}[self.block_structure]

    def scaled(self, *fields: GridField) -> np.ndarray:
        """Stack fields (one per block) into scaled coordinates."""
        if len(fields) != self.nblocks:
            raise ValidationError(f"{self.name} acts on {self.nblocks} component(s)")
        vec = np.concatenate([to_vector(f) for f in fields])
        return self.sqrt_weights * vec

    def fields(self, y: np.ndarray) -> list[GridField]:
        """Inverse of scaled: split a scaled vector into grid fields."""
        u = np.asarray(y) / self.sqrt_weights
        D = self.graph.dimension
        return [from_vector(self.graph, u[i * D:(i + 1) * D]) for i in range(self.nblocks)]

    def apply(self, *fields: GridField) -> list[GridField]:
        return self.fields(self.matrix @ self.scaled(*fields))

    def quadratic_form(self, *fields: GridField) -> float:
        y = self.scaled(*fields)
        return float(np.real(np.vdot(y, self.matrix @ y)))

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def _potential_vector(graph: StarGraph, potential) -> np.ndarray:
    if np.isscalar(potential):
        return np.full(graph.dimension, float(potential))
    arr = np.asarray(potential)
    if arr.shape == graph.shape:
        return np.real(to_vector(GridField(graph, arr)))
    if arr.shape == (graph.dimension,):
        return np.real(arr)
    raise ValidationError(f"potential of shape {arr.shape} does not fit the graph")


def assemble_blocks(graph: StarGraph, gamma: float, shift: float, potentials,
                    name: str = "") -> OperatorMatrix:
    """Block operator (-Delta_gamma + shift) I + [V_ij] with multiplication
    operators V_ij (scalars or N x M arrays).  ``potentials`` is a square
    nested list; None entries are zero."""
    nb = len(potentials)
    if nb not in (1, 2, 4) or any(len(row) != nb for row in potentials):
        raise ValidationError("potential blocks must form a 1x1, 2x2 or 4x4 array")
    K = stiffness_matrix(graph, float(gamma))
    w = graph.vector_weights()
    s_inv = sp.diags(1.0 / np.sqrt(w))
    lap = (s_inv @ K @ s_inv).tocsr()
    lap = ((lap + lap.T) * 0.5).tocsr()
    D = graph.dimension
    blocks = [[None] * nb for _ in range(nb)]
    pvecs = [[None] * nb for _ in range(nb)]
    for i in range(nb):
        for j in range(nb):
            V = potentials[i][j]
            if V is None:
                continue
            pvecs[i][j] = _potential_vector(graph, V)
    for i in range(nb):
        for j in range(nb):
            if i == j:
                diag = shift + (pvecs[i][i] if pvecs[i][i] is not None else 0.0)
                blocks[i][i] = lap + sp.diags(diag * np.ones(D))
            elif pvecs[i][j] is not None:
                blocks[i][j] = sp.diags(pvecs[i][j])
            elif i != j:
                blocks[i][j] = sp.csr_matrix((D, D))
    A = sp.bmat(blocks, format="csr") if nb > 1 else blocks[0][0].tocsr()
    symmetric = all(
        (pvecs[i][j] is None and pvecs[j][i] is None)
        or (pvecs[i][j] is not None and pvecs[j][i] is not None
            and np.array_equal(pvecs[i][j], pvecs[j][i]))
        for i in range(nb) for j in range(nb) if i != j)
    # pointwise Gershgorin bound of the potential part
    low = np.full(D, np.inf)
    for i in range(nb):
        row = shift + (pvecs[i][i] if pvecs[i][i] is not None else np.zeros(D))
        for j in range(nb):
            if j != i and pvecs[i][j] is not None:
                row = row - np.abs(pvecs[i][j])
        low = np.minimum(low, row)
    lower = _laplacian_lower_bound(graph, gamma) + float(low.min())
    structure = {1: "scalar", 2: "2-block", 4: "4-block"}[nb]
    return OperatorMatrix(A, np.tile(np.sqrt(w), nb), graph, symmetric, structure,
                          float(shift), lower, name)


def assemble_delta_laplacian(graph: StarGraph, gamma: float) -> OperatorMatrix:
    return assemble_blocks(graph, gamma, 0.0, [[None]], name="delta_laplacian")


def schrodinger_operator(graph: StarGraph, gamma: float, shift: float, potential,
                         name: str = "") -> OperatorMatrix:
    """Scalar -Delta_gamma + shift + V."""
    return assemble_blocks(graph, gamma, shift, [[potential]], name=name)


def _real_profile(profile) -> GridField:
    if isinstance(profile, TwoComponentState):
        profile = profile.u
    vals = profile.values
    if np.max(np.abs(vals.imag)) > 1e-12 * max(1.0, np.max(np.abs(vals))):
        raise ValidationError("profile must be real")
    return profile


def assemble_one_component_linearization(profile: GridField, params: PowerParams,
                                         part: str = "R", component: int = 1) -> OperatorMatrix:
    """L1^R, L1^I (component 1) or L2 (component 2) around (Phi, 0)."""
    phi = np.real(_real_profile(profile).values)
    graph = profile.graph
    if component == 1:
        if part == "R":
            V = -params.a * (params.q - 1) * phi ** (params.q - 2)
        elif part == "I":
            V = -params.a * phi ** (params.q - 2)
        else:
            raise ValidationError(f"part must be 'R' or 'I', got {part!r}")
        name = f"L1{part}"
    elif component == 2:
        V = -params.b * phi ** 2 if params.p == 2 else 0.0
        name = "L2"
    else:
        raise ValidationError("component must be 1 or 2")
    return schrodinger_operator(graph, params.gamma, params.omega, V, name=name)


def assemble_two_component_linearization(profile: GridField, p: float, b: float, omega: float,
                                         gamma: float, part: str = "R") -> OperatorMatrix:
    """Linearization around the symmetric pair (Phi, Phi)."""
    if not b > -1 or not p >= 2:
        raise ValidationError("need b > -1 and p >= 2")
    phi = np.real(_real_profile(profile).values)
    graph = profile.graph
    pw = phi ** (2 * p - 2)
    if part == "I":
        V = -(1 + b) * pw
        return assemble_blocks(graph, gamma, omega, [[V, None], [None, V]], name="L2tildeI")
    if part == "R":
        Vd = -(2 * p - 1 + b * (p - 1)) * pw
        Vo = -b * p * pw
        return assemble_blocks(graph, gamma, omega, [[Vd, Vo], [Vo, Vd]], name="L2tildeR")
    raise ValidationError(f"part must be 'R' or 'I', got {part!r}")


def assemble_plus_minus(profile: GridField, p: float, b: float, omega: float,
                        gamma: float) -> tuple[OperatorMatrix, OperatorMatrix]:
    """Scalar operators acting on h1 + h2 and h1 - h2."""
    if not b > -1 or not p >= 2:
        raise ValidationError("need b > -1 and p >= 2")
    phi = np.real(_real_profile(profile).values)
    pw = phi ** (2 * p - 2)
    graph = profile.graph
    plus = schrodinger_operator(graph, gamma, omega, -(2 * p - 1) * (b + 1) * pw, name="Lplus")
    minus = schrodinger_operator(graph, gamma, omega, -(2 * p - b - 1) * pw, name="Lminus")
    return plus, minus


def epsilon_profile(k: int, gamma_eff: float, p: float, graph: StarGraph) -> GridField:
    """Psi_k: the hump profile at unit frequency, unit coefficient, coupling gamma_eff."""
    return nls_profile_family(1.0, gamma_eff, k, 2 * p, 1.0, graph)


def assemble_epsilon_operator(epsilon: float, k: int, gamma_eff: float, p: float,
                              graph: StarGraph) -> OperatorMatrix:
    psi = np.real(epsilon_profile(k, gamma_eff, p, graph).values)
    op = schrodinger_operator(graph, gamma_eff, 1.0, -epsilon * psi ** (2 * p - 2), name="Leps")
    op.meta["epsilon"] = epsilon
    return op


def assemble_rotation_linearization(omega0: float, omega1: float, profile: GridField,
                                    gamma: float) -> OperatorMatrix:
    """Four-block operator on (h1R, h1I, h2R, h2I) around (i Phi, Phi)/sqrt 2."""
    phi = np.real(_real_profile(profile).values)
    graph = profile.graph
    N = graph.num_edges
    if not omega0 - omega1 > gamma ** 2 / N ** 2:
        raise DomainError("need omega0 - omega1 > gamma^2 / N^2")
    p2 = phi ** 2
    z = None
    blocks = [
        [-p2, z, z, omega1],
        [z, -2 * p2, -omega1 - p2, z],
        [z, -omega1 - p2, -2 * p2, z],
        [omega1, z, z, -p2],
    ]
    return assemble_blocks(graph, gamma, omega0, blocks, name="L2D")


def rotation_scalar_operators(omega0: float, omega1: float, profile: GridField,
                              gamma: float) -> list[OperatorMatrix]:
    """The four scalar operators on h1R+h2I, h1R-h2I, h1I+h2R, h1I-h2R."""
    phi = np.real(_real_profile(profile).values)
    graph = profile.graph
    p2 = phi ** 2
    return [
        schrodinger_operator(graph, gamma, omega0 + omega1, -p2, name="L2D_a"),
        schrodinger_operator(graph, gamma, omega0 - omega1, -p2, name="L2D_b"),
        schrodinger_operator(graph, gamma, omega0 - omega1, -3 * p2, name="L2D_c"),
        schrodinger_operator(graph, gamma, omega0 + omega1, -p2, name="L2D_d"),
    ]


# -- spectra ---------------------------------------------------------------

@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None
    n_negative: int
    kernel_dim: int
    zero_tol: float

    @property
    def n_positive(self) -> int:
        return len(self.eigenvalues) - self.n_negative - self.kernel_dim

    def classification(self) -> list[str]:
        out = []
        for lam in self.eigenvalues:
            if lam < -self.zero_tol:
                out.append("neg")
            elif abs(lam) <= self.zero_tol:
                out.append("ker")
            else:
                out.append("pos")
        return out


def default_zero_tol(op: OperatorMatrix) -> float:
    return max(1e-6 * abs(op.essential_bottom), 100 * op.graph.spacing ** 2)


def spectrum(op: OperatorMatrix, n_lowest: int = 10, zero_tol: float | None = None,
             return_vectors: bool = True) -> SpectrumReport:
    """Lowest eigenpairs of a symmetric operator (eigenvectors in scaled coordinates)."""
    if not op.symmetric:
        raise ValidationError(f"{op.name or 'operator'} is not symmetric")
    if zero_tol is None:
        zero_tol = default_zero_tol(op)
    n = min(int(n_lowest), op.dimension)
    if op.dimension <= DENSE_LIMIT:
        vals, vecs = sla.eigh(op.dense(), subset_by_index=[0, n - 1])
    else:
        n = min(n, op.dimension - 2)
        sigma = op.lower_bound - 1e-3 * (1.0 + abs(op.lower_bound))
        try:
            vals, vecs = spla.eigsh(op.matrix.tocsc(), k=n, sigma=sigma, which="LM")
        except spla.ArpackNoConvergence as exc:  # pragma: no cover - defensive
            raise ConvergenceError(f"eigensolver did not converge: {exc}") from exc
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
        res = np.linalg.norm(op.matrix @ vecs - vecs * vals, axis=0)
        scale = spla.norm(op.matrix, np.inf)
        if np.any(res > 1e-8 * scale):
            raise ConvergenceError(
                f"eigensolver residuals too large: max {res.max():.3e} (scale {scale:.3e})")
    n_neg = int(np.sum(vals < -zero_tol))
    n_ker = int(np.sum(np.abs(vals) <= zero_tol))
    return SpectrumReport(vals, vecs if return_vectors else None, n_neg, n_ker, zero_tol)


def morse_index(op: OperatorMatrix, zero_tol: float | None = None,
                n_start: int = 8) -> tuple[int, int]:
    """(number of negative eigenvalues, kernel dimension)."""
    n = n_start
    while True:
        rep = spectrum(op, n, zero_tol, return_vectors=False)
        if rep.eigenvalues[-1] > rep.zero_tol or n >= op.dimension:
            return rep.n_negative, rep.kernel_dim
        n *= 2


def kernel_basis(op: OperatorMatrix, zero_tol: float | None = None,
                 n_probe: int | None = None) -> tuple[np.ndarray, np.ndarray, SpectrumReport]:
    """Orthonormal kernel vectors (scaled coordinates) and their eigenvalues."""
    n_probe = n_probe or max(6, 2 * op.nblocks + 2)
    rep = spectrum(op, n_probe, zero_tol)
    mask = np.abs(rep.eigenvalues) <= rep.zero_tol
    K = rep.eigenvectors[:, mask]
    # Gram-Schmidt against rounding
    K, _ = np.linalg.qr(K) if K.shape[1] else (K, None)
    return K, rep.eigenvalues[mask], rep


# -- instability -----------------------------------------------------------

@dataclass
class InstabilityResult:
    eigenvalues: list
    vectors: list = field(default_factory=list)
    kernel_dim: int = 0


def _block_real_vector(vec: np.ndarray) -> np.ndarray:
    """Rotate a complex eigenvector so its largest entry is real."""
    j = int(np.argmax(np.abs(vec)))
    return vec * np.exp(-1j * np.angle(vec[j]))


def instability_eigenvalues(LR: OperatorMatrix, LI: OperatorMatrix, tol: float = 1e-4,
                            zero_tol: float | None = None, return_vectors: bool = False,
                            n_candidates: int = 16, method: str = "auto"):
    """Eigenvalues of [[0, LI], [-LR, 0]] with real part above tol.

    The kernel of LI is detected numerically and projected out before the
    nonsymmetric solve.  Block matrices of size up to 2000 are solved
    densely; larger ones by
    shift-invert Arnoldi about sigma = omega/2 on the positive real axis,
    which sees every real eigenvalue in (0, 1.5 omega) before any point of
    the imaginary axis outside the gap.
    """
    if LR.dimension != LI.dimension:
        raise ValidationError("LR and LI must have the same dimension")
    Kb, mu, rep = kernel_basis(LI, zero_tol)
    if rep.n_negative:
        raise ValidationError(f"LI has {rep.n_negative} negative eigenvalue(s); expected LI >= 0")
    D = LR.dimension
    if method not in ("auto", "dense", "sparse"):
        raise ValidationError("method must be 'auto', 'dense' or 'sparse'")
    dense = method == "dense" or (method == "auto" and 2 * D <= DENSE_LIMIT_NONSYMMETRIC)
    if dense:
        P = np.eye(D) - Kb @ Kb.T
        BI = P @ LI.dense() @ P
        BR = P @ LR.dense() @ P
        A = np.block([[np.zeros((D, D)), BI], [-BR, np.zeros((D, D))]])
        vals, vecs = sla.eig(A)
    else:
        sigma = 0.5 * max(LI.essential_bottom, 1e-3)
        A0 = sp.bmat([[None, LI.matrix], [-LR.matrix, None]], format="csc")
        # deflation LI -> LI - K diag(mu) K^T as a low-rank correction
        r = Kb.shape[1]
        U = np.zeros((2 * D, r))
        V = np.zeros((2 * D, r))
        U[:D] = -Kb * mu
        V[D:] = Kb
        shifted = (A0 - sigma * sp.identity(2 * D, format="csc")).tocsc()
        lu = spla.splu(shifted)
        if r:
            AiU = lu.solve(U)
            cap = np.eye(r) + V.T @ AiU
            cap_inv = np.linalg.inv(cap)

        def op_inv(x):
            y = lu.solve(np.asarray(x, dtype=float)) if np.isrealobj(x) else (
                lu.solve(np.real(x)) + 1j * lu.solve(np.imag(x)))
            if r:
                y = y - AiU @ (cap_inv @ (V.T @ y))
            return y

        def matvec(x):
            y = A0 @ x
            if r:
                y = y + U @ (V.T @ x)
            return y

        Aop = spla.LinearOperator((2 * D, 2 * D), matvec=matvec, dtype=float)
        OPinv = spla.LinearOperator((2 * D, 2 * D), matvec=op_inv, dtype=float)
        k = min(n_candidates, 2 * D - 2)
        vals, vecs = spla.eigs(Aop, k=k, sigma=sigma, OPinv=OPinv, which="LM")
    keep = np.where(vals.real > tol)[0]
    keep = keep[np.argsort(-vals.real[keep])]
    eig = [complex(v) for v in vals[keep]]
    if not return_vectors:
        return eig
    out = []
    for j in keep:
        vec = _block_real_vector(vecs[:, j])
        if dense and Kb.shape[1]:
            # restore the ker(LI) part of hI dropped by the projection: -LR hR = lam hI
            vec = vec.copy()
            vec[D:] -= Kb @ (Kb.T @ (LR.matrix @ vec[:D])) / vals[j]
        hR = LR.fields(vec[:D])
        hI = LR.fields(vec[D:])
        out.append((hR, hI))
    return InstabilityResult(eig, out, Kb.shape[1])


def grillakis_lower_bound(LR: OperatorMatrix, LI: OperatorMatrix,
                          zero_tol: float | None = None) -> int:
    """n(P LR P) - n(P LI^{-1} P) with P the projection off ker(LI).

    The first count uses n(LR|K^perp) = n(LR) - n(D) - z(D) with
    D = K^T LR^{-1} K; the second is zero because LI >= 0 and is checked.
    """
    Kb, _, rep = kernel_basis(LI, zero_tol)
    if rep.n_negative:
        raise ValidationError("LI has negative eigenvalues; the second term is not zero")
    if Kb.shape[1] == 0:
        raise ValidationError("no kernel detected for LI")
    nR, zR = morse_index(LR, zero_tol)
    if zR:
        raise ValidationError("LR is singular; the projected index is not defined")
    lu = spla.splu(LR.matrix.tocsc())
    Dm = Kb.T @ lu.solve(Kb)
    Dm = 0.5 * (Dm + Dm.T)
    ev = np.linalg.eigvalsh(Dm)
    tol = 1e-10 * max(1.0, np.max(np.abs(ev)))
    return int(nR - np.sum(ev < -tol) - np.sum(np.abs(ev) <= tol))


def projected_morse_dense(op: OperatorMatrix, kernel: np.ndarray, zero_tol: float) -> int:
    """n(Q^T A Q) for Q an orthonormal basis of the complement of span(kernel)."""
    D = op.dimension
    P = np.eye(D) - kernel @ kernel.T
    Q, _ = np.linalg.qr(P)
    Q = Q[:, : D - kernel.shape[1]]
    vals = np.linalg.eigvalsh(Q.T @ op.dense() @ Q)
    return int(np.sum(vals < -zero_tol))


# -- Hessian of the action ------------------------------------------------

@dataclass
class HessianReport:
    matrix: np.ndarray
    eigenvalues: np.ndarray
    n_positive: int
    det: float
    trace: float
    phi_hplus: float
    phi_hminus: float


def _solve_minus_profile(op: OperatorMatrix, phi: GridField) -> float:
    """<Phi, h> where op h = -Phi."""
    y0 = np.real(op.scaled(phi))
    y = spla.spsolve(op.matrix.tocsc(), -y0)
    return float(np.dot(y0, y))


def hessian_two_component(profile: GridField, p: float, b: float, omega: float,
                          gamma: float, zero_tol: float | None = None) -> HessianReport:
    phi = _real_profile(profile)
    plus, minus = assemble_plus_minus(phi, p, b, omega, gamma)
    tol = zero_tol if zero_tol is not None else default_zero_tol(minus)
    for op in (plus, minus):
        _, ker = morse_index(op, tol)
        if ker:
            raise ValidationError(
                f"{op.name} is numerically singular (b close to p-1?); the Hessian is ill-conditioned")
    sp_ = _solve_minus_profile(plus, phi)
    sm = _solve_minus_profile(minus, phi)
    d = 0.25 * np.array([[sp_ + sm, sp_ - sm], [sp_ - sm, sp_ + sm]])
    ev = np.linalg.eigvalsh(d)
    return HessianReport(d, ev, int(np.sum(ev > 0)), float(np.linalg.det(d)),
                         float(np.trace(d)), sp_, sm)


def _builder_mass(obj) -> float:
    if isinstance(obj, TwoComponentState):
        return lp_norm(obj.u, 2) ** 2 + lp_norm(obj.v, 2) ** 2
    return lp_norm(obj, 2) ** 2


def mass_derivative(profile_builder: Callable[[float], GridField], omega: float,
                    delta_omega: float) -> float:
    """Centered difference of ||Phi(omega)||_2^2 in omega."""
    try:
        hi = _builder_mass(profile_builder(omega + delta_omega))
        lo = _builder_mass(profile_builder(omega - delta_omega))
    except DomainError as exc:
        raise DomainError(f"omega +- delta leaves the admissible range: {exc}") from exc
    return (hi - lo) / (2 * delta_omega)


def bisect_sign_change(func: Callable[[float], float], lo: float, hi: float,
                       tol: float = 1e-3, max_iter: int = 200) -> float:
    """Bisection for a sign change of func on [lo, hi]."""
    flo, fhi = func(lo), func(hi)
    if np.sign(flo) == np.sign(fhi):
        raise ValidationError(f"no sign change on [{lo}, {hi}]")
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        fm = func(mid)
        if np.sign(fm) == np.sign(flo):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def epsilon_pairing(epsilon: float, k: int, gamma_eff: float, p: float, graph: StarGraph) -> float:
    """<s, Psi> where L_eps s = -Psi."""
    op = assemble_epsilon_operator(epsilon, k, gamma_eff, p, graph)
    return _solve_minus_profile(op, epsilon_profile(k, gamma_eff, p, graph))


def eigen_residuals(op: OperatorMatrix, rep: SpectrumReport) -> np.ndarray:
    vecs = rep.eigenvectors
    return np.linalg.norm(op.matrix @ vecs - vecs * rep.eigenvalues, axis=0)


__all__: Sequence[str] = [
    "OperatorMatrix", "SpectrumReport", "assemble_delta_laplacian",
    "assemble_one_component_linearization", "assemble_two_component_linearization",
    "assemble_plus_minus", "assemble_epsilon_operator", "assemble_rotation_linearization",
    "spectrum", "morse_index", "instability_eigenvalues", "grillakis_lower_bound",
    "hessian_two_component", "mass_derivative",
]
