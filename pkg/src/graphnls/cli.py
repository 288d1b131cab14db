"""Command-line front end.

    graphnls <command> --config run.json [--out DIR] [--seed N]

Every command reads one JSON document, resolves it against the defaults
below (unknown keys are rejected), and writes CSV/JSON files into the output
directory.  Each file starts with the resolved configuration and the package
version.  Exit codes: 0 success, 2 validation or regime error, 3 solver
non-convergence, 4 blow-up during time stepping.
"""
from __future__ import annotations

import argparse
import copy
import dataclasses
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import EvolveConfig, Perturbation, ProfileFamily, stability_experiment
from .errors import BlowUpError, ConvergenceError, GraphNLSError, ValidationError
from .graph import (GridField, StarGraph, TwoComponentState, derivative, edge_integrals,
                    inner_product, lp_norm, make_graph, random_smooth_field, rearrange,
                    rectangle_lp_power)
from .operators import (assemble_delta_laplacian, assemble_epsilon_operator,
                        assemble_one_component_linearization, assemble_plus_minus,
                        assemble_rotation_linearization, assemble_two_component_linearization,
                        default_zero_tol, grillakis_lower_bound, instability_eigenvalues,
                        morse_index, spectrum)
from .profiles import (CubicParams, half_soliton, j_closed_form, mass_restriction_holds,
                       mass_targets, max_k, regime, stationary_residual, vertex_shift)
from .variational import MinimizeConfig, energy, minimize_fixed_masses

log = logging.getLogger("graphnls")

EXIT_OK, EXIT_VALIDATION, EXIT_CONVERGENCE, EXIT_BLOWUP = 0, 2, 3, 4

COMMANDS = ("profile", "ground-state", "spectrum", "instability", "evolve", "rearrange")
OPERATORS = ("delta_laplacian", "L1R", "L1I", "L2", "L2tildeR", "L2tildeI", "Lplus", "Lminus",
             "Leps", "L2D")
MODEL_KINDS = ("cubic", "power", "rotation")

_MODEL_KEYS = {"kind", "a", "b", "c", "p", "q", "r", "gamma", "omega", "omega0", "omega1", "k",
               "enforce_mass_restriction"}
_MODEL_REQUIRED = {
    "cubic": ("a", "b", "c", "gamma", "omega"),
    "power": ("gamma", "omega"),
    "rotation": ("omega0", "omega1", "gamma"),
}
_MODEL_DEFAULTS = {"a": 1.0, "b": 0.0, "c": 1.0, "p": 2.0, "q": 4.0, "r": None, "k": 0,
                   "omega": None, "omega0": None, "omega1": None,
                   "enforce_mass_restriction": True}
_SECTIONS = {
    "graph": {"N": 3, "L": 30.0, "M": 3001},
    "solver": {f.name: f.default for f in dataclasses.fields(MinimizeConfig)},
    "evolve": {"dt": None, "t_final": None, "scheme": "crank_nicolson_fixed_point",
               "nonlinear_tol": 1e-13, "max_picard": 50, "max_halvings": 6},
    "tolerances": {"zero_tol": None, "mass_tol": 1e-10},
    "masses": {"alpha": None, "beta": None},
    "spectrum": {"operator": None, "n_lowest": 10, "epsilon": None},
    "experiment": {"amplitude": 1e-3, "direction": "random"},
}
_TOP_KEYS = set(_SECTIONS) | {"model", "output_dir", "seed"}


# -- configuration ---------------------------------------------------------

def _fill(section: str, given: dict, defaults: dict) -> dict:
    if not isinstance(given, dict):
        raise ValidationError(f"config section {section!r} must be an object")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ValidationError(f"unknown key(s) in {section!r}: {', '.join(unknown)}")
    out = dict(defaults)
    out.update(given)
    return out


def resolve_config(raw: dict, seed: int | None = None, out: str | None = None) -> dict:
    """Validate key names, fill defaults and apply command-line overrides."""
    if not isinstance(raw, dict):
        raise ValidationError("config must be a JSON object")
    unknown = sorted(set(raw) - _TOP_KEYS)
    if unknown:
        raise ValidationError(f"unknown top-level key(s): {', '.join(unknown)}")
    if "model" not in raw:
        raise ValidationError("config needs a 'model' section")
    cfg = {name: _fill(name, raw.get(name, {}), d) for name, d in _SECTIONS.items()}
    model = raw["model"]
    if not isinstance(model, dict):
        raise ValidationError("config section 'model' must be an object")
    bad = sorted(set(model) - _MODEL_KEYS)
    if bad:
        raise ValidationError(f"unknown key(s) in 'model': {', '.join(bad)}")
    kind = model.get("kind")
    if kind not in MODEL_KINDS:
        raise ValidationError(f"model.kind must be one of {MODEL_KINDS}, got {kind!r}")
    missing = [key for key in _MODEL_REQUIRED[kind] if key not in model]
    if missing:
        raise ValidationError(f"model kind {kind!r} needs field(s): {', '.join(missing)}")
    m = dict(_MODEL_DEFAULTS)
    m.update(model)
    if m["r"] is None:
        m["r"] = m["q"]
    cfg["model"] = m
    cfg["seed"] = int(seed if seed is not None else raw.get("seed", 0))
    cfg["output_dir"] = str(out if out is not None else raw.get("output_dir", "."))
    if "rng_seed" not in raw.get("solver", {}):
        cfg["solver"]["rng_seed"] = cfg["seed"]
    return cfg


def load_config(path: str | os.PathLike) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc


def build_graph(cfg: dict) -> StarGraph:
    g = cfg["graph"]
    return make_graph(g["N"], g["L"], g["M"])


def _cubic(cfg: dict) -> CubicParams:
    m = cfg["model"]
    return CubicParams(float(m["a"]), float(m["b"]), float(m["c"]), float(m["gamma"]),
                       float(m["omega"]))


def family_from_config(cfg: dict) -> ProfileFamily:
    """Standing-wave family described by the model section.

    A power model with b = 0 is the one-component family (Phi_k, 0) with
    exponent q and coefficient a; otherwise it is the symmetric two-component
    family, which needs q = r = 2p and a = c = 1.
    """
    m = cfg["model"]
    kind = m["kind"]
    if kind == "cubic":
        return ProfileFamily("cubic_ground_state", omega=m["omega"], gamma=m["gamma"],
                             a=m["a"], b=m["b"], c=m["c"])
    if kind == "rotation":
        return ProfileFamily("rotation", gamma=m["gamma"], k=int(m["k"]), omega0=m["omega0"],
                             omega1=m["omega1"])
    if m["b"] == 0:
        return ProfileFamily("one_component", omega=m["omega"], gamma=m["gamma"], k=int(m["k"]),
                             q=m["q"], a=m["a"])
    if not (m["q"] == 2 * m["p"] and m["r"] == 2 * m["p"] and m["a"] == 1 and m["c"] == 1):
        raise ValidationError("a coupled power model needs q = r = 2p and a = c = 1")
    return ProfileFamily("two_component", omega=m["omega"], gamma=m["gamma"], k=int(m["k"]),
                         p=m["p"], b=m["b"])


def regime_flags(cfg: dict) -> dict:
    """Hypotheses of the relevant theorems, evaluated for the echo block."""
    m = cfg["model"]
    N = cfg["graph"]["N"]
    flags = {"gamma_positive": m["gamma"] > 0, "k_max": max_k(N),
             "k_in_range": 0 <= int(m["k"]) <= max_k(N)}
    if m["kind"] == "cubic":
        cp = _cubic(cfg)
        try:
            flags["regime"] = regime(cp)
        except GraphNLSError:
            flags["regime"] = None
        flags["mass_restriction"] = bool(mass_restriction_holds(cp, N))
        flags["omega_above_threshold"] = cp.omega > cp.gamma ** 2 / N ** 2
    elif m["kind"] == "power":
        if m["b"] != 0:
            flags["b_above_p_minus_1"] = m["b"] > m["p"] - 1
    return flags


# -- output ----------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        val = float(obj)
        return val if math.isfinite(val) else None
    if isinstance(obj, complex):
        return [_jsonable(obj.real), _jsonable(obj.imag)]
    return obj


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return "%.17g" % float(x)


def _echo(cfg: dict) -> dict:
    """Resolved config as echoed into outputs; the output location is left out so that
    identical runs written to different directories are byte-identical."""
    return {k: v for k, v in cfg.items() if k != "output_dir"}


def _echo_line(cfg: dict) -> str:
    return json.dumps(_jsonable(_echo(cfg)), sort_keys=True, separators=(",", ":"))


class Writer:
    """Writes output files with the echo header into one directory."""

    def __init__(self, out_dir: str, command: str, cfg: dict):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.cfg = cfg
        self.config_line = _echo_line(cfg)

    def _header(self) -> str:
        return (f"# graphnls {__version__}\n# command: {self.command}\n"
                f"# config: {self.config_line}\n")

    def csv(self, name: str, columns, rows) -> Path:
        path = self.dir / name
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self._header())
            fh.write(",".join(columns) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")
        return path

    def open_csv(self, name: str, columns):
        fh = open(self.dir / name, "w", encoding="utf-8", newline="\n")
        fh.write(self._header())
        fh.write(",".join(columns) + "\n")
        fh.flush()
        return fh

    def json(self, name: str, payload: dict) -> Path:
        doc = {"version": __version__, "command": self.command, "config": _echo(self.cfg)}
        doc.update(payload)
        path = self.dir / name
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
        return path


def field_rows(state: TwoComponentState):
    graph = state.graph
    x = graph.x
    u, v = state.u.values, state.v.values
    for e in range(graph.num_edges):
        for i in range(graph.points_per_edge):
            yield (e + 1, x[i], u[e, i].real, u[e, i].imag, v[e, i].real, v[e, i].imag)


FIELD_COLUMNS = ("edge", "x", "re_u", "im_u", "re_v", "im_v")


def read_field_csv(path: str | os.PathLike) -> GridField:
    """Read a scalar field from CSV with columns edge, x and re/im (or re_u/im_u or value)."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    except OSError as exc:
        raise ValidationError(f"cannot read field CSV {path}: {exc}") from exc
    if len(lines) < 2:
        raise ValidationError(f"{path}: malformed CSV (no data rows)")
    cols = [c.strip() for c in lines[0].split(",")]
    if "edge" not in cols or "x" not in cols:
        raise ValidationError(f"{path}: malformed CSV (need 'edge' and 'x' columns)")
    for re_name, im_name in (("re", "im"), ("re_u", "im_u"), ("value", None)):
        if re_name in cols:
            break
    else:
        raise ValidationError(f"{path}: malformed CSV (need re/im, re_u/im_u or value columns)")
    try:
        data = np.array([[float(t) for t in ln.split(",")] for ln in lines[1:]])
    except ValueError as exc:
        raise ValidationError(f"{path}: malformed CSV ({exc})") from exc
    if data.ndim != 2 or data.shape[1] != len(cols):
        raise ValidationError(f"{path}: malformed CSV (ragged rows)")
    edges = data[:, cols.index("edge")].astype(int)
    labels = np.unique(edges)
    N = len(labels)
    if not np.array_equal(labels, np.arange(1, N + 1)):
        raise ValidationError(f"{path}: malformed CSV (edges must be numbered 1..N)")
    xs = data[:, cols.index("x")]
    vals = data[:, cols.index(re_name)].astype(complex)
    if im_name is not None and im_name in cols:
        vals = vals + 1j * data[:, cols.index(im_name)]
    rows = [np.where(edges == e)[0] for e in labels]
    M = len(rows[0])
    if any(len(r) != M for r in rows) or M < 3:
        raise ValidationError(f"{path}: malformed CSV (edges need equal sample counts >= 3)")
    x0 = xs[rows[0]]
    L = float(x0[-1])
    if not (x0[0] == 0 and L > 0 and np.allclose(np.diff(x0), L / (M - 1), rtol=1e-9, atol=1e-12)):
        raise ValidationError(f"{path}: malformed CSV (x must be a uniform grid from 0)")
    if any(not np.allclose(xs[r], x0, rtol=0, atol=1e-12) for r in rows):
        raise ValidationError(f"{path}: malformed CSV (edges must share the grid)")
    graph = make_graph(N, L, M)
    return GridField(graph, np.array([vals[r] for r in rows]))


# -- commands --------------------------------------------------------------

def _cubic_profile(cfg: dict, graph: StarGraph) -> TwoComponentState:
    """Closed-form coupled ground state; gamma = 0 is allowed as a reference."""
    cp = _cubic(cfg)
    N = graph.num_edges
    if cp.gamma < 0:
        raise ValidationError(f"gamma must be >= 0 for the cubic ground state, got {cp.gamma}")
    regime(cp)
    if cfg["model"]["enforce_mass_restriction"] and not mass_restriction_holds(cp, N):
        raise ValidationError(
            f"mass restriction N*sqrt(omega) - gamma <= 2*gamma/N fails: "
            f"{N * math.sqrt(cp.omega) - cp.gamma:.6g} > {2 * cp.gamma / N:.6g}")
    det = cp.b ** 2 - cp.a * cp.c
    s1, s2 = (cp.b - cp.c) / det, (cp.b - cp.a) / det
    phi = half_soliton(cp.omega, cp.gamma, graph)
    return TwoComponentState(phi * math.sqrt(s1), phi * math.sqrt(s2))


def cmd_profile(cfg: dict, writer: Writer) -> int:
    graph = build_graph(cfg)
    m = cfg["model"]
    fam = family_from_config(cfg)
    if m["kind"] == "cubic":
        state = _cubic_profile(cfg, graph)
        params = _cubic(cfg)
    else:
        state = fam.profile(graph)
        params = fam.params()
    qu, qv = lp_norm(state.u) ** 2, lp_norm(state.v) ** 2
    E = energy(state, params)
    summary = {
        "regime_flags": regime_flags(cfg),
        "mass_u": qu, "mass_v": qv, "energy": E,
        "stationary_residual": stationary_residual(state, params),
        "peak_u": float(np.max(np.abs(state.u.values))),
        "peak_v": float(np.max(np.abs(state.v.values))),
    }
    N = graph.num_edges
    if m["kind"] == "cubic":
        cp = params
        summary["shape_peak"] = float(np.max(np.abs(half_soliton(cp.omega, cp.gamma, graph).values)))
        summary["shape_peak_closed_form"] = math.sqrt(2 * cp.omega) / math.cosh(
            math.atanh(cp.gamma / (N * math.sqrt(cp.omega))))
        alpha, beta = mass_targets(cp, N)
        summary["mass_targets"] = [alpha, beta]
        if cp.gamma > 0 and summary["regime_flags"]["mass_restriction"]:
            J1, J2, J = j_closed_form(cp, N)
            summary["J_closed"] = J
            summary["J_components"] = [J1, J2]
            summary["energy_rel_error"] = abs(E - J) / abs(J)
    elif fam.kind in ("one_component", "two_component"):
        q = fam.q if fam.kind == "one_component" else 2 * fam.p
        coeff = fam.a if fam.kind == "one_component" else 1 + fam.b
        top = (q * fam.omega / (2 * coeff)) ** (1 / (q - 2))
        if fam.k == 0:
            a0 = vertex_shift(fam.omega, fam.gamma, 0, N)
            top = top / math.cosh(a0) ** (2 / (q - 2))
        summary["peak_closed_form"] = top
    writer.csv("profile.csv", FIELD_COLUMNS, field_rows(state))
    writer.json("summary.json", summary)
    return EXIT_OK


def cmd_ground_state(cfg: dict, writer: Writer) -> int:
    if cfg["model"]["kind"] != "cubic":
        raise ValidationError("ground-state needs model.kind = 'cubic'")
    graph = build_graph(cfg)
    N = graph.num_edges
    cp = _cubic(cfg)
    closed = _cubic_profile(cfg, graph)
    if not cp.gamma > 0:
        raise ValidationError(f"gamma must be positive, got {cp.gamma}")
    targets = mass_targets(cp, N)
    alpha = cfg["masses"]["alpha"] if cfg["masses"]["alpha"] is not None else targets[0]
    beta = cfg["masses"]["beta"] if cfg["masses"]["beta"] is not None else targets[1]
    mcfg = MinimizeConfig(**cfg["solver"])
    summary = {"regime_flags": regime_flags(cfg), "alpha": alpha, "beta": beta}
    try:
        res = minimize_fixed_masses(cp, alpha, beta, mcfg, graph)
    except ConvergenceError as exc:
        summary.update({"converged": False, "error": str(exc)})
        writer.json("summary.json", summary)
        raise
    writer.csv("field.csv", FIELD_COLUMNS, field_rows(res.state))
    writer.csv("trace.csv", ("iteration", "energy", "grad_norm"), res.trace)
    summary.update({
        "energy": res.energy, "omega1": res.omega1, "omega2": res.omega2,
        "iterations": res.iterations, "converged": res.converged, "grad_norm": res.grad_norm,
        "mass_u": lp_norm(res.state.u) ** 2, "mass_v": lp_norm(res.state.v) ** 2,
    })
    summary["mass_within_tol"] = (abs(summary["mass_u"] - alpha) <= cfg["tolerances"]["mass_tol"]
                                  * max(1.0, alpha)
                                  and abs(summary["mass_v"] - beta)
                                  <= cfg["tolerances"]["mass_tol"] * max(1.0, beta))
    if summary["regime_flags"]["mass_restriction"]:
        J = j_closed_form(cp, N)[2]
        comparison = {"J_closed": J, "energy_rel_error": abs(res.energy - J) / abs(J),
                      "omega": cp.omega,
                      "omega1_error": abs(res.omega1 - cp.omega),
                      "omega2_error": abs(res.omega2 - cp.omega)}
        if alpha == targets[0] and beta == targets[1]:
            comparison["sup_error"] = float(max(
                np.max(np.abs(res.state.u.values - closed.u.values)),
                np.max(np.abs(res.state.v.values - closed.v.values))))
        summary["comparison"] = comparison
    writer.json("summary.json", summary)
    if not res.converged:
        log.error("minimizer stopped after %d iterations (gradient norm %.3e)",
                  res.iterations, res.grad_norm)
        return EXIT_CONVERGENCE
    return EXIT_OK


def _expected_morse(name: str, cfg: dict, fam: ProfileFamily | None, epsilon=None):
    """(n, kernel) predicted by the theory for this configuration, or None."""
    m = cfg["model"]
    N = cfg["graph"]["N"]
    gamma, k = m["gamma"], int(m["k"])
    if name == "delta_laplacian":
        return (1 if gamma > 0 else 0), 0
    if name == "L1R" and fam and fam.kind == "one_component":
        if gamma > 0:
            return k + 1, 0
        if gamma < 0:
            return N - k, 0
        return None
    if name == "L1I" and fam and fam.kind == "one_component":
        return 0, 1
    if name == "L2" and m["p"] > 2:
        return 0, 0
    if fam is None or fam.kind != "two_component":
        if name == "L2D" and fam and fam.kind == "rotation" and gamma > 0:
            return k + 1, 1
        if name == "Leps":
            return _expected_eps(epsilon, m["p"], gamma, k)
        return None
    p, b = m["p"], m["b"]
    plus = (k + 1, 0) if gamma > 0 else None
    if b > p - 1:
        minus = (0, 0)
    elif 0 < b < p - 1 and gamma > 0 and k == 0:
        minus = (1, 0)
    else:
        minus = None
    if name == "Lplus":
        return plus
    if name == "Lminus":
        return minus
    if name == "L2tildeI":
        return 0, 2
    if name == "L2tildeR" and plus and minus:
        return plus[0] + minus[0], 0
    if name == "Leps":
        return _expected_eps(epsilon, p, gamma, k)
    return None


def _expected_eps(epsilon, p, gamma, k):
    if epsilon is None:
        return None
    if epsilon < 1:
        return 0, 0
    if epsilon == 1:
        return 0, 1
    if epsilon == 2 * p - 1 and gamma > 0 and k == 0:
        return 1, 0
    return None


def build_operator(name: str, cfg: dict, graph: StarGraph):
    """Assemble one of OPERATORS; returns (operator, family or None, epsilon)."""
    if name not in OPERATORS:
        raise ValidationError(f"unknown operator {name!r}; choose from {', '.join(OPERATORS)}")
    m = cfg["model"]
    if name == "delta_laplacian":
        return assemble_delta_laplacian(graph, m["gamma"]), None, None
    if name == "Leps":
        eps = cfg["spectrum"]["epsilon"]
        if eps is None:
            raise ValidationError("operator Leps needs spectrum.epsilon")
        if m["omega"] is None or not m["omega"] > 0:
            raise ValidationError("operator Leps needs a positive model.omega")
        op = assemble_epsilon_operator(float(eps), int(m["k"]), m["gamma"] / math.sqrt(m["omega"]),
                                       m["p"], graph)
        return op, None, float(eps)
    fam = family_from_config(cfg)
    if name in ("L1R", "L1I", "L2"):
        if fam.kind != "one_component":
            raise ValidationError(f"{name} needs a power model with b = 0")
        prof = fam.profile(graph, discrete=True)
        pp = dataclasses.replace(fam.params(), p=m["p"], b=m["b"])
        if name == "L2":
            return assemble_one_component_linearization(prof.u, pp, "R", component=2), fam, None
        return assemble_one_component_linearization(prof.u, pp, name[-1]), fam, None
    if name in ("L2tildeR", "L2tildeI", "Lplus", "Lminus"):
        if fam.kind != "two_component":
            raise ValidationError(f"{name} needs a coupled power model (b != 0, q = r = 2p)")
        prof = fam.profile(graph, discrete=True)
        if name in ("Lplus", "Lminus"):
            plus, minus = assemble_plus_minus(prof.u, fam.p, fam.b, fam.omega, fam.gamma)
            return (plus if name == "Lplus" else minus), fam, None
        part = name[-1]
        return assemble_two_component_linearization(prof.u, fam.p, fam.b, fam.omega, fam.gamma,
                                                    part), fam, None
    if fam.kind != "rotation":
        raise ValidationError("L2D needs model.kind = 'rotation'")
    prof = fam.profile(graph, discrete=True)
    phi = prof.v * math.sqrt(2)
    return assemble_rotation_linearization(fam.omega0, fam.omega1, phi, fam.gamma), fam, None


def cmd_spectrum(cfg: dict, writer: Writer, operator: str | None = None) -> int:
    name = operator or cfg["spectrum"]["operator"]
    if name is None:
        raise ValidationError("spectrum needs --operator or spectrum.operator")
    cfg["spectrum"]["operator"] = name
    writer.cfg = cfg
    writer.config_line = _echo_line(cfg)
    graph = build_graph(cfg)
    op, fam, eps = build_operator(name, cfg, graph)
    zt = cfg["tolerances"]["zero_tol"]
    zt = default_zero_tol(op) if zt is None else float(zt)
    rep = spectrum(op, int(cfg["spectrum"]["n_lowest"]), zt, return_vectors=False)
    n_neg, n_ker = morse_index(op, zt)
    expected = _expected_morse(name, cfg, fam, eps)
    writer.csv("spectrum.csv", ("index", "eigenvalue", "classification"),
               ((i, lam, cls) for i, (lam, cls) in
                enumerate(zip(rep.eigenvalues, rep.classification()))))
    summary = {"operator": name, "dimension": op.dimension, "zero_tol": zt,
               "n_negative": n_neg, "kernel_dim": n_ker,
               "expected_n_negative": expected[0] if expected else None,
               "expected_kernel_dim": expected[1] if expected else None,
               "matches_theory": (expected == (n_neg, n_ker)) if expected else None,
               "regime_flags": regime_flags(cfg)}
    writer.json("morse.json", summary)
    return EXIT_OK


def cmd_instability(cfg: dict, writer: Writer) -> int:
    graph = build_graph(cfg)
    fam = family_from_config(cfg)
    LR, LI = fam.linearization(graph)
    zt = cfg["tolerances"]["zero_tol"]
    res = instability_eigenvalues(LR, LI, zero_tol=zt, return_vectors=True)
    bound = grillakis_lower_bound(LR, LI, zt)
    writer.csv("instability.csv", ("index", "re_lambda", "im_lambda"),
               ((i, lam.real, lam.imag) for i, lam in enumerate(res.eigenvalues)))
    writer.json("instability.json", {
        "eigenvalues": [[lam.real, lam.imag] for lam in res.eigenvalues],
        "count": len(res.eigenvalues), "grillakis_lower_bound": bound,
        "consistent": len(res.eigenvalues) >= bound, "kernel_dim": res.kernel_dim,
        "family": fam.kind, "regime_flags": regime_flags(cfg)})
    return EXIT_OK


def cmd_evolve(cfg: dict, writer: Writer) -> int:
    graph = build_graph(cfg)
    fam = family_from_config(cfg)
    ev = dict(cfg["evolve"])
    ev["dt"] = graph.spacing if ev["dt"] is None else ev["dt"]
    ev["t_final"] = 50.0 / math.sqrt(fam.frequency) if ev["t_final"] is None else ev["t_final"]
    ecfg = EvolveConfig(**ev)
    exp = cfg["experiment"]
    pert = Perturbation(float(exp["amplitude"]), exp["direction"], cfg["seed"])
    fh = writer.open_csv("trace.csv", ("t", "mass_u", "mass_v", "energy", "q1", "orbital_dev"))

    def on_step(*row):
        fh.write(",".join(_fmt(v) for v in row) + "\n")
        fh.flush()

    try:
        verdict = stability_experiment(fam, pert, ecfg, graph, on_step=on_step)
    except BlowUpError as exc:
        fh.close()
        _, trace = exc.result
        writer.json("verdict.json", {"verdict": "BLOWUP", "error": str(exc),
                                     "dt_halvings": trace.dt_halvings})
        raise
    except ConvergenceError as exc:
        fh.close()
        writer.json("verdict.json", {"verdict": "FAILED", "error": str(exc)})
        raise
    fh.close()
    for t, dt in verdict.trace.dt_halvings:
        log.warning("dt halved to %.6g at t = %.6g", dt, t)
    payload = verdict.as_dict()
    payload.update({"dt_halvings": verdict.trace.dt_halvings,
                    "mass_drift_u": verdict.trace.drift("mass_u"),
                    "mass_drift_v": verdict.trace.drift("mass_v"),
                    "energy_drift": verdict.trace.drift("energy"),
                    "family": fam.kind, "regime_flags": regime_flags(cfg)})
    writer.json("verdict.json", payload)
    return EXIT_OK


def rearrangement_report(f: GridField, rng: np.random.Generator) -> tuple[GridField, dict]:
    """Rearranged field and the inequality checks comparing f with f*."""
    g = random_smooth_field(f.graph, rng)
    fs, gs = rearrange(f), rearrange(g)
    N = f.graph.num_edges
    report = {"lp_norms": {}}
    for p in (1.0, 2.0, 4.0):
        report["lp_norms"][f"{p:g}"] = {
            "before": rectangle_lp_power(f, p) ** (1 / p),
            "after": rectangle_lp_power(fs, p) ** (1 / p),
            "trapezoid_before": lp_norm(f, p), "trapezoid_after": lp_norm(fs, p)}
    report["lp_norms"]["inf"] = {"before": lp_norm(f, np.inf), "after": lp_norm(fs, np.inf)}
    lhs = float(np.sum(edge_integrals(f.graph, np.abs(f.values) * np.abs(g.values))))
    rhs = inner_product(fs, gs)
    report["hardy_littlewood"] = {"lhs": lhs, "rhs": rhs,
                                  "slack": 2 * f.graph.spacing * lp_norm(f, np.inf)
                                  * lp_norm(g, np.inf) * N}
    d_before = math.sqrt(float(np.sum(edge_integrals(f.graph, np.abs(derivative(
        GridField(f.graph, np.abs(f.values)))) ** 2))))
    d_after = math.sqrt(float(np.sum(edge_integrals(fs.graph, np.abs(derivative(fs)) ** 2))))
    ratio = d_after / d_before if d_before > 0 else None
    report["derivative_ratio"] = {"before": d_before, "after": d_after, "ratio": ratio,
                                  "bound": N / 2 + 10 * f.graph.spacing,
                                  "holds": ratio is not None
                                  and ratio <= N / 2 + 10 * f.graph.spacing}
    return fs, report


def cmd_rearrange(cfg: dict, writer: Writer, input_path: str | None) -> int:
    if input_path is None:
        raise ValidationError("rearrange needs --input <field.csv>")
    f = read_field_csv(input_path)
    fs, report = rearrangement_report(f, np.random.default_rng(cfg["seed"]))
    x = fs.graph.x
    writer.csv("rearranged.csv", ("edge", "x", "value"),
               ((e + 1, x[i], fs.values[e, i].real) for e in range(fs.graph.num_edges)
                for i in range(fs.graph.points_per_edge)))
    report["input"] = str(input_path)
    writer.json("rearrange.json", report)
    return EXIT_OK


# -- entry point -----------------------------------------------------------

def run(command: str, cfg: dict, operator: str | None = None, input_path: str | None = None) -> int:
    writer = Writer(cfg["output_dir"], command, cfg)
    if command == "profile":
        return cmd_profile(cfg, writer)
    if command == "ground-state":
        return cmd_ground_state(cfg, writer)
    if command == "spectrum":
        return cmd_spectrum(cfg, writer, operator)
    if command == "instability":
        return cmd_instability(cfg, writer)
    if command == "evolve":
        return cmd_evolve(cfg, writer)
    return cmd_rearrange(cfg, writer, input_path)


def _guarded(func, *args) -> int:
    try:
        return func(*args)
    except BlowUpError as exc:
        log.error("blow-up: %s", exc)
        return EXIT_BLOWUP
    except ConvergenceError as exc:
        log.error("no convergence: %s", exc)
        return EXIT_CONVERGENCE
    except (ValidationError, ValueError) as exc:
        log.error("invalid input: %s", exc)
        return EXIT_VALIDATION


def _batch_one(args) -> int:
    command, path, out_dir, seed, operator, input_path = args
    cfg = resolve_config(load_config(path), seed, out_dir)
    return run(command, cfg, operator, input_path)


def worker_count(n_jobs: int) -> int:
    cap = os.environ.get("GRAPHNLS_THREADS")
    limit = os.cpu_count() or 1
    if cap:
        try:
            limit = max(1, int(cap))
        except ValueError as exc:
            raise ValidationError(f"GRAPHNLS_THREADS must be an integer, got {cap!r}") from exc
    return max(1, min(limit, n_jobs))


def run_batch(command: str, paths, out_dir: str, seed, operator, input_path) -> int:
    """Independent configs on a process pool, one output directory each."""
    jobs = [(command, p, str(Path(out_dir) / Path(p).stem), seed, operator, input_path)
            for p in paths]
    workers = worker_count(len(jobs))
    if workers == 1:
        codes = [_guarded(_batch_one, job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            codes = list(pool.map(_guarded, [_batch_one] * len(jobs), jobs))
    for job, code in zip(jobs, codes):
        log.info("%s -> exit %d", job[1], code)
    return max(codes) if codes else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphnls", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"graphnls {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS + ("batch",):
        sp_ = sub.add_parser(name)
        if name == "batch":
            sp_.add_argument("batch_command", choices=COMMANDS)
            sp_.add_argument("--config", required=True, nargs="+")
        else:
            sp_.add_argument("--config", required=True)
        sp_.add_argument("--out", default=None)
        sp_.add_argument("--seed", type=int, default=None)
        if name in ("spectrum", "batch"):
            sp_.add_argument("--operator", default=None, choices=OPERATORS)
        if name in ("rearrange", "batch"):
            sp_.add_argument("--input", default=None)
        sp_.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="graphnls: %(levelname)s: %(message)s", stream=sys.stderr)
    operator = getattr(args, "operator", None)
    input_path = getattr(args, "input", None)
    if args.command == "batch":
        return _guarded(run_batch, args.batch_command, args.config, args.out or ".", args.seed,
                        operator, input_path)

    def single() -> int:
        cfg = resolve_config(load_config(args.config), args.seed, args.out)
        return run(args.command, copy.deepcopy(cfg), operator, input_path)

    return _guarded(single)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
