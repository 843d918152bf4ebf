"""Two-species Keller–Segel system, its ellipticity conditions and the attractant reduction.

Unknowns are ordered ``(u1, v1, u2, v2)``.  The species equations are

    u1' - div(kappa1 grad u1) = div(sigma1 (grad v1 - grad u2))
    u2' - div(kappa2 grad u2) = div(sigma2 (grad v2 - grad u1))

and the attractants solve ``v_i' - alpha_i Laplace v_i = g_i``.  Coefficients
``kappa_i, sigma_i`` depend on ``(u_i, v_i)``; ``g_i`` are quadratic
polynomials in all four fields.

The full four-component tensor typically violates the Legendre–Hadamard
condition once the drift is strong.  Eliminating ``v`` through the causal
solution map of the linear attractant equations leaves a two-component
system whose principal part ``[[kappa1, -sigma1], [-sigma2, kappa2]]`` can
still be elliptic; the ``grad v`` drift then becomes a right-hand side.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .elliptic import FESpace, assemble, garding_constant
from .errors import SolverError, ValidationError
from .parabolic import TimeGrid, Trajectory, lu_solve
from .quasilinear import VolterraMap, picard_solve
from .tensors import CoefficientTensor, legendre_constant

D_SPACE = 2
INNER_TOL = 1e-10
INNER_MAX = 200


# --- registered scalar coefficient functions of (u, v) ------------------------


def _coef_fn(spec):
    """``{"kind": "constant", "value": a}`` or ``{"kind": "linear", "a", "bu", "bv"}``."""
    if isinstance(spec, (int, float)):
        spec = {"kind": "constant", "value": float(spec)}
    kind = spec.get("kind", "constant")
    if kind == "constant":
        a = float(spec["value"])
        return lambda u, v: np.full(np.shape(u), a)
    if kind == "linear":
        a, bu, bv = float(spec.get("a", 0.0)), float(spec.get("bu", 0.0)), float(spec.get("bv", 0.0))
        return lambda u, v: a + bu * u + bv * v
    raise ValidationError(f"unknown coefficient function kind {kind!r}", reason="unknown_function")


@dataclass(frozen=True)
class Poly2:
    """``c0 + lin . w + w^T quad w`` with ``w = (u1, v1, u2, v2)``."""

    c0: float = 0.0
    lin: tuple = (0.0, 0.0, 0.0, 0.0)
    quad: tuple = ((0.0,) * 4,) * 4

    def __post_init__(self):
        if np.shape(self.lin) != (4,) or np.shape(self.quad) != (4, 4):
            raise ValidationError("poly2 needs 4 linear and 4x4 quadratic coefficients")

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        extra = set(data) - {"c0", "lin", "quad"}
        if extra:
            raise ValidationError(f"unknown poly2 keys {sorted(extra)}")
        lin = tuple(float(x) for x in data.get("lin", (0.0,) * 4))
        quad = tuple(tuple(float(x) for x in row) for row in data.get("quad", ((0.0,) * 4,) * 4))
        return cls(float(data.get("c0", 0.0)), lin, quad)

    def to_dict(self):
        return {"c0": self.c0, "lin": list(self.lin), "quad": [list(r) for r in self.quad]}

    @property
    def is_zero(self):
        return self.c0 == 0 and not any(self.lin) and not any(any(r) for r in self.quad)

    def __call__(self, w):
        """``w`` has shape ``(..., 4)``."""
        lin = np.asarray(self.lin)
        quad = np.asarray(self.quad)
        return self.c0 + w @ lin + np.einsum("...i,ij,...j->...", w, quad, w)


def initial_field(spec):
    """Callable ``x -> values`` for an initial-data spec."""
    if isinstance(spec, (int, float)):
        spec = {"kind": "constant", "value": float(spec)}
    kind = spec.get("kind", "constant")
    if kind == "zero":
        return lambda x: np.zeros(len(x))
    if kind == "constant":
        val = float(spec["value"])
        return lambda x: np.full(len(x), val)
    if kind == "bump":
        c = np.asarray(spec.get("center", (0.5, 0.5)), float)
        rad = float(spec.get("radius", 0.3))
        amp = float(spec.get("amplitude", 1.0))
        base = float(spec.get("offset", 0.0))

        def bump(x):
            r2 = np.sum((x - c) ** 2, axis=1) / rad**2
            out = np.zeros(len(x))
            inside = r2 < 1
            out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
            return base + amp * out

        return bump
    if kind == "cosine":
        amp = float(spec.get("amplitude", 0.1))
        kx, ky = float(spec.get("kx", 1.0)), float(spec.get("ky", 1.0))
        base = float(spec.get("offset", 0.5))
        return lambda x: base + amp * np.cos(kx * np.pi * x[:, 0]) * np.cos(ky * np.pi * x[:, 1])
    raise ValidationError(f"unknown initial-data kind {kind!r}", reason="unknown_function")


@dataclass
class ChemotaxisParams:
    kappa1: dict = field(default_factory=lambda: {"kind": "constant", "value": 1.0})
    kappa2: dict = field(default_factory=lambda: {"kind": "constant", "value": 1.0})
    sigma1: dict = field(default_factory=lambda: {"kind": "constant", "value": 0.0})
    sigma2: dict = field(default_factory=lambda: {"kind": "constant", "value": 0.0})
    alpha1: float = 1.0
    alpha2: float = 1.0
    g1: Poly2 = field(default_factory=Poly2)
    g2: Poly2 = field(default_factory=Poly2)
    initial: dict = field(default_factory=lambda: {
        "u1": {"kind": "constant", "value": 0.5}, "v1": {"kind": "zero"},
        "u2": {"kind": "constant", "value": 0.5}, "v2": {"kind": "zero"}})
    dirichlet: tuple = ()

    def __post_init__(self):
        if not (self.alpha1 > 0 and self.alpha2 > 0):
            raise ValidationError("alpha_i must be positive", reason="alpha")
        for key in ("u1", "v1", "u2", "v2"):
            if key not in self.initial:
                raise ValidationError(f"initial data for {key} missing")
        self.k1, self.k2 = _coef_fn(self.kappa1), _coef_fn(self.kappa2)
        self.s1, self.s2 = _coef_fn(self.sigma1), _coef_fn(self.sigma2)
        grid = np.linspace(0.0, 1.0, 11)
        U, V = np.meshgrid(grid, grid)
        for name, fn in (("kappa1", self.k1), ("kappa2", self.k2)):
            if np.any(fn(U, V) <= 0):
                raise ValidationError(f"{name} is not positive on [0, 1]^2", reason="kappa")

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        for key in ("g1", "g2"):
            if key in data and not isinstance(data[key], Poly2):
                data[key] = Poly2.from_dict(data[key])
        if "dirichlet" in data:
            data["dirichlet"] = tuple(data["dirichlet"])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ValidationError(f"bad chemotaxis parameters: {exc}") from exc

    def to_dict(self):
        return {"kappa1": self.kappa1, "kappa2": self.kappa2, "sigma1": self.sigma1,
                "sigma2": self.sigma2, "alpha1": self.alpha1, "alpha2": self.alpha2,
                "g1": self.g1.to_dict(), "g2": self.g2.to_dict(), "initial": self.initial,
                "dirichlet": list(self.dirichlet)}

    def coefficients(self, w):
        """``kappa1, kappa2, sigma1, sigma2`` at states ``w (..., 4)``."""
        u1, v1, u2, v2 = (w[..., k] for k in range(4))
        return self.k1(u1, v1), self.k2(u2, v2), self.s1(u1, v1), self.s2(u2, v2)


# --- tensors and conditions ------------------------------------------------------


def _scalar_grid_tensor(a):
    """Values ``(n, m+md, m+md)`` for principal blocks ``a_ij I_d``, ``a (n, m, m)``."""
    n, m = a.shape[0], a.shape[1]
    out = np.zeros((n, m + m * D_SPACE, m + m * D_SPACE), complex)
    for k in range(D_SPACE):
        idx = m + np.arange(m) * D_SPACE + k
        out[:, idx[:, None], idx[None, :]] = a
    return out


def full_coefficients(p, w):
    """Scalar 4x4 coefficient grid at states ``w (n, 4)``."""
    k1, k2, s1, s2 = p.coefficients(w)
    a = np.zeros((len(w), 4, 4))
    a[:, 0, 0], a[:, 0, 1], a[:, 0, 2] = k1, s1, -s1
    a[:, 1, 1] = p.alpha1
    a[:, 2, 0], a[:, 2, 2], a[:, 2, 3] = -s2, k2, s2
    a[:, 3, 3] = p.alpha2
    return a


def reduced_coefficients(p, w):
    k1, k2, s1, s2 = p.coefficients(w)
    a = np.zeros((len(w), 2, 2))
    a[:, 0, 0], a[:, 0, 1], a[:, 1, 0], a[:, 1, 1] = k1, -s1, -s2, k2
    return a


def full_tensor(p, state):
    """Constant 4-component tensor at a single state ``(u1, v1, u2, v2)``."""
    w = np.asarray(state, float).reshape(1, 4)
    k1, k2, _, _ = p.coefficients(w)
    if k1[0] <= 0 or k2[0] <= 0:
        raise ValidationError("kappa must be positive at the given state", reason="kappa")
    return CoefficientTensor(4, D_SPACE, matrix=_scalar_grid_tensor(full_coefficients(p, w))[0])


def reduced_tensor(p, state):
    w = np.asarray(state, float).reshape(1, 4)
    return CoefficientTensor(2, D_SPACE, matrix=_scalar_grid_tensor(reduced_coefficients(p, w))[0])


@dataclass
class ConditionReport:
    lh_fails_full: bool
    witness: dict | None
    legendre_reduced: float
    reduced_inequality: float
    reduced_ok: bool
    inequalities: dict

    def to_dict(self):
        return {"lh_fails_full": self.lh_fails_full, "witness": self.witness,
                "legendre_reduced": self.legendre_reduced,
                "reduced_inequality": self.reduced_inequality, "reduced_ok": self.reduced_ok,
                "inequalities": self.inequalities}


def condition_report(p, states):
    """Evaluate both ellipticity inequalities at every state in ``states (n, 4)``.

    The full tensor fails the Legendre–Hadamard condition as soon as
    ``|sigma_i| >= 2 sqrt(kappa_i alpha_i)`` at one state.  The reduced
    constant is the smallest Legendre constant of the 2x2 tensor.
    """
    w = np.atleast_2d(np.asarray(states, float))
    k1, k2, s1, s2 = p.coefficients(w)
    f1 = np.abs(s1) >= 2.0 * np.sqrt(k1 * p.alpha1)
    f2 = np.abs(s2) >= 2.0 * np.sqrt(k2 * p.alpha2)
    fails = bool(np.any(f1 | f2))
    witness = None
    if fails:
        k = int(np.argmax(f1 | f2))
        which = "u1-v1" if f1[k] else "u2-v2"
        witness = {"subtensor": which, "index": k, "state": w[k].tolist(),
                   "kappa": float(k1[k] if f1[k] else k2[k]),
                   "sigma": float(s1[k] if f1[k] else s2[k]),
                   "alpha": p.alpha1 if f1[k] else p.alpha2}
    ineq = np.minimum(k1, k2) - np.abs(s1 + s2) / 2.0
    red = reduced_coefficients(p, w)
    H = 0.5 * (red + np.swapaxes(red, 1, 2))
    leg = float(np.min(np.linalg.eigvalsh(H)[:, 0]))
    return ConditionReport(
        fails, witness, leg, float(np.min(ineq)), bool(np.min(ineq) > 0),
        {"lh_full": "|sigma_i| >= 2 sqrt(kappa_i alpha_i)",
         "reduced": "min(kappa1, kappa2) - |sigma1 + sigma2| / 2 > 0"})


def reduced_legendre_constant(p, state):
    """Legendre constant of the reduced tensor through the generic analyzer."""
    return legendre_constant(reduced_tensor(p, state))


# --- spaces and field bookkeeping ---------------------------------------------


def _mesh_for(mesh, m, labels):
    parts = []
    edges = frozenset(k for k, lab in enumerate(mesh.boundary_labels) if lab in set(labels))
    if labels and not edges:
        raise ValidationError(f"no boundary edge carries the labels {list(labels)}")
    for _ in range(m):
        parts.append(edges)
    return mesh.with_dirichlet(parts)


class _Spaces:
    def __init__(self, p, mesh):
        self.full = FESpace(_mesh_for(mesh, 4, p.dirichlet))
        self.pair = FESpace(_mesh_for(mesh, 2, p.dirichlet))
        self.nv = self.pair.nv


def _initial_nodal(p, mesh):
    X = mesh.vertices
    return {k: initial_field(p.initial[k])(X) for k in ("u1", "v1", "u2", "v2")}


def _pair_vector(space, a, b):
    return space.restrict(np.concatenate([a, b]))


def _quad_pair(space, vec):
    vals, grads = space.at_quadrature(vec)
    return vals.reshape(-1, 2), grads


# --- the attractant solution map ----------------------------------------------


class AttractantSolver:
    """Implicit Euler for ``v_i' - alpha_i Laplace v_i = g_i(u, v)`` one node at a time.

    ``g`` is evaluated at the new node; the coupling in ``v`` is resolved by
    an inner fixed-point sweep to relative tolerance 1e-10.
    """

    def __init__(self, p, space):
        self.p = p
        self.space = space
        alpha = np.where(space.component_of == 0, p.alpha1, p.alpha2)
        self.A = space.grad_mass.multiply(alpha[:, None]).tocsr()
        self._lu = {}

    def _factor(self, tau):
        if tau not in self._lu:
            self._lu.clear()
            self._lu[tau] = spla.splu((self.space.mass + tau * self.A).tocsc())
        return self._lu[tau]

    def load(self, u_vals, v_vec):
        v_vals, _ = _quad_pair(self.space, v_vec)
        w = np.column_stack([u_vals[:, 0], v_vals[:, 0], u_vals[:, 1], v_vals[:, 1]])
        g = np.column_stack([self.p.g1(w), self.p.g2(w)])
        return self.space.load_from_quadrature(g.reshape(-1, 3, 2))

    def step(self, v_prev, u_vals, tau):
        lu = self._factor(tau)
        base = self.space.mass @ v_prev
        v = v_prev
        if self.p.g1.is_zero and self.p.g2.is_zero:
            return lu_solve(lu, base).real
        for _ in range(INNER_MAX):
            new = lu_solve(lu, base + tau * self.load(u_vals, v)).real
            err = np.linalg.norm(new - v)
            v = new
            if err <= INNER_TOL * (1.0 + np.linalg.norm(v)):
                return v
        raise SolverError("inner attractant iteration did not converge",
                          reason="attractant_inner", residual=float(err))


def _reduction_init(p, spaces, v0):
    solver = AttractantSolver(p, spaces.pair)

    def init(space):
        return (None, None)

    def advance(state, t, u):
        v_prev, t_prev = state
        u_vals, _ = _quad_pair(spaces.pair, u)
        v = v0 if t_prev is None else solver.step(v_prev, u_vals, t - t_prev)
        return (v, t), u_vals, v

    return init, advance


def reduction_map(p, mesh, v0=None):
    """Causal map ``u -> reduced tensor [[kappa1, -sigma1], [-sigma2, kappa2]]`` at (u, S(u)).

    ``S(u)`` is the attractant pair solved from the u-prefix; at the first
    node it is the initial attractant datum ``v0``.
    """
    spaces = mesh if isinstance(mesh, _Spaces) else _Spaces(p, mesh)
    if v0 is None:
        ini = _initial_nodal(p, spaces.pair.mesh)
        v0 = _pair_vector(spaces.pair, ini["v1"], ini["v2"])
    init, advance = _reduction_init(p, spaces, v0)

    def step(state, t, u, space):
        state, u_vals, v = advance(state, t, u)
        v_vals, _ = _quad_pair(spaces.pair, v)
        w = np.column_stack([u_vals[:, 0], v_vals[:, 0], u_vals[:, 1], v_vals[:, 1]])
        return state, spaces.pair.quadrature_tensor(_scalar_grid_tensor(reduced_coefficients(p, w)))

    return VolterraMap("reduction", "coefficient", step, init, params=p.to_dict())


def reduction_rhs(p, mesh, v0=None):
    """Drift right-hand sides ``-int sigma_i grad S_i(u) . grad phi`` as dual vectors."""
    spaces = mesh if isinstance(mesh, _Spaces) else _Spaces(p, mesh)
    if v0 is None:
        ini = _initial_nodal(p, spaces.pair.mesh)
        v0 = _pair_vector(spaces.pair, ini["v1"], ini["v2"])
    init, advance = _reduction_init(p, spaces, v0)
    sp = spaces.pair

    def step(state, t, u, space):
        state, u_vals, v = advance(state, t, u)
        v_vals, v_grads = _quad_pair(sp, v)
        w = np.column_stack([u_vals[:, 0], v_vals[:, 0], u_vals[:, 1], v_vals[:, 1]])
        _, _, s1, s2 = p.coefficients(w)
        sig = np.column_stack([s1, s2]).reshape(-1, 3, 2).mean(axis=1)
        return state, -sp.flux_load(sig[:, :, None] * v_grads)

    return VolterraMap("reduction_rhs", "rhs", step, init, params=p.to_dict())


def solve_attractants(p, spaces, u_values, grid, v0):
    """Attractant trajectory ``S(u)`` for a u-trajectory on the pair space."""
    init, advance = _reduction_init(p, spaces, v0)
    state = init(None)
    out = []
    for t, u in zip(grid.nodes, u_values):
        state, _, v = advance(state, float(t), u)
        out.append(v)
    return np.array(out)


# --- full four-component system -----------------------------------------------------


def _full_maps(p, space):
    def coef(state, t, w, sp):
        vals, _ = sp.at_quadrature(w)
        return state, sp.quadrature_tensor(_scalar_grid_tensor(full_coefficients(p, vals.reshape(-1, 4))))

    def rhs(state, t, w, sp):
        vals, _ = sp.at_quadrature(w)
        vals = vals.reshape(-1, 4)
        g = np.zeros_like(vals)
        g[:, 1], g[:, 3] = p.g1(vals), p.g2(vals)
        return state, sp.load_from_quadrature(g.reshape(-1, 3, 4))

    return (VolterraMap("full4", "coefficient", coef),
            VolterraMap("full4_rhs", "rhs", rhs))


# --- simulation -----------------------------------------------------------------


@dataclass
class SimulationResult:
    mode: str
    grid: TimeGrid
    fields: dict
    report: ConditionReport
    picard_iterations: int
    flags: list = field(default_factory=list)
    garding_full: float | None = None
    masses: dict = field(default_factory=dict)

    def mass_drift(self, key):
        m = self.masses[key]
        return float(np.max(np.abs(m - m[0])) / max(abs(m[0]), 1e-300))

    def summary(self):
        return {
            "mode": self.mode, "T": self.grid.T, "N": self.grid.N,
            "picard_iterations": self.picard_iterations, "flags": self.flags,
            "garding_full": self.garding_full,
            "condition_report": self.report.to_dict(),
            "mass_drift": {k: self.mass_drift(k) for k in self.masses},
            "min_values": {k: float(np.min(v.values)) for k, v in self.fields.items()},
        }

    def to_json(self):
        return json.dumps(self.summary(), sort_keys=True, indent=2)


def simulate(p, mode, mesh, grid, tol=1e-8, max_iter=50, lam=0.0):
    """Run the full four-component system or the reduced pair with the attractant map."""
    if mode not in ("full4", "reduced2"):
        raise ValidationError("mode must be 'full4' or 'reduced2'", reason="mode")
    spaces = _Spaces(p, mesh)
    ini = _initial_nodal(p, mesh)
    pair = spaces.pair
    q0 = _quad_pair(pair, _pair_vector(pair, ini["u1"], ini["u2"]))[0]
    qv = _quad_pair(pair, _pair_vector(pair, ini["v1"], ini["v2"]))[0]
    states0 = np.column_stack([q0[:, 0], qv[:, 0], q0[:, 1], qv[:, 1]])
    report = condition_report(p, states0)
    flags = []
    nv = spaces.nv

    if mode == "full4":
        sp = spaces.full
        w0 = sp.restrict(np.concatenate([ini["u1"], ini["v1"], ini["u2"], ini["v2"]]))
        A_map, Phi = _full_maps(p, sp)
        tens0 = A_map.evaluate(w0[None], sp, grid.nodes[:1])[0]
        gard = garding_constant(assemble(sp, tens0), lam)
        if gard <= 0:
            flags.append("non-coercive: expect failure diagnostics")
        try:
            traj, info = picard_solve(A_map, Phi, w0, (0.0, grid.T), sp, grid, tol=tol,
                                      max_iter=max_iter, return_info=True)
        except SolverError as exc:
            exc.context.update(mode=mode, flags=flags, garding_full=gard)
            raise
        nodal = sp.extend(traj.values).reshape(-1, 4, nv)
        fields = {k: nodal[:, i] for i, k in enumerate(("u1", "v1", "u2", "v2"))}
        iters = info.iterations
    else:
        gard = None
        if not report.reduced_ok:
            flags.append("reduced inequality fails at the initial state")
        u0 = _pair_vector(pair, ini["u1"], ini["u2"])
        v0 = _pair_vector(pair, ini["v1"], ini["v2"])
        A_map = reduction_map(p, spaces, v0)
        Phi = reduction_rhs(p, spaces, v0)
        try:
            traj, info = picard_solve(A_map, Phi, u0, (0.0, grid.T), pair, grid, tol=tol,
                                      max_iter=max_iter, return_info=True)
        except SolverError as exc:
            exc.context.update(mode=mode, flags=flags)
            raise
        vs = solve_attractants(p, spaces, traj.values, grid, v0)
        un = pair.extend(traj.values).reshape(-1, 2, nv)
        vn = pair.extend(vs).reshape(-1, 2, nv)
        fields = {"u1": un[:, 0], "v1": vn[:, 0], "u2": un[:, 1], "v2": vn[:, 1]}
        iters = info.iterations

    fields = {k: Trajectory(grid, np.real(v)) for k, v in fields.items()}
    one = np.ones(nv)
    Ms = pair.scalar_mass
    masses = {k: np.array([one @ (Ms @ x) for x in fields[k].values]) for k in ("u1", "u2")}
    return SimulationResult(mode, grid, fields, report, iters, flags, gard, masses)


def relative_l2l2(a, b, space_mass, tau):
    """Relative discrete L^2(L^2) distance of two nodal trajectories (nodes 1..N)."""
    num = sum(float(x @ (space_mass @ x)) for x in (a.values - b.values)[1:])
    den = sum(float(x @ (space_mass @ x)) for x in b.values[1:])
    return math.sqrt(num / den) if den > 0 else math.sqrt(num)
