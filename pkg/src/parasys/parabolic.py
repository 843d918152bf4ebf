"""Implicit Euler for nonautonomous parabolic systems and discrete maximal-regularity norms."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .elliptic import FESpace, assemble, dual_norm, garding_constant
from .errors import SolverError, ValidationError
from .tensors import CoefficientTensor, TensorFamily, tensor_sup_norm


@dataclass(frozen=True)
class TimeGrid:
    T: float
    N: int

    def __post_init__(self):
        if not self.T > 0 or self.N < 1:
            raise ValidationError("time grid needs T > 0 and N >= 1")

    @property
    def tau(self):
        return self.T / self.N

    @property
    def nodes(self):
        return self.tau * np.arange(self.N + 1)

    def refine(self, factor=2):
        return TimeGrid(self.T, self.N * factor)

    def node_index(self, t):
        k = t / self.tau
        n = int(round(k))
        if abs(k - n) > 1e-9 or not 0 <= n <= self.N:
            raise ValidationError(f"time {t} is not a grid node", reason="not_a_node")
        return n


@dataclass
class Trajectory:
    grid: TimeGrid
    values: np.ndarray
    r: float = 2.0
    q: float = 2.0

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if len(self.values) != self.grid.N + 1:
            raise ValidationError("trajectory needs N+1 node values")

    @property
    def derivative(self):
        """Backward differences at nodes 1..N."""
        return np.diff(self.values, axis=0) / self.grid.tau

    def __sub__(self, other):
        return Trajectory(self.grid, self.values - other.values, self.r, self.q)

    def scaled(self, s):
        return Trajectory(self.grid, s * self.values, self.r, self.q)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        vals = self.values
        cplx = np.iscomplexobj(vals) and np.any(np.imag(vals))
        n = vals.shape[1]
        if cplx:
            head = ["t"] + [f"re{k}" for k in range(n)] + [f"im{k}" for k in range(n)]
        else:
            head = ["t"] + [f"u{k}" for k in range(n)]
        w.writerow(head)
        for t, row in zip(self.grid.nodes, vals):
            data = list(np.real(row)) + (list(np.imag(row)) if cplx else [])
            w.writerow([repr(float(t))] + [repr(float(x)) for x in data])
        return buf.getvalue()


def _forcing(f, grid, ndof):
    """Dual vectors at nodes 1..N as an ``(N, ndof)`` array."""
    if f is None:
        return np.zeros((grid.N, ndof))
    if callable(f):
        return np.array([f(t) for t in grid.nodes[1:]])
    f = np.asarray(f)
    if f.shape == (grid.N + 1, ndof):
        return f[1:]
    if f.shape != (grid.N, ndof):
        raise ValidationError(f"forcing must have shape ({grid.N}, {ndof}), got {f.shape}")
    return f


def lu_solve(lu, b):
    """SuperLU solve that accepts complex right-hand sides for real factors."""
    b = np.asarray(b)
    real_factor = not np.iscomplexobj(lu.U.data)
    if real_factor and np.iscomplexobj(b):
        return lu.solve(np.ascontiguousarray(b.real)) + 1j * lu.solve(np.ascontiguousarray(b.imag))
    if not real_factor:
        b = b.astype(complex)
    return lu.solve(b)


def march(space, stiffness_at, Lambda, forcing, u0, grid, constant=False):
    """Implicit Euler with stiffness matrices ``stiffness_at(n)`` for n = 1..N."""
    tau = grid.tau
    M = space.mass
    u0 = np.asarray(u0)
    dtype = np.result_type(u0, forcing, np.asarray(Lambda), complex)
    out = np.zeros((grid.N + 1, space.ndof), dtype=dtype)
    out[0] = u0
    lu = None
    for n in range(1, grid.N + 1):
        if lu is None or not constant:
            K = stiffness_at(n)
            S = (M + tau * (K + Lambda * M)).tocsc()
            try:
                lu = spla.splu(S)
            except RuntimeError as exc:
                raise SolverError(f"singular step matrix at node {n}: {exc}", reason="singular",
                                  node=n) from exc
        rhs = M @ out[n - 1] + tau * forcing[n - 1]
        out[n] = lu_solve(lu, rhs)
    if not np.any(np.imag(out)):
        out = out.real
    return out


def step_solve(family, Lambda, f, u0, grid, space):
    """Solve ``u' + (L(t) + Lambda) u = f`` by implicit Euler, tensors at right endpoints."""
    space = space if isinstance(space, FESpace) else FESpace(space)
    if isinstance(family, CoefficientTensor):
        family = TensorFamily.constant(family, grid.T)
    forcing = _forcing(f, grid, space.ndof)
    if u0 is None:
        u0 = np.zeros(space.ndof)
    cache = {}

    def stiffness_at(n):
        try:
            tensor = family.at(grid.nodes[n])
        except Exception as exc:
            raise ValidationError(f"family evaluation failed at t={grid.nodes[n]}: {exc}",
                                  reason="family_evaluation") from exc
        key = id(tensor)
        if key not in cache:
            cache.clear()
            cache[key] = assemble(space, tensor).stiffness
        return cache[key]

    vals = march(space, stiffness_at, Lambda, forcing, u0, grid,
                 constant=family.mode == "constant")
    return Trajectory(grid, vals)


def maxreg_norm(u, r, q, space, return_info=False):
    """``(tau sum ||u_n||_{W^{1,q}}^r)^{1/r} + (tau sum ||D u_n||_{W^{-1,q}}^r)^{1/r}``.

    Sums run over nodes 1..N (right-endpoint rule); the derivative norm is
    the dual norm of the functional ``v -> int D u_n conj(v)``.
    """
    if not (1 < r < np.inf and 1 < q < np.inf):
        raise ValidationError("r and q must lie in (1, inf)")
    tau = u.grid.tau
    vals = u.values[1:]
    du = u.derivative
    a = np.array([space.w1_norm(v, q) for v in vals])
    converged = True
    b = []
    for w in du:
        val, info = dual_norm(space, space.mass @ w, q, return_info=True)
        converged &= info["converged"]
        b.append(val)
    b = np.array(b)
    total = (tau * np.sum(a**r)) ** (1 / r) + (tau * np.sum(b**r)) ** (1 / r)
    if return_info:
        return float(total), {"converged": bool(converged)}
    return float(total)


def dual_series_norm(f, space, grid, r=2.0, q=2.0):
    """``(tau sum ||f_n||_{W^{-1,q}}^r)^{1/r}`` over nodes 1..N."""
    forcing = _forcing(f, grid, space.ndof)
    vals = np.array([dual_norm(space, fn, q) for fn in forcing])
    return float((grid.tau * np.sum(vals**r)) ** (1 / r))


def lions_constant(lam, gamma, M, Lambda):
    """``(min(Lambda - lam, gamma) + M + Lambda) / min(Lambda - lam, gamma)``."""
    if not Lambda > lam:
        raise ValidationError("Lambda must exceed lambda", reason="lambda_order")
    c = min(Lambda - lam, gamma)
    return (c + M + Lambda) / c


@dataclass
class LionsReport:
    c_theoretical: float
    c_observed: float
    lam: float
    gamma: float
    M: float
    Lambda: float
    tol: float
    passed: bool
    min_garding: float | None = None
    precondition_ok: bool = True

    def to_dict(self):
        return {
            "c_theoretical": self.c_theoretical, "c_observed": self.c_observed,
            "lambda": self.lam, "gamma": self.gamma, "M": self.M, "Lambda": self.Lambda,
            "tol": self.tol, "passed": self.passed, "min_garding": self.min_garding,
            "precondition_ok": self.precondition_ok,
        }


def lions_verify(family, Lambda, f, space, grid, lam, gamma, M=None, tol=0.05,
                 check_precondition=True):
    """Compare the observed solution-operator norm with the Lions constant."""
    space = space if isinstance(space, FESpace) else FESpace(space)
    if isinstance(family, CoefficientTensor):
        family = TensorFamily.constant(family, grid.T)
    if M is None:
        M = tensor_sup_norm(family, grid.nodes[1:], space.quad_points)
    c_theo = lions_constant(lam, gamma, M, Lambda)
    min_g = None
    if check_precondition:
        seen = {}
        for t in grid.nodes[1:]:
            ten = family.at(t)
            if id(ten) not in seen:
                seen[id(ten)] = garding_constant(assemble(space, ten), lam)
        min_g = min(seen.values())
        if min_g < gamma - 1e-9:
            raise ValidationError(
                f"family violates the ellipticity precondition: Garding constant {min_g:.6g} < {gamma}",
                reason="precondition", min_garding=min_g)
    u = step_solve(family, Lambda, f, np.zeros(space.ndof), grid, space)
    fnorm = dual_series_norm(f, space, grid)
    c_obs = 0.0 if fnorm == 0 else maxreg_norm(u, 2, 2, space) / fnorm
    return LionsReport(c_theo, c_obs, lam, gamma, M, Lambda, tol,
                       c_obs <= c_theo * (1 + tol), min_g)


@dataclass
class ShiftReport:
    mu: complex
    errors: list
    ratio: float
    taus: list

    def to_dict(self):
        return {"mu": [self.mu.real, self.mu.imag], "errors": self.errors,
                "ratio": self.ratio, "taus": self.taus}


def shift_transform_check(family, mu, f, space, grid, u0=None, levels=2):
    """Compare the shifted solve with the exponentially transformed unshifted solve.

    ``f`` must be callable in t so it can be sampled on refined grids.
    Returns ``max_n ||u_n - e^{-mu t_n} v_n||_{L^2}`` per level and the ratio
    of consecutive errors.
    """
    space = space if isinstance(space, FESpace) else FESpace(space)
    mu = complex(mu)
    u0 = np.zeros(space.ndof) if u0 is None else np.asarray(u0)
    errors, taus = [], []
    g = grid
    for _ in range(levels):
        u = step_solve(family, mu, f, u0, g, space)
        v = step_solve(family, 0.0, lambda t: np.exp(mu * t) * f(t), u0, g, space)
        ut = np.exp(-mu * g.nodes)[:, None] * v.values
        err = max(space.l2_norm(a - b) for a, b in zip(u.values, ut))
        errors.append(float(err))
        taus.append(g.tau)
        g = g.refine()
    ratio = errors[-2] / errors[-1] if len(errors) > 1 and errors[-1] > 0 else math.inf
    return ShiftReport(mu, errors, float(ratio), taus)


def restrict(u, S):
    """Truncate a trajectory to the nodes in [0, S]."""
    n = u.grid.node_index(S)
    if n == 0:
        raise ValidationError("restriction window must contain at least one step")
    return Trajectory(TimeGrid(n * u.grid.tau, n), u.values[: n + 1].copy(), u.r, u.q)


def extend(u, space, grid):
    """Extend ``u`` from (0, S) to the full grid with the reference operator -Laplace + 1.

    The forcing equals ``u' + (-Laplace + 1) u`` on (0, S) and zero afterwards,
    so the extension reproduces ``u`` at every node up to S.
    """
    space = space if isinstance(space, FESpace) else FESpace(space)
    if abs(u.grid.tau - grid.tau) > 1e-12 * grid.tau:
        raise ValidationError("trajectory and target grid need the same step")
    NS = u.grid.N
    if NS > grid.N:
        raise ValidationError("target grid is shorter than the trajectory")
    ref = space.grad_mass + space.mass
    forcing = np.zeros((grid.N, space.ndof), dtype=u.values.dtype)
    du = u.derivative
    for n in range(1, NS + 1):
        forcing[n - 1] = space.mass @ du[n - 1] + ref @ u.values[n]
    vals = march(space, lambda n: space.grad_mass, 1.0, forcing, u.values[0], grid, constant=True)
    return Trajectory(grid, vals, u.r, u.q)


def summary_json(traj, space, r=2.0, q=2.0, extra=None):
    out = {
        "T": traj.grid.T,
        "N": traj.grid.N,
        "maxreg_norm": maxreg_norm(traj, r, q, space),
        "max_l2": max(space.l2_norm(v) for v in traj.values),
        "final_l2": space.l2_norm(traj.values[-1]),
    }
    if extra:
        out.update(extra)
    return json.dumps(out, sort_keys=True, indent=2)
