"""Quasilinear parabolic systems ``u' + L(u)_t u = Phi(u)`` with causal coefficient maps.

Coefficient and right-hand-side maps are :class:`VolterraMap` objects.  They
are evaluated as a scan over the time nodes: a map only ever receives the
node value ``u_n`` together with the state it built from earlier nodes, so
an output at node ``n`` cannot depend on later values.

The solver is plain Picard iteration on whole trajectories with frozen
coefficients.  Global solves march in windows whose length comes from the
sublinear-growth rule ``a (1 + C_E C_Phi a) C <= 1/2`` with
``a = L^{1/r - 1/s}`` and ``C`` the Lions constant.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .elliptic import FESpace, assemble, garding_constant
from .errors import SolverError, ValidationError
from .parabolic import (TimeGrid, Trajectory, extend, lions_constant, march, maxreg_norm)
from .tensors import CoefficientTensor

KINDS = ("coefficient", "rhs")


class VolterraMap:
    """Causal map from node values to per-node outputs.

    ``init(space)`` returns the starting state; ``step(state, t, u_n, space)``
    returns ``(new_state, output)``.  Outputs are :class:`CoefficientTensor`
    objects for ``kind="coefficient"`` and dual vectors for ``kind="rhs"``.
    Implementations must not mutate the state they receive.
    """

    def __init__(self, name, kind, step, init=None, params=None, declared_lipschitz=None,
                 growth=None):
        if kind not in KINDS:
            raise ValidationError(f"map kind must be one of {KINDS}")
        self.name = name
        self.kind = kind
        self._step = step
        self._init = init or (lambda space: None)
        self.params = dict(params or {})
        self.declared_lipschitz = declared_lipschitz
        self.growth = growth  # (C_Phi, s) for right-hand sides with sublinear growth

    def evaluate(self, values, space, times):
        """Outputs at every node of ``values`` (one row per node, times alongside)."""
        values = np.asarray(values)
        if len(values) != len(times):
            raise ValidationError("values and times differ in length")
        state = self._init(space)
        out = []
        for t, u in zip(times, values):
            u = u.copy()
            u.setflags(write=False)
            state, y = self._step(state, float(t), u, space)
            out.append(y)
        return out

    def __repr__(self):
        return f"VolterraMap({self.name!r}, kind={self.kind!r}, params={self.params})"


def local_coefficient_map(name, fn, params=None):
    """Map whose tensor at (t, x) depends on u(t, x) and grad u(t, x) only.

    ``fn(t, vals, grads)`` gets values ``(nq, m)`` at the quadrature points
    and gradients ``(nq, m, 2)`` and returns ``(nq, D, D)``.
    """

    def step(state, t, u, space):
        vals, grads = space.at_quadrature(u)
        g = np.repeat(grads, 3, axis=0)
        tens = fn(t, vals.reshape(-1, space.m), g)
        return state, space.quadrature_tensor(tens)

    return VolterraMap(name, "coefficient", step, params=params)


# --- registered coefficient maps -------------------------------------------


def constant_map(tensor):
    return VolterraMap("constant", "coefficient", lambda s, t, u, sp: (s, tensor),
                       params={"tensor": tensor.to_dict()}, declared_lipschitz=0.0)


def clamp(x, bound=1.0):
    return np.clip(x, -bound, bound)


def scalar_clamp_map(m=1, a=2.0, bound=1.0, d=2):
    """Diagonal diffusion ``kappa_i = a + clamp(u_i)`` on every component."""
    D = m + m * d

    def fn(t, vals, grads):
        kappa = a + clamp(np.real(vals), bound)
        out = np.zeros((len(vals), D, D), complex)
        for i in range(m):
            for k in range(d):
                out[:, m + i * d + k, m + i * d + k] = kappa[:, i]
        return out

    vm = local_coefficient_map("scalar_clamp", fn, {"m": m, "a": a, "bound": bound})
    vm.declared_lipschitz = 1.0
    return vm


def nonlocal_mean_map(base=None, m=1):
    """``(1 + int_0^t mean(u) ds) * base`` with the right-endpoint rule in time.

    ``mean`` averages over the domain and over components.  With a small
    datum the factor stays positive; it is not clamped.
    """
    base = CoefficientTensor.identity(m) if base is None else base

    def init(space):
        return (0.0, None)

    def step(state, t, u, space):
        acc, t_prev = state
        if t_prev is not None:
            acc = acc + (t - t_prev) * float(np.mean(np.real(space.mean(u))))
        return (acc, t), base.scale(1.0 + acc)

    return VolterraMap("nonlocal_mean", "coefficient", step, init,
                       params={"base": base.to_dict()})


def time_linear_map(base=None, m=1, rate=1.0):
    """``(1 + rate t) * base``; ignores u entirely."""
    base = CoefficientTensor.identity(m) if base is None else base
    return VolterraMap("time_linear", "coefficient",
                       lambda s, t, u, sp: (s, base.scale(1.0 + rate * t)),
                       params={"base": base.to_dict(), "rate": rate}, declared_lipschitz=0.0)


# --- registered right-hand sides -------------------------------------------


def zero_rhs():
    return VolterraMap("zero", "rhs", lambda s, t, u, sp: (s, np.zeros(sp.ndof)),
                       growth=(0.0, math.inf), declared_lipschitz=0.0)


def linear_mass_rhs(c=0.1):
    """``Phi(u)(t) = c * (mass @ u(t))``; sublinear with ``C_Phi = |c|``, ``s = inf``."""
    return VolterraMap("linear_mass", "rhs", lambda s, t, u, sp: (s, c * (sp.mass @ u)),
                       params={"c": c}, growth=(abs(c), math.inf), declared_lipschitz=abs(c))


def constant_load_rhs(value=1.0):
    """Load vector of a constant function (scalar or one value per component)."""
    cache = {}

    def step(s, t, u, sp):
        if id(sp) not in cache:
            v = np.broadcast_to(np.asarray(value, float), (sp.m,))
            cache.clear()
            cache[id(sp)] = sp.load_vector(lambda x: np.tile(v, (len(x), 1)))
        return s, cache[id(sp)]

    return VolterraMap("constant_load", "rhs", step, params={"value": value},
                       growth=(0.0, math.inf), declared_lipschitz=0.0)


def time_forcing_rhs(fn, name="time_forcing"):
    """Right-hand side independent of u: ``fn(t) -> dual vector``."""
    return VolterraMap(name, "rhs", lambda s, t, u, sp: (s, np.asarray(fn(t))),
                       growth=(0.0, math.inf), declared_lipschitz=0.0)


COEFFICIENT_MAPS = {
    "constant": lambda p: constant_map(CoefficientTensor.from_dict(p["tensor"])
                                       if "tensor" in p else CoefficientTensor.identity(p.get("m", 1))),
    "scalar_clamp": lambda p: scalar_clamp_map(p.get("m", 1), p.get("a", 2.0), p.get("bound", 1.0)),
    "nonlocal_mean": lambda p: nonlocal_mean_map(m=p.get("m", 1)),
    "time_linear": lambda p: time_linear_map(m=p.get("m", 1), rate=p.get("rate", 1.0)),
}
RHS_MAPS = {
    "zero": lambda p: zero_rhs(),
    "linear_mass": lambda p: linear_mass_rhs(p.get("c", 0.1)),
    "constant_load": lambda p: constant_load_rhs(p.get("value", 1.0)),
}


def make_map(kind, name, params=None):
    registry = COEFFICIENT_MAPS if kind == "coefficient" else RHS_MAPS
    if name not in registry:
        raise ValidationError(f"unknown {kind} map {name!r}; known: {sorted(registry)}",
                              reason="unknown_map")
    try:
        return registry[name](dict(params or {}))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"bad parameters for {name!r}: {exc}") from exc


# --- cut-off ------------------------------------------------------------------


@dataclass(frozen=True)
class CutoffConfig:
    eps: float
    A0: CoefficientTensor

    def __post_init__(self):
        if not self.eps > 0:
            raise ValidationError("cut-off eps must be positive")


def clamp_deviation(values, anchor, eps):
    """``anchor + kappa_eps(values - anchor)`` entrywise, kappa_eps the radial clamp."""
    diff = np.asarray(values, complex) - anchor
    mag = np.abs(diff)
    scale = np.where(mag > eps, eps / np.where(mag > 0, mag, 1.0), 1.0)
    return anchor + diff * scale


def cutoff_apply(cfg, T_raw, points=None):
    """Clamp every entry of ``T_raw - A0`` to modulus ``eps``, preserving its phase.

    Constant inputs give a constant tensor.  Otherwise ``points`` is required
    and the result is tabulated at those points.
    """
    if T_raw.is_constant and cfg.A0.is_constant:
        return CoefficientTensor(T_raw.m, T_raw.d,
                                 matrix=clamp_deviation(T_raw.matrix, cfg.A0.matrix, cfg.eps))
    if points is None:
        raise ValidationError("field tensors need evaluation points for the cut-off")
    vals = clamp_deviation(T_raw.at(points), cfg.A0.at(points), cfg.eps)
    npts = len(points)

    def fn(x):
        if len(x) != npts:
            raise ValidationError("cut-off tensor evaluated off its points")
        return vals

    return CoefficientTensor.from_field(T_raw.m, T_raw.d, fn)


def deviation_sup(T, A0, points):
    """Largest entry modulus of ``T - A0`` over ``points``."""
    if T.is_constant and A0.is_constant:
        return float(np.max(np.abs(T.matrix - A0.matrix)))
    return float(np.max(np.abs(T.at(points) - A0.at(points))))


# --- Picard ---------------------------------------------------------------------


@dataclass
class PicardInfo:
    iterations: int
    residuals: list
    converged: bool

    def to_dict(self):
        return {"iterations": self.iterations, "residuals": self.residuals,
                "converged": self.converged}


class _StiffnessCache:
    """Assemble each distinct constant tensor once; fields every time."""

    def __init__(self, space):
        self.space = space
        self._store = {}

    def __call__(self, tensor):
        if not tensor.is_constant:
            return assemble(self.space, tensor).stiffness
        key = tensor.matrix.tobytes()
        if key not in self._store:
            self._store[key] = assemble(self.space, tensor).stiffness
        return self._store[key]


def picard_solve(A_map, Phi, u0, window, space, grid, cfg=None, tol=1e-8, max_iter=50,
                 history=None, initial_guess=None, Lambda=0.0, return_info=False,
                 _cache=None):
    """Frozen-coefficient Picard iteration on the grid nodes of ``window = (sigma, S)``.

    ``history`` holds the solution at consecutive nodes ending at ``sigma``
    (its last row must be ``u0``).  The maps see it followed by the current
    iterate, so nonlocal maps keep their memory across windows.  Without
    history the maps see the window alone, starting at time ``sigma``.
    """
    space = space if isinstance(space, FESpace) else FESpace(space)
    if A_map.kind != "coefficient" or Phi.kind != "rhs":
        raise ValidationError("picard_solve needs a coefficient map and a right-hand side map")
    sigma, S = window
    i0, i1 = grid.node_index(sigma), grid.node_index(S)
    if i1 <= i0:
        raise ValidationError("window must contain at least one time step")
    n = i1 - i0
    wgrid = TimeGrid(n * grid.tau, n)
    u0 = np.asarray(u0)
    prefix = u0[None] if history is None else np.asarray(history)
    k0 = len(prefix) - 1
    if k0 > i0:
        raise ValidationError("history reaches before t = 0")
    times = grid.nodes[i0 - k0: i1 + 1]
    cache = _cache or _StiffnessCache(space)

    if initial_guess is None:
        current = np.repeat(u0[None], n + 1, axis=0)
    else:
        current = np.array(initial_guess)
        current[0] = u0
    residuals = []
    for it in range(1, max_iter + 1):
        full = np.concatenate([prefix[:-1], current])
        coeffs = A_map.evaluate(full, space, times)[k0 + 1:]
        if cfg is not None:
            coeffs = [cutoff_apply(cfg, c, space.quad_points) for c in coeffs]
        forcing = np.array(Phi.evaluate(full, space, times)[k0 + 1:])
        new = march(space, lambda j: cache(coeffs[j - 1]), Lambda, forcing, u0, wgrid)
        diff = maxreg_norm(Trajectory(wgrid, new - current), 2, 2, space)
        size = maxreg_norm(Trajectory(wgrid, new), 2, 2, space)
        res = diff / (1.0 + size)
        residuals.append(float(res))
        current = new
        if diff <= tol * (1.0 + size):
            info = PicardInfo(it, residuals, True)
            traj = Trajectory(wgrid, current)
            return (traj, info) if return_info else traj
    raise SolverError(f"Picard iteration did not converge in {max_iter} iterations",
                      reason="picard_max_iter", last_residual=residuals[-1],
                      window=[float(sigma), float(S)])


# --- continuation -----------------------------------------------------------------


def window_length(C_lions, C_Phi, r=2.0, s=math.inf, C_E=1.0):
    """Largest ``L`` with ``a (1 + C_E C_Phi a) C_lions <= 1/2``, ``a = L^{1/r - 1/s}``."""
    expo = 1.0 / r - (0.0 if math.isinf(s) else 1.0 / s)
    if not expo > 0:
        raise ValidationError("need s > r for the window rule")
    k = C_E * C_Phi
    rhs = 0.5 / C_lions
    a = rhs if k == 0 else (-1.0 + math.sqrt(1.0 + 4.0 * k * rhs)) / (2.0 * k)
    return a ** (1.0 / expo)


@dataclass
class QLSolveReport:
    interval_solved: tuple
    picard_iterations: list
    global_: bool
    norms: list
    trace: list = field(default_factory=list)
    window_length: float | None = None
    steps_per_window: int | None = None
    trajectory: Trajectory | None = None

    @property
    def windows(self):
        return len(self.picard_iterations)

    def to_dict(self):
        return {
            "interval_solved": list(self.interval_solved),
            "picard_iterations": self.picard_iterations,
            "global": self.global_,
            "norms": self.norms,
            "windows": self.windows,
            "window_length": self.window_length,
            "steps_per_window": self.steps_per_window,
            "trace": self.trace,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def continuation_solve(A_map, Phi, u0, space, grid, lam=0.0, gamma=1.0, M=1.0, Lambda=None,
                       C_Phi=None, s=None, r=2.0, C_E=1.0, tol=1e-8, max_iter=50, start=0.0,
                       history=None, check_ellipticity=True):
    """March from ``start`` to ``T`` in windows sized by the sublinear-growth rule.

    ``Lambda`` only enters the Lions constant and defaults to ``lam + gamma``.
    ``C_Phi`` and ``s`` default to ``Phi.growth``.  Each window is checked for
    membership of the coefficients in the declared class by a discrete
    Garding constant at its last node.
    """
    space = space if isinstance(space, FESpace) else FESpace(space)
    if C_Phi is None or s is None:
        if Phi.growth is None:
            raise ValidationError("right-hand side declares no growth bound (C_Phi, s)",
                                  reason="growth_missing")
        C_Phi = Phi.growth[0] if C_Phi is None else C_Phi
        s = Phi.growth[1] if s is None else s
    Lambda = lam + gamma if Lambda is None else Lambda
    C = lions_constant(lam, gamma, M, Lambda)
    i = grid.node_index(start)
    if C_Phi == 0 and A_map.declared_lipschitz == 0:
        # nothing depends on u: the first Picard iterate is the solution on any window
        L, steps = grid.T - grid.nodes[i], grid.N - i
    else:
        L = window_length(C, C_Phi, r, s, C_E)
        steps = int(math.floor(L / grid.tau + 1e-9))
    if steps < 1:
        raise SolverError(f"window under-resolved: rule gives length {L:.3g} < tau = {grid.tau:.3g}",
                          reason="window_under_resolved", window_length=L, tau=grid.tau)
    u0 = np.asarray(u0)
    if history is None:
        values = [u0]
    else:
        values = list(np.asarray(history))
        if len(values) != i + 1:
            raise ValidationError("history must cover nodes 0..start")
    origin = i + 1 - len(values)
    iters, norms, trace = [], [], []
    cache = _StiffnessCache(space)
    gard = {}
    while i < grid.N:
        j = min(i + steps, grid.N)
        traj, info = picard_solve(A_map, Phi, values[-1], (grid.nodes[i], grid.nodes[j]), space,
                                  grid, tol=tol, max_iter=max_iter, history=np.array(values),
                                  return_info=True, _cache=cache)
        values.extend(traj.values[1:])
        iters.append(info.iterations)
        norms.append(maxreg_norm(traj, 2, 2, space))
        entry = {"window": [float(grid.nodes[i]), float(grid.nodes[j])],
                 "iterations": info.iterations, "residual": info.residuals[-1]}
        if check_ellipticity:
            tens = A_map.evaluate(np.array(values), space, grid.nodes[origin: j + 1])[-1]
            key = tens.matrix.tobytes() if tens.is_constant else None
            g = gard.get(key)
            if g is None:
                g = garding_constant(assemble(space, tens), lam)
                if key is not None:
                    gard[key] = g
            entry["garding"] = g
            if g < gamma - 1e-8:
                raise SolverError(f"ellipticity check failed at t={grid.nodes[j]:.6g}: "
                                  f"Garding constant {g:.6g} < {gamma}", reason="ellipticity",
                                  node=j, constant=g)
        trace.append(entry)
        i = j
    tgrid = TimeGrid(grid.T - grid.nodes[origin], grid.N - origin)
    return QLSolveReport((float(grid.nodes[origin]), float(grid.T)), iters, True, norms, trace,
                         L, steps, Trajectory(tgrid, np.array(values)))


def expected_window_count(grid, start, C_lions, C_Phi, r=2.0, s=math.inf, C_E=1.0):
    """Number of windows the continuation rule produces on ``[start, T]``."""
    L = window_length(C_lions, C_Phi, r, s, C_E)
    steps = int(math.floor(L / grid.tau + 1e-9))
    if steps < 1:
        return None
    return math.ceil((grid.N - grid.node_index(start)) / steps)


# --- cut-off activity and the Hoelder threshold ------------------------------------


@dataclass
class ContinuityReport:
    delta: float
    node: int
    deviations: list
    eps: float

    def to_dict(self):
        return {"delta": self.delta, "node": self.node, "eps": self.eps,
                "max_deviation": max(self.deviations)}


def continuity_window_check(A_map, u0, eps, space, grid, Phi=None, tol=1e-8, max_iter=50):
    """Largest node time up to which the cut-off solution never triggers the cut-off.

    The anchor ``A0`` is the map evaluated at t = 0; the Picard start is the
    reference extension of the constant trajectory seeded at ``u0``.
    """
    space = space if isinstance(space, FESpace) else FESpace(space)
    Phi = zero_rhs() if Phi is None else Phi
    u0 = np.asarray(u0)
    A0 = A_map.evaluate(u0[None], space, grid.nodes[:1])[0]
    cfg = CutoffConfig(eps, A0)
    seed = Trajectory(TimeGrid(grid.tau, 1), np.stack([u0, u0]))
    guess = extend(seed, space, grid).values
    u = picard_solve(A_map, Phi, u0, (0.0, grid.T), space, grid, cfg=cfg, tol=tol,
                     max_iter=max_iter, initial_guess=guess)
    coeffs = A_map.evaluate(u.values, space, grid.nodes)
    dev = [deviation_sup(c, A0, space.quad_points) for c in coeffs]
    slack = 1e-12 * max(1.0, eps)
    node = 0
    for n in range(1, grid.N + 1):
        if dev[n] > eps + slack:
            break
        node = n
    if node == 0:
        raise SolverError("cut-off active from the first step; no certified window",
                          reason="cutoff_active", deviation=dev[1], eps=eps)
    return ContinuityReport(float(grid.nodes[node]), node, dev, eps)


def holder_threshold(q, r, d=2):
    """Integrability threshold for the Hoelder-in-space regime: q > d and r > 2/(1 - d/q)."""
    q_ok = q > d
    r_min = 2.0 / (1.0 - d / q) if q_ok else math.inf
    return {"q": q, "r": r, "d": d, "q_gt_d": q_ok, "r_min": r_min,
            "satisfied": bool(q_ok and r > r_min)}
