"""P1 discretisation of divergence-form systems with mixed boundary conditions.

Each component lives in its own conforming P1 space; the nodes on that
component's Dirichlet part are eliminated.  All element integrals use the
three-point edge-midpoint rule, which is exact for the quadratic integrands
that appear with piecewise-constant tensors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.io
import scipy.linalg as sla
import scipy.optimize
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError, ValidationError
from .tensors import CoefficientTensor

log = logging.getLogger(__name__)

# basis values at the edge midpoints (m01, m12, m20)
_NQ = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])


class FESpace:
    """Vector P1 space over a mesh with per-component Dirichlet elimination."""

    def __init__(self, mesh):
        self.mesh = mesh
        self.m = mesh.num_components
        self.nv = mesh.num_vertices
        tri = mesh.triangles
        P = mesh.vertices[tri]
        self.areas = mesh.signed_areas()
        # barycentric gradients: grad phi_a = rot(p_{a+2} - p_{a+1}) / (2|T|)
        e = np.stack([P[:, 2] - P[:, 1], P[:, 0] - P[:, 2], P[:, 1] - P[:, 0]], axis=1)
        self.grads = np.stack([-e[..., 1], e[..., 0]], axis=-1) / (2 * self.areas[:, None, None])
        self.quad_points = np.einsum("qa,tak->tqk", _NQ, P).reshape(-1, 2)
        self.quad_weights = np.repeat(self.areas[:, None] / 3.0, 3, axis=1)

        free = []
        for i in range(self.m):
            mask = np.ones(self.nv, bool)
            mask[mesh.dirichlet_nodes(i)] = False
            free.append(i * self.nv + np.nonzero(mask)[0])
        self.free = np.concatenate(free)
        self.ndof = len(self.free)
        self.component_of = np.repeat(np.arange(self.m), [len(f) for f in free])
        self.pure_neumann = [not mesh.dirichlet_parts[i] for i in range(self.m)]

        s_mass, s_stiff = self._scalar_matrices()
        self.scalar_mass = s_mass
        self.scalar_stiffness = s_stiff
        eye = sp.identity(self.m, format="csr")
        self.mass = self._restrict_matrix(sp.kron(eye, s_mass, format="csr")).real
        self.grad_mass = self._restrict_matrix(sp.kron(eye, s_stiff, format="csr")).real

    def _scalar_matrices(self):
        tri = self.mesh.triangles
        w = self.quad_weights
        mloc = np.einsum("tq,qa,qb->tab", w, _NQ, _NQ)
        kloc = np.einsum("tq,tak,tbk->tab", w, self.grads, self.grads)
        rows = np.repeat(tri, 3, axis=1).ravel()
        cols = np.tile(tri, (1, 3)).ravel()
        shape = (self.nv, self.nv)
        M = sp.coo_matrix((mloc.ravel(), (rows, cols)), shape=shape).tocsr()
        K = sp.coo_matrix((kloc.ravel(), (rows, cols)), shape=shape).tocsr()
        return M, K

    def _restrict_matrix(self, A):
        return A[self.free][:, self.free].tocsr()

    def restrict(self, U):
        """Full nodal vector (component-major) -> free-dof vector."""
        return np.asarray(U)[..., self.free]

    def extend(self, u):
        u = np.asarray(u)
        out = np.zeros(u.shape[:-1] + (self.m * self.nv,), dtype=u.dtype)
        out[..., self.free] = u
        return out

    def nodal(self, u):
        """Free-dof vector -> (nv, m) array of nodal values."""
        return self.extend(u).reshape(self.m, self.nv).T

    def interpolate(self, fn, dtype=float):
        """Free-dof vector of nodal values of ``fn(points) -> (nv, m)`` or (nv,)."""
        vals = np.asarray(fn(self.mesh.vertices), dtype=dtype)
        if vals.ndim == 1:
            vals = vals[:, None]
        return self.restrict(vals.T.reshape(-1))

    def at_quadrature(self, u):
        """Values ``(nt, 3, m)`` at the quadrature points and gradients ``(nt, m, 2)``."""
        V = self.nodal(u)[self.mesh.triangles]  # (nt, 3, m)
        vals = np.einsum("qa,taj->tqj", _NQ, V)
        grads = np.einsum("taj,tak->tjk", V, self.grads)
        return vals, grads

    def load_vector(self, fn):
        """Dual vector ``int f phi`` with ``fn(points) -> (n, m)`` at quadrature points."""
        vals = np.asarray(fn(self.quad_points))
        if vals.ndim == 1:
            vals = vals[:, None]
        vals = vals.reshape(len(self.areas), 3, -1)
        return self.load_from_quadrature(vals)

    def load_from_quadrature(self, vals):
        """Dual vector from values ``(nt, 3, m)`` at the quadrature points."""
        contrib = np.einsum("tq,qa,tqj->jta", self.quad_weights, _NQ, vals)
        out = np.zeros((self.m, self.nv), dtype=contrib.dtype)
        tri = self.mesh.triangles
        for j in range(self.m):
            np.add.at(out[j], tri, contrib[j])
        return self.restrict(out.reshape(-1))

    def flux_load(self, fluxes):
        """Dual vector ``int F_j . grad phi`` for piecewise constant ``fluxes`` (nt, m, 2)."""
        contrib = np.einsum("t,tjk,tak->jta", self.areas, fluxes, self.grads)
        out = np.zeros((self.m, self.nv), dtype=contrib.dtype)
        tri = self.mesh.triangles
        for j in range(self.m):
            np.add.at(out[j], tri, contrib[j])
        return self.restrict(out.reshape(-1))

    def quadrature_tensor(self, values, d=2):
        """Tensor field tabulated at ``quad_points`` (shape ``(nt*3, D, D)``)."""
        values = np.asarray(values, dtype=complex)
        n = values.shape[-1]
        m = n // (d + 1)
        npts = len(self.quad_points)
        values = values.reshape(npts, n, n)

        def fn(points):
            if len(points) != npts:
                raise ValidationError("tabulated tensor evaluated off its quadrature points")
            return values

        return CoefficientTensor.from_field(m, d, fn)

    def kernel_basis(self):
        """Constants of the pure-Neumann components, as columns over free dofs."""
        cols = [(self.component_of == i).astype(float)
                for i in range(self.m) if self.pure_neumann[i]]
        if not cols:
            return np.zeros((self.ndof, 0))
        return np.column_stack(cols)

    @cached_property
    def h1_gram(self):
        return (self.grad_mass + self.mass).tocsc()

    @cached_property
    def _riesz_lu(self):
        return spla.splu(self.h1_gram)

    def riesz(self, f):
        """Solve ``(grad_mass + mass) w = f``."""
        f = np.asarray(f)
        if np.iscomplexobj(f):
            return self._riesz_lu.solve(f.real) + 1j * self._riesz_lu.solve(f.imag)
        return self._riesz_lu.solve(f)

    def w1_norm(self, u, q=2.0):
        """Discrete W^{1,q} norm ``(int |u|^q + |grad u|^q)^{1/q}``."""
        u = np.asarray(u)
        if q == 2:
            return float(np.sqrt(max(np.real(np.vdot(u, self.h1_gram @ u)), 0.0)))
        vals, grads = self.at_quadrature(u)
        a = np.sqrt(np.sum(np.abs(vals) ** 2, axis=-1))
        g = np.sqrt(np.sum(np.abs(grads) ** 2, axis=(1, 2)))
        s = np.sum(self.quad_weights * a**q) + np.sum(self.areas * g**q)
        return float(s ** (1.0 / q))

    def l2_norm(self, u):
        u = np.asarray(u)
        return float(np.sqrt(max(np.real(np.vdot(u, self.mass @ u)), 0.0)))

    def mean(self, u):
        """Spatial average per component, ``(m,)``."""
        vals, _ = self.at_quadrature(u)
        return np.einsum("tq,tqj->j", self.quad_weights, vals) / self.areas.sum()

    @cached_property
    def _quad_ops(self):
        """Sparse maps from nodal values to quadrature values and gradients."""
        tri = self.mesh.triangles
        nt = len(tri)
        rows = np.repeat(np.arange(nt * 3), 3)
        cols = np.repeat(tri, 3, axis=0).ravel()
        data = np.tile(_NQ, (nt, 1)).ravel()
        Pv = sp.csr_matrix((data, (rows, cols)), shape=(nt * 3, self.nv))
        r = np.repeat(np.arange(nt), 3)
        Gx = sp.csr_matrix((self.grads[..., 0].ravel(), (r, tri.ravel())), shape=(nt, self.nv))
        Gy = sp.csr_matrix((self.grads[..., 1].ravel(), (r, tri.ravel())), shape=(nt, self.nv))
        return Pv, Gx, Gy


@dataclass
class DiscreteSystemOperator:
    space: FESpace
    tensor: CoefficientTensor
    stiffness: sp.csr_matrix
    sup_norm: float = 0.0
    legendre_min: float = 0.0
    lower_order_norm: float = 0.0

    @property
    def mass(self):
        return self.space.mass

    @property
    def grad_mass(self):
        return self.space.grad_mass

    def export_matrix_market(self, path_prefix):
        scipy.io.mmwrite(f"{path_prefix}_stiffness.mtx", self.stiffness)
        scipy.io.mmwrite(f"{path_prefix}_mass.mtx", self.mass)
        scipy.io.mmwrite(f"{path_prefix}_grad_mass.mtx", self.grad_mass)


def _space(mesh_or_space):
    return mesh_or_space if isinstance(mesh_or_space, FESpace) else FESpace(mesh_or_space)


def assemble(space, tensor):
    """Stiffness matrix of ``<L u, v> = int A [u; grad u] . conj([v; grad v])``."""
    space = _space(space)
    m, d = space.m, 2
    if tensor.m != m:
        raise ValidationError(f"tensor has m={tensor.m} but mesh has m={m}", reason="dimension")
    if tensor.d != d:
        raise ValidationError("meshes are two-dimensional; tensor needs d=2", reason="dimension")
    D = m + m * d
    nt = len(space.areas)
    try:
        Tq = tensor.at(space.quad_points)
    except ValidationError:
        raise
    except Exception as exc:  # user fields may fail arbitrarily
        raise ValidationError(f"tensor evaluation failed: {exc}", reason="tensor_evaluation") from exc
    if not np.all(np.isfinite(Tq)):
        raise ValidationError("tensor evaluated to non-finite values", reason="tensor_evaluation")
    Tq = np.asarray(Tq).reshape(nt, 3, D, D)

    B = np.zeros((nt, 3, D, 3, m))
    for j in range(m):
        B[:, :, j, :, j] = _NQ[None]
        for k in range(d):
            B[:, :, m + j * d + k, :, j] = space.grads[:, None, :, k]
    B = B.reshape(nt, 3, D, 3 * m)
    if tensor.is_constant:
        TB = tensor.matrix @ B
    else:
        TB = Tq @ B
    WB = B * space.quad_weights[:, :, None, None]
    kloc = np.sum(np.swapaxes(WB, -1, -2) @ TB, axis=1)

    tri = space.mesh.triangles
    glob = (np.arange(m)[None, None, :] * space.nv + tri[:, :, None]).reshape(nt, 3 * m)
    rows = np.repeat(glob, 3 * m, axis=1).ravel()
    cols = np.tile(glob, (1, 3 * m)).ravel()
    n = m * space.nv
    K = sp.coo_matrix((kloc.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    K = space._restrict_matrix(K)
    if not np.any(K.imag.data):
        K = K.real.astype(complex)

    blocks = Tq.reshape(-1, D, D)
    sup = float(np.max(np.linalg.norm(blocks, ord=2, axis=(1, 2)))) if not tensor.is_constant \
        else tensor.norm()
    uniq = blocks[:1] if tensor.is_constant else blocks
    P = uniq[:, m:, m:]
    herm = 0.5 * (P + np.conj(np.swapaxes(P, -1, -2)))
    leg = float(np.min(np.linalg.eigvalsh(herm)[:, 0]))
    rest = uniq.copy()
    rest[:, m:, m:] = 0
    low = float(np.max(np.linalg.norm(rest, ord=2, axis=(1, 2))))
    return DiscreteSystemOperator(space, tensor, K, sup, leg, low)


def solve_shifted(op, Lambda, f, certified_lambda=None, return_info=False):
    """Solve ``(stiffness + Lambda * mass) u = f`` by sparse LU."""
    if certified_lambda is not None and not np.real(Lambda) > certified_lambda:
        log.warning("Re Lambda=%s does not exceed the certified lambda=%s; solving anyway",
                    np.real(Lambda), certified_lambda)
    S = (op.stiffness + Lambda * op.mass).tocsc()
    f = np.asarray(f, dtype=complex)
    try:
        lu = spla.splu(S)
    except RuntimeError as exc:
        raise SolverError(f"singular shifted system: {exc}", reason="singular", smallest_pivot=0.0) from exc
    pivot = float(np.min(np.abs(lu.U.diagonal())))
    u = lu.solve(f)
    res = np.linalg.norm(S @ u - f)
    scale = np.linalg.norm(f)
    if not np.all(np.isfinite(u)) or res > 1e-10 * max(scale, 1e-300) and scale > 0:
        raise SolverError("shifted solve residual too large", reason="singular",
                          residual=float(res), smallest_pivot=pivot)
    if return_info:
        return u, {"residual": float(res), "smallest_pivot": pivot}
    return u


# --- dual norms --------------------------------------------------------------


def riesz_dual_norm(space, f):
    """Exact discrete W^{-1,2} norm ``sqrt(f^* (grad_mass + mass)^{-1} f)``."""
    f = np.asarray(f)
    w = space.riesz(f)
    return float(np.sqrt(max(np.real(np.vdot(f, w)), 0.0)))


def dual_norm(space, f, q=2.0, return_info=False, rtol=1e-6, maxiter=2000):
    """Discrete W^{-1,q} norm: sup over FE functions v of |<f, v>| / ||v||_{W^{1,q'}}.

    q = 2 is the exact Riesz norm.  Otherwise the supremum is approached by
    quasi-Newton ascent started from the Riesz representer; ``converged`` is
    False when the optimiser stopped early, and the value is a lower bound.
    """
    space = _space(space)
    f = np.asarray(f)
    if not 1 < q < np.inf:
        raise ValidationError("q must lie in (1, inf)")
    if not np.any(f):
        return (0.0, {"converged": True}) if return_info else 0.0
    if q == 2:
        val = riesz_dual_norm(space, f)
        return (val, {"converged": True}) if return_info else val

    p = q / (q - 1.0)
    Pv, Gx, Gy = space._quad_ops
    wq = space.quad_weights.ravel()
    area = space.areas
    complex_f = np.iscomplexobj(f) and np.any(np.imag(f))
    n = space.ndof
    scale = np.linalg.norm(f)
    fr = np.real(f) / scale
    fi = np.imag(f) / scale if complex_f else None

    def unpack(x):
        return x[:n] + 1j * x[n:] if complex_f else x

    def norm_and_grad(v):
        V = space.nodal(v)  # (nv, m)
        uq, gx, gy = Pv @ V, Gx @ V, Gy @ V
        a2 = np.sum(np.abs(uq) ** 2, axis=1)
        g2 = np.sum(np.abs(gx) ** 2 + np.abs(gy) ** 2, axis=1)
        S = np.sum(wq * a2 ** (p / 2)) + np.sum(area * g2 ** (p / 2))
        ca = wq * p * np.where(a2 > 0, a2, 1.0) ** (p / 2 - 1) * (a2 > 0)
        cg = area * p * np.where(g2 > 0, g2, 1.0) ** (p / 2 - 1) * (g2 > 0)
        dV = Pv.T @ (ca[:, None] * uq) + Gx.T @ (cg[:, None] * gx) + Gy.T @ (cg[:, None] * gy)
        dS = space.restrict(dV.T.reshape(-1))
        N = S ** (1 / p)
        dN = (1 / p) * S ** (1 / p - 1) * dS
        return N, dN

    def objective(x):
        v = unpack(x)
        N, dN = norm_and_grad(v)
        if complex_f:
            num = fr @ x[:n] + fi @ x[n:]
            dnum = np.concatenate([fr, fi])
            dNx = np.concatenate([np.real(dN), np.imag(dN)])
        else:
            num = fr @ x
            dnum = fr
            dNx = np.real(dN)
        J = -num / N
        grad = -dnum / N + num * dNx / N**2
        return J, grad

    w = space.riesz(f / scale)
    x0 = np.concatenate([np.real(w), np.imag(w)]) if complex_f else np.real(w)
    x0 = x0 / max(np.linalg.norm(x0), 1e-300)
    res = scipy.optimize.minimize(objective, x0, jac=True, method="L-BFGS-B",
                                  options={"maxiter": maxiter, "ftol": rtol * 1e-3, "gtol": 1e-10})
    val = -float(res.fun) * scale
    info = {"converged": bool(res.success), "iterations": int(res.nit)}
    if not res.success:
        log.warning("dual norm ascent stopped early (%s); value is a lower bound", res.message)
    return (val, info) if return_info else val


# --- Garding constant ----------------------------------------------------------


class _ConstrainedSolver:
    """Solves ``S x = b`` subject to ``C^T x = 0`` via a bordered system."""

    def __init__(self, S, C):
        self.n = S.shape[0]
        self.k = C.shape[1]
        if self.k:
            Z = sp.csr_matrix((self.k, self.k))
            S = sp.bmat([[S, sp.csr_matrix(C)], [sp.csr_matrix(C).T, Z]])
        try:
            self.lu = spla.splu(sp.csc_matrix(S))
        except RuntimeError as exc:
            raise SolverError(f"singular pencil shift: {exc}", reason="singular") from exc

    def solve(self, B):
        B = np.atleast_2d(B.T).T
        if self.k:
            B = np.vstack([B, np.zeros((self.k, B.shape[1]), B.dtype)])
        X = self.lu.solve(B) if not np.iscomplexobj(B) else (
            self.lu.solve(np.ascontiguousarray(B.real)) + 1j * self.lu.solve(np.ascontiguousarray(B.imag)))
        return X[: self.n]


def _poincare_inverse(space, C, iters=200, tol=1e-12):
    """Upper estimate of max u^*Mu / u^*Gu on the constrained subspace."""
    G, M = space.grad_mass, space.mass
    solver = _ConstrainedSolver(G.tocsc(), C)
    rng = np.random.default_rng(7)
    x = rng.standard_normal(space.ndof)
    if C.shape[1]:
        x -= C @ np.linalg.lstsq(C, x, rcond=None)[0]
    est = 0.0
    for _ in range(iters):
        y = solver.solve(M @ x)[:, 0]
        y /= np.sqrt(y @ (G @ y))
        new = float(y @ (M @ y))
        x = y
        if abs(new - est) <= tol * new:
            est = new
            break
        est = new
    return est


@dataclass
class GardingResult:
    value: float
    iterations: int
    converged: bool
    shift: float
    vector: np.ndarray = field(repr=False, default=None)


DENSE_LIMIT = 1200


def _dense_garding(H, G, C):
    H, G = H.toarray(), G.toarray()
    if C.shape[1]:
        N = sla.null_space(np.asarray(C.todense() if sp.issparse(C) else C).conj().T)
        H, G = N.conj().T @ H @ N, N.conj().T @ G @ N
    vals, vecs = sla.eigh(H, G, subset_by_index=[0, 0])
    x = vecs[:, 0] if not C.shape[1] else N @ vecs[:, 0]
    return float(vals[0]), x


def garding_constant(op, lam=0.0, tol=1e-10, max_iter=2000, block=8, seed=0, return_info=False,
                     method="auto"):
    """Smallest quotient ``(Re u^*Ku + lam u^*Mu) / u^*Gu`` over free-dof vectors.

    Small systems (``method="auto"`` below ``DENSE_LIMIT`` dofs, or
    ``"dense"``) use a dense generalized eigensolve.  Otherwise block
    inverse iteration on the Hermitian pencil (Herm K + lam M, G), shifted
    below a certified lower bound of the spectrum.  Nearly isotropic
    tensors produce tightly clustered spectra where the iteration is slow;
    that is why the dense path is preferred whenever it is affordable.
    Constants of pure-Neumann components (the kernel of G) are removed by
    constraining to vectors mass-orthogonal to them.
    """
    if lam < 0:
        raise ValidationError("lambda must be nonnegative")
    if method not in ("auto", "dense", "iterative"):
        raise ValidationError(f"unknown method {method!r}")
    space = op.space
    K = op.stiffness
    H = (0.5 * (K + K.conj().T) + lam * space.mass).tocsr()
    if not np.any(H.imag.data if sp.issparse(H) else 0):
        H = H.real
    G = space.grad_mass
    Z = space.kernel_basis()
    C = space.mass @ Z

    # certified lower bound: pointwise Legendre on the principal part minus the
    # lower-order block norm times (1 + max |u|^2/|grad u|^2)
    lower = op.legendre_min
    if op.lower_order_norm > 0:
        lower -= op.lower_order_norm * (1.0 + 1.05 * _poincare_inverse(space, C))
    shift = lower - 0.01 * max(1.0, op.sup_norm)

    if method == "dense" or (method == "auto" and space.ndof <= DENSE_LIMIT):
        value, x = _dense_garding(H, G, C)
        return GardingResult(value, 0, True, shift, x) if return_info else value

    n = space.ndof - Z.shape[1]
    k = max(1, min(block, n))
    solver = _ConstrainedSolver((H - shift * G).tocsc(), C)
    rng = np.random.default_rng(seed)
    dtype = complex if np.iscomplexobj(H.data) else float
    X = rng.standard_normal((space.ndof, k)).astype(dtype)
    theta_old = np.inf
    delta_old = np.inf
    it = 0
    converged = False
    theta = np.array([np.nan])
    for it in range(1, max_iter + 1):
        Y = solver.solve(G @ X)
        Q, _ = np.linalg.qr(Y)
        Hs = Q.conj().T @ (H @ Q)
        Gs = Q.conj().T @ (G @ Q)
        Hs = 0.5 * (Hs + Hs.conj().T)
        Gs = 0.5 * (Gs + Gs.conj().T)
        theta, W = sla.eigh(Hs, Gs)
        X = Q @ W
        delta = abs(theta[0] - theta_old)
        # remaining error of a linearly convergent sequence ~ delta * rho / (1 - rho)
        rho = min(delta / delta_old, 0.999) if delta_old > 0 and np.isfinite(delta_old) else 0.5
        if delta * max(1.0, rho / (1.0 - rho)) <= tol * max(1.0, abs(theta[0])):
            converged = True
            break
        theta_old, delta_old = theta[0], delta
    value = float(theta[0])
    if not converged:
        raise SolverError("Garding eigen-iteration did not converge", reason="no_convergence",
                          last_rayleigh_quotient=value, iterations=it)
    if return_info:
        return GardingResult(value, it, converged, shift, X[:, 0])
    return value
