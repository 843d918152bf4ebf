"""Coefficient tensors of divergence-form systems and pointwise ellipticity.

A tensor for ``m`` unknowns in ``d`` dimensions is stored as the full block
matrix acting on ``[u; grad u]`` in C^{m + m d}: rows/columns ``0..m-1``
carry the zeroth-order slots and index ``m + i*d + k`` is ``d_k u_i``.
The blocks are ``dd`` (m x m), ``c`` (first-order in the zeroth-order
rows), ``b`` (zeroth-order in the gradient rows) and ``A`` (principal part).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class CoefficientTensor:
    """Block coefficient tensor, constant or given as a field over points."""

    def __init__(self, m, d, matrix=None, field_fn=None):
        self.m = int(m)
        self.d = int(d)
        n = self.size
        if (matrix is None) == (field_fn is None):
            raise ValidationError("give exactly one of matrix or field_fn")
        if matrix is not None:
            matrix = np.array(matrix, dtype=complex)
            if matrix.shape != (n, n):
                raise ValidationError(f"block matrix must be {n}x{n}, got {matrix.shape}")
            if not np.all(np.isfinite(matrix)):
                raise ValidationError("tensor entries must be finite")
            matrix.setflags(write=False)
        self._matrix = matrix
        self._field = field_fn

    @property
    def size(self):
        return self.m + self.m * self.d

    @property
    def is_constant(self):
        return self._matrix is not None

    @property
    def matrix(self):
        if self._matrix is None:
            raise ValidationError("tensor is a field; evaluate it with at(points)")
        return self._matrix

    @classmethod
    def from_blocks(cls, A, b=None, c=None, dd=None):
        """Build from ``A[i][j]`` (d x d), ``b[i][j]``, ``c[i][j]`` (d), ``dd[i][j]``.

        ``c[i][j]`` multiplies ``grad u_j`` in equation ``i``; ``b[i][j]``
        multiplies ``u_j`` inside the divergence of equation ``i``.
        """
        A = np.asarray(A, dtype=complex)
        if A.ndim != 4 or A.shape[0] != A.shape[1] or A.shape[2] != A.shape[3]:
            raise ValidationError("A must have shape (m, m, d, d)")
        m, d = A.shape[0], A.shape[2]
        b = np.zeros((m, m, d), complex) if b is None else np.asarray(b, complex)
        c = np.zeros((m, m, d), complex) if c is None else np.asarray(c, complex)
        dd = np.zeros((m, m), complex) if dd is None else np.asarray(dd, complex)
        if b.shape != (m, m, d) or c.shape != (m, m, d) or dd.shape != (m, m):
            raise ValidationError("lower-order blocks have inconsistent shapes")
        n = m + m * d
        M = np.zeros((n, n), complex)
        M[:m, :m] = dd
        for i in range(m):
            for j in range(m):
                gi = slice(m + i * d, m + (i + 1) * d)
                gj = slice(m + j * d, m + (j + 1) * d)
                M[gi, gj] = A[i, j]
                M[i, gj] = c[i, j]
                M[gi, j] = b[i, j]
        return cls(m, d, matrix=M)

    @classmethod
    def identity(cls, m=1, d=2):
        A = np.zeros((m, m, d, d))
        for i in range(m):
            A[i, i] = np.eye(d)
        return cls.from_blocks(A)

    @classmethod
    def scalar_coupling(cls, a, d=2):
        """Principal part ``A^{ij} = a_ij * I_d``, no lower-order terms."""
        a = np.asarray(a, dtype=complex)
        m = a.shape[0]
        A = a[:, :, None, None] * np.eye(d)[None, None]
        return cls.from_blocks(A)

    @classmethod
    def from_field(cls, m, d, fn):
        """``fn(points) -> (n_points, size, size)`` complex array."""
        return cls(m, d, field_fn=fn)

    def at(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = self.size
        if self._matrix is not None:
            return np.broadcast_to(self._matrix, (len(points), n, n))
        vals = np.asarray(self._field(points), dtype=complex)
        if vals.shape != (len(points), n, n):
            raise ValidationError(f"tensor field returned shape {vals.shape}")
        return vals

    # block views of a constant tensor
    def principal(self, mat=None):
        """The md x md second-order block acting on xi in C^{d x m}."""
        mat = self.matrix if mat is None else mat
        return mat[..., self.m:, self.m:]

    @property
    def A(self):
        m, d = self.m, self.d
        P = self.principal()
        return P.reshape(m, d, m, d).transpose(0, 2, 1, 3)

    @property
    def dd(self):
        return self.matrix[: self.m, : self.m]

    @property
    def c(self):
        m, d = self.m, self.d
        return self.matrix[:m, m:].reshape(m, m, d)

    @property
    def b(self):
        m, d = self.m, self.d
        return self.matrix[m:, :m].reshape(m, d, m).transpose(0, 2, 1)

    def __add__(self, other):
        if self.is_constant and other.is_constant:
            return CoefficientTensor(self.m, self.d, matrix=self.matrix + other.matrix)
        return CoefficientTensor.from_field(self.m, self.d, lambda x: self.at(x) + other.at(x))

    def scale(self, s):
        if self.is_constant:
            return CoefficientTensor(self.m, self.d, matrix=s * self.matrix)
        return CoefficientTensor.from_field(self.m, self.d, lambda x: s * self.at(x))

    def conjugate_basis(self, U):
        """Congruence ``(U (x) I)^* T (U (x) I)`` by a unitary change of the zeta basis."""
        U = np.asarray(U, complex)
        W = np.zeros((self.size, self.size), complex)
        W[: self.m, : self.m] = U
        W[self.m:, self.m:] = np.kron(U, np.eye(self.d))
        return CoefficientTensor(self.m, self.d, matrix=W.conj().T @ self.matrix @ W)

    def norm(self, points=None):
        """Spectral norm of the block matrix, max over ``points`` for fields."""
        if self.is_constant:
            return float(np.linalg.norm(self._matrix, 2))
        if points is None:
            raise ValidationError("field tensors need sample points for the norm")
        return float(np.max(np.linalg.norm(self.at(points), ord=2, axis=(1, 2))))

    def is_hermitian(self, tol=1e-12):
        return self.is_constant and np.allclose(self._matrix, self._matrix.conj().T, atol=tol, rtol=0)

    # JSON literal: complex numbers as [re, im]
    def to_dict(self):
        enc = lambda z: np.stack([np.real(z), np.imag(z)], axis=-1).tolist()  # noqa: E731
        return {"m": self.m, "d": self.d, "A": enc(self.A), "b": enc(self.b),
                "c": enc(self.c), "dd": enc(self.dd)}

    @classmethod
    def from_dict(cls, data):
        try:
            m, d = int(data["m"]), int(data["d"])
            dec = lambda key, shape: (_decode_complex(data[key], shape)  # noqa: E731
                                      if key in data else None)
            A = dec("A", (m, m, d, d))
            if A is None:
                raise KeyError("A")
            return cls.from_blocks(A, dec("b", (m, m, d)), dec("c", (m, m, d)), dec("dd", (m, m)))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"malformed tensor literal: {exc}") from exc


def _decode_complex(value, shape):
    arr = np.asarray(value, dtype=float)
    if arr.shape == shape:
        return arr.astype(complex)
    if arr.shape == shape + (2,):
        return arr[..., 0] + 1j * arr[..., 1]
    raise ValidationError(f"expected shape {shape} (+ trailing [re, im]), got {arr.shape}")


@dataclass
class TensorFamily:
    """Time-dependent coefficient tensors on [0, T].

    ``mode`` is ``"constant"``, ``"tabulated"`` (piecewise constant, each
    table entry valid on the interval ending at its time) or ``"function"``
    (``fn(t) -> CoefficientTensor``).
    """

    mode: str
    T: float
    base: CoefficientTensor | None = None
    table: list = field(default_factory=list)
    fn: object = None
    declared_sup_norm: float | None = None

    @classmethod
    def constant(cls, tensor, T=1.0):
        return cls("constant", float(T), base=tensor)

    @classmethod
    def tabulated(cls, pairs):
        pairs = sorted(((float(t), ten) for t, ten in pairs), key=lambda p: p[0])
        if not pairs:
            raise ValidationError("tabulated family needs at least one entry")
        return cls("tabulated", pairs[-1][0], table=pairs)

    @classmethod
    def function(cls, fn, T):
        return cls("function", float(T), fn=fn)

    @property
    def m(self):
        return self.at(0.0).m

    def at(self, t):
        if self.mode == "constant":
            return self.base
        if self.mode == "tabulated":
            times = [p[0] for p in self.table]
            k = int(np.searchsorted(times, t - 1e-12 * max(1.0, abs(t))))
            k = min(k, len(times) - 1)
            return self.table[k][1]
        if self.mode == "function":
            return self.fn(t)
        raise ValidationError(f"unknown family mode {self.mode!r}")

    def to_dict(self):
        if self.mode == "constant":
            return {"mode": "constant", "T": self.T, "tensor": self.base.to_dict()}
        if self.mode == "tabulated":
            return {"mode": "tabulated", "table": [[t, ten.to_dict()] for t, ten in self.table]}
        raise ValidationError("function families have no JSON literal")

    @classmethod
    def from_dict(cls, data):
        mode = data.get("mode", "constant")
        if mode == "constant":
            return cls.constant(CoefficientTensor.from_dict(data["tensor"]), data.get("T", 1.0))
        if mode == "tabulated":
            return cls.tabulated([(t, CoefficientTensor.from_dict(x)) for t, x in data["table"]])
        raise ValidationError(f"unsupported family mode {mode!r}")


@dataclass
class EllipticityReport:
    gamma_legendre: float
    gamma_lh: float
    gamma_garding: float | None = None
    lambda_used: float = 0.0
    M: float = 0.0
    flags: dict = field(default_factory=dict)
    caveats: list = field(default_factory=list)

    def to_dict(self):
        return {
            "gamma_legendre": self.gamma_legendre,
            "gamma_lh": self.gamma_lh,
            "gamma_garding": self.gamma_garding,
            "lambda_used": self.lambda_used,
            "M": self.M,
            "flags": dict(self.flags),
            "caveats": list(self.caveats),
        }


def _hermitian_min(mats):
    H = 0.5 * (mats + np.conj(np.swapaxes(mats, -1, -2)))
    return np.linalg.eigvalsh(H)[..., 0]


def _sample_blocks(T, sample_points):
    if T.is_constant:
        return T.matrix[None]
    if sample_points is None or len(sample_points) == 0:
        raise ValidationError("empty sample set")
    return T.at(sample_points)


def legendre_constant(T, sample_points=None):
    """Smallest eigenvalue of the Hermitian part of the principal block.

    Positive values certify the Legendre condition on the samples.
    """
    if sample_points is not None and len(sample_points) == 0:
        raise ValidationError("empty sample set")
    blocks = _sample_blocks(T, sample_points)
    P = blocks[:, T.m:, T.m:]
    return float(np.min(_hermitian_min(P)))


def _lh_matrix(P, m, d, eta):
    """m x m matrices ``eta . A^{ij} eta`` for a batch of principal blocks."""
    A = P.reshape(P.shape[0], m, d, m, d)
    return np.einsum("k,pikjl,l->pij", eta, A, eta)


def _sphere_directions(d, n):
    if d == 1:
        return np.array([[1.0]])
    if d == 2:
        th = 2 * np.pi * np.arange(n) / n
        return np.column_stack([np.cos(th), np.sin(th)])
    if d == 3:
        # Fibonacci lattice
        k = np.arange(n) + 0.5
        z = 1 - 2 * k / n
        phi = np.pi * (3 - np.sqrt(5)) * k
        r = np.sqrt(1 - z * z)
        return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    rng = np.random.default_rng(12345)
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def legendre_hadamard_constant(T, sample_points=None, eta_grid_size=720, return_argmin=False):
    """Minimum over unit eta of the least eigenvalue of Herm(eta . A eta).

    In d = 2 the unit circle is sampled uniformly and the best cell is refined
    by golden-section search.  In d = 3 a Fibonacci sphere lattice is used,
    above that a seeded Gaussian sample; neither is refined.
    """
    if eta_grid_size < 8:
        raise ValidationError("eta_grid_size must be at least 8")
    if sample_points is not None and len(sample_points) == 0:
        raise ValidationError("empty sample set")
    blocks = _sample_blocks(T, sample_points)
    P = blocks[:, T.m:, T.m:]
    m, d = T.m, T.d

    def value(eta):
        return float(np.min(_hermitian_min(_lh_matrix(P, m, d, eta))))

    dirs = _sphere_directions(d, eta_grid_size)
    vals = np.array([value(e) for e in dirs])
    k = int(np.argmin(vals))
    best, best_eta = float(vals[k]), dirs[k]
    if d == 2:
        step = 2 * np.pi / eta_grid_size
        th0 = 2 * np.pi * k / eta_grid_size
        f = lambda th: value(np.array([np.cos(th), np.sin(th)]))  # noqa: E731
        a, b = th0 - step, th0 + step
        x1 = b - _GOLDEN * (b - a)
        x2 = a + _GOLDEN * (b - a)
        f1, f2 = f(x1), f(x2)
        for _ in range(60):
            if f1 < f2:
                b, x2, f2 = x2, x1, f1
                x1 = b - _GOLDEN * (b - a)
                f1 = f(x1)
            else:
                a, x1, f1 = x1, x2, f2
                x2 = a + _GOLDEN * (b - a)
                f2 = f(x2)
        th = 0.5 * (a + b)
        fv = f(th)
        if fv < best:
            best, best_eta = fv, np.array([np.cos(th), np.sin(th)])
    if return_argmin:
        M = _lh_matrix(P, m, d, best_eta)
        H = 0.5 * (M + np.conj(np.swapaxes(M, -1, -2)))
        w, V = np.linalg.eigh(H)
        p = int(np.argmin(w[:, 0]))
        return best, best_eta, V[p, :, 0]
    return best


def tensor_sup_norm(F, t_samples, points=None):
    """max over t samples (and spatial points for fields) of the block spectral norm."""
    out = 0.0
    for t in t_samples:
        if not (-1e-12 <= t <= F.T + 1e-12):
            raise ValidationError(f"sample time {t} outside [0, {F.T}]")
        out = max(out, F.at(t).norm(points))
    return out


def analyze(T, sample_points=None, eta_grid_size=720, dirichlet_everywhere=True):
    """Legendre and Legendre–Hadamard constants bundled into a report."""
    gl = legendre_constant(T, sample_points)
    glh = legendre_hadamard_constant(T, sample_points, eta_grid_size)
    M = T.norm(sample_points)
    report = EllipticityReport(gl, glh, M=M,
                               flags={"legendre_ok": gl > 0, "lh_ok": glh > 0, "garding_ok": None})
    if not dirichlet_everywhere:
        report.caveats.append("LH insufficient: without Dirichlet data the Legendre–Hadamard "
                              "condition does not imply weak ellipticity")
    return report


# --- sawtooth probe --------------------------------------------------------


def sawtooth(s):
    """2-periodic continuation of t -> 1 - |t| on [-1, 1]."""
    r = np.mod(np.asarray(s, float) + 1.0, 2.0) - 1.0
    return 1.0 - np.abs(r)


def bump(points, center, radius):
    x = (np.asarray(points, float) - np.asarray(center, float)) / radius
    r2 = np.sum(x * x, axis=1)
    out = np.zeros(len(x))
    inside = r2 < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    return out


def sawtooth_probe(T, eta, zeta, eps_list, mesh, center=None, radius=None):
    """Quotients Re<L u_eps, u_eps> / int |grad u_eps|^2 for oscillating test functions.

    ``u_eps(x) = eps * phi(x) * w(eta . x / eps) * zeta`` with a smooth bump
    ``phi`` inside the domain and the sawtooth ``w``.  The quotient tends to
    the rank-one form value ``Re zeta^* M(eta) zeta / |zeta|^2`` as eps -> 0.
    """
    from .elliptic import FESpace, assemble

    if not T.is_constant:
        raise ValidationError("sawtooth probe needs a constant tensor")
    eta = np.asarray(eta, float)
    eta = eta / np.linalg.norm(eta)
    zeta = np.asarray(zeta, complex)
    if zeta.shape != (T.m,):
        raise ValidationError("zeta must have one entry per component")
    h = mesh.grid_spacing()
    if h > min(eps_list) / 4 + 1e-12:
        raise ValidationError(f"mesh too coarse: spacing {h} > eps/4 = {min(eps_list) / 4}",
                              reason="mesh_too_coarse")
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    center = 0.5 * (lo + hi) if center is None else np.asarray(center, float)
    radius = 0.4 * float(np.min(hi - lo)) if radius is None else float(radius)
    space = FESpace(mesh)
    op = assemble(space, T)
    X = mesh.vertices
    phi = bump(X, center, radius)
    out = []
    for eps in eps_list:
        psi = eps * phi * sawtooth(X @ eta / eps)
        U = np.concatenate([z * psi for z in zeta])
        u = space.restrict(U)
        if not np.allclose(space.extend(u), U, atol=1e-14):
            raise ValidationError("bump support touches a Dirichlet node; shrink the radius")
        num = np.real(np.vdot(u, op.stiffness @ u))
        den = np.real(np.vdot(u, space.grad_mass @ u))
        out.append(float(num / den))
    return out


def lh_form_value(T, eta, zeta):
    """``Re zeta^* M(eta) zeta / |zeta|^2`` for a constant tensor."""
    eta = np.asarray(eta, float)
    eta = eta / np.linalg.norm(eta)
    zeta = np.asarray(zeta, complex)
    M = _lh_matrix(T.principal()[None], T.m, T.d, eta)[0]
    return float(np.real(np.vdot(zeta, M @ zeta)) / np.real(np.vdot(zeta, zeta)))


# --- seeded random tensors -----------------------------------------------------


def random_hermitian_tensor(rng, m=1, d=2, gamma=0.5, M=2.0, complex_entries=True):
    """Constant tensor with Hermitian principal part, spectrum in ``[gamma, M]``.

    No lower-order terms, so the Legendre constant is at least ``gamma`` and
    the block norm at most ``M``.
    """
    if not 0 < gamma <= M:
        raise ValidationError("need 0 < gamma <= M")
    n = m * d
    Z = rng.standard_normal((n, n))
    if complex_entries:
        Z = Z + 1j * rng.standard_normal((n, n))
    Q, _ = np.linalg.qr(Z)
    eigs = rng.uniform(gamma, M, n)
    eigs[0] = gamma
    P = (Q * eigs) @ Q.conj().T
    P = 0.5 * (P + P.conj().T)
    mat = np.zeros((m + n, m + n), complex)
    mat[m:, m:] = P
    return CoefficientTensor(m, d, matrix=mat)


def random_tabulated_family(rng, nodes, T=1.0, m=1, gamma=0.5, M=2.0):
    """Piecewise-constant family of ``nodes`` random Hermitian tensors on [0, T]."""
    times = T * np.arange(1, nodes + 1) / nodes
    return TensorFamily.tabulated([(t, random_hermitian_tensor(rng, m, 2, gamma, M))
                                   for t in times])
