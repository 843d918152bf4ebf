import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parasys.errors import ValidationError
from parasys.tensors import (CoefficientTensor, TensorFamily, analyze, legendre_constant,
                             legendre_hadamard_constant, lh_form_value, random_hermitian_tensor,
                             sawtooth, sawtooth_probe, tensor_sup_norm)

from conftest import square_mesh

COUPLED = CoefficientTensor.scalar_coupling([[1.0, -0.5], [-0.5, 1.0]])
LH_FAIL = CoefficientTensor.scalar_coupling([[1.0, 2.0], [0.0, 1.0]])


def random_tensor(seed, m, d=2):
    r = np.random.default_rng(seed)
    n = m + m * d
    return CoefficientTensor(m, d, matrix=r.standard_normal((n, n)) + 1j * r.standard_normal((n, n)))


def test_block_layout_roundtrip():
    T = random_tensor(1, 2)
    back = CoefficientTensor.from_blocks(T.A, T.b, T.c, T.dd)
    assert np.array_equal(back.matrix, T.matrix)
    again = CoefficientTensor.from_dict(T.to_dict())
    assert np.allclose(again.matrix, T.matrix, atol=0)


def test_gradient_index_convention():
    A = np.zeros((2, 2, 2, 2))
    A[1, 0, 0, 1] = 7.0  # equation 1, d_1 of component 0
    T = CoefficientTensor.from_blocks(A)
    assert T.matrix[2 + 1 * 2 + 0, 2 + 0 * 2 + 1] == 7.0


def test_legendre_examples():
    assert legendre_constant(CoefficientTensor.identity()) == pytest.approx(1.0, abs=1e-15)
    assert legendre_constant(COUPLED) == pytest.approx(0.5, abs=1e-14)
    T = CoefficientTensor.from_blocks([[[[1, 2], [0, 1]]]])
    assert legendre_constant(T) == pytest.approx(0.0, abs=1e-14)


def test_lh_examples():
    assert legendre_hadamard_constant(CoefficientTensor.identity()) == pytest.approx(1.0, abs=1e-12)
    assert legendre_hadamard_constant(LH_FAIL) == pytest.approx(0.0, abs=1e-12)


def test_lh_argmin_is_consistent():
    T = CoefficientTensor.from_blocks([[[[1, 2], [0, 1]]]])
    val, eta, zeta = legendre_hadamard_constant(T, return_argmin=True)
    # rank-one form: eta^T A eta = 1 + 2 eta1 eta2; minimum 0 at eta = (1,-1)/sqrt 2
    assert val == pytest.approx(0.0, abs=1e-9)
    assert lh_form_value(T, eta, zeta) == pytest.approx(val, abs=1e-9)
    assert abs(eta[0] * eta[1]) == pytest.approx(0.5, abs=1e-6)


def test_lh_strictly_above_legendre():
    # A^{12} = [[0,1],[-1,0]] is invisible to rank-one directions for real eta
    A = np.zeros((2, 2, 2, 2))
    A[0, 0] = A[1, 1] = np.eye(2)
    A[0, 1] = [[0, 1.5], [-1.5, 0]]
    A[1, 0] = [[0, -1.5], [1.5, 0]]
    T = CoefficientTensor.from_blocks(A)
    assert legendre_constant(T) < 0
    assert legendre_hadamard_constant(T) == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), m=st.integers(1, 3))
def test_lh_dominates_legendre(seed, m):
    T = random_tensor(seed, m)
    assert legendre_hadamard_constant(T, eta_grid_size=180) >= legendre_constant(T) - 1e-9


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_unitary_change_of_basis_preserves_constants(seed):
    T = random_tensor(seed, 2)
    r = np.random.default_rng(seed + 1)
    U, _ = np.linalg.qr(r.standard_normal((2, 2)) + 1j * r.standard_normal((2, 2)))
    S = T.conjugate_basis(U)
    assert legendre_constant(S) == pytest.approx(legendre_constant(T), abs=1e-10)
    assert legendre_hadamard_constant(S, eta_grid_size=180) == pytest.approx(
        legendre_hadamard_constant(T, eta_grid_size=180), abs=1e-9)


def test_field_tensor_min_over_points():
    def fn(x):
        out = np.zeros((len(x), 3, 3), complex)
        out[:, 1, 1] = out[:, 2, 2] = 1.0 + x[:, 0]
        return out

    T = CoefficientTensor.from_field(1, 2, fn)
    pts = np.array([[0.2, 0.1], [0.7, 0.4], [0.5, 0.9]])
    assert legendre_constant(T, pts) == pytest.approx(1.2)
    with pytest.raises(ValidationError):
        legendre_constant(T, np.zeros((0, 2)))


def test_sup_norm_examples():
    ident = TensorFamily.constant(CoefficientTensor.identity())
    assert tensor_sup_norm(ident, [0.0, 0.5, 1.0]) == pytest.approx(1.0)
    triple = TensorFamily.constant(CoefficientTensor.identity().scale(3.0))
    assert tensor_sup_norm(triple, [0.3]) == pytest.approx(3.0)
    fam = TensorFamily.tabulated([(t, CoefficientTensor.identity().scale(1 + t)) for t in (0, 0.5, 1)])
    assert tensor_sup_norm(fam, [0.0, 0.5, 1.0]) == pytest.approx(2.0)
    with pytest.raises(ValidationError):
        tensor_sup_norm(fam, [1.5])


def test_analyze_neumann_caveat():
    rep = analyze(CoefficientTensor.identity(), dirichlet_everywhere=False)
    assert rep.gamma_legendre == pytest.approx(1.0)
    assert rep.caveats


def test_rejects_bad_shapes():
    with pytest.raises(ValidationError):
        CoefficientTensor(1, 2, matrix=np.eye(2))
    with pytest.raises(ValidationError):
        CoefficientTensor(1, 2, matrix=np.full((3, 3), np.nan))


def test_random_hermitian_tensor_bounds(rng):
    for _ in range(10):
        T = random_hermitian_tensor(rng, 2, 2, 0.3, 1.5)
        assert T.is_hermitian()
        assert legendre_constant(T) == pytest.approx(0.3, abs=1e-12)
        assert T.norm() <= 1.5 + 1e-12


def test_sawtooth_shape():
    s = np.linspace(-3, 3, 13)
    assert np.allclose(sawtooth(s), 1 - np.abs(np.mod(s + 1, 2) - 1))
    assert sawtooth(0.0) == 1.0 and sawtooth(1.0) == 0.0


def test_sawtooth_probe_values():
    mesh = square_mesh(1 / 64)
    eps = [1 / 8, 1 / 16]
    q_id = sawtooth_probe(CoefficientTensor.identity(), (1, 0), [1.0], eps, mesh)
    assert np.allclose(q_id, 1.0, atol=1e-12)
    z = np.array([1, 1]) / np.sqrt(2)
    mesh2 = square_mesh(1 / 64, m=2)
    q = sawtooth_probe(COUPLED, (1, 0), z, eps, mesh2)
    assert np.allclose(q, 0.5, atol=1e-12)


def test_sawtooth_probe_lh_failing_minimiser():
    mesh2 = square_mesh(1 / 64, m=2)
    _, eta, zeta = legendre_hadamard_constant(LH_FAIL, return_argmin=True)
    q = sawtooth_probe(LH_FAIL, eta, zeta, [1 / 8, 1 / 16], mesh2)
    assert np.allclose(q, 0.0, atol=1e-9)


def test_sawtooth_probe_needs_fine_mesh():
    with pytest.raises(ValidationError):
        sawtooth_probe(CoefficientTensor.identity(), (1, 0), [1.0], [1 / 8], square_mesh(1 / 8))
