import numpy as np
import pytest
from hypothesis import given, strategies as st

from nnoc2po.linalg import embed_matrix, embed_vector, gram, lift_vector, matvec

from conftest import crandn


def test_matvec_examples():
    assert matvec(np.array([[1 + 0j]]), np.array([2 + 3j])) == pytest.approx([2 + 3j])
    assert matvec(np.array([[1j]]), np.array([1 + 0j])) == pytest.approx([1j])
    # (1+j)*1 + 2*j = 1+3j
    assert matvec(np.array([[1 + 1j, 2]]), np.array([1, 1j])) == pytest.approx([1 + 3j])


def test_matvec_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension mismatch"):
        matvec(np.ones((2, 3)), np.ones(2))


def test_gram_examples():
    assert gram(np.array([[1 + 1j]])) == pytest.approx(np.array([[2]]))
    assert np.all(gram(np.zeros((3, 2), complex)) == 0)
    np.testing.assert_allclose(gram(np.array([[1, 0], [0, 2j]])), [[1, 0], [0, 4]])


def test_embed_matrix_block_structure():
    a, b = 0.3, -1.7
    np.testing.assert_array_equal(embed_matrix(np.array([[a + 1j * b]])), [[a, -b], [b, a]])


def test_lift_vector():
    assert lift_vector(np.array([3.0, 4.0]), 1) == pytest.approx([3 + 4j])
    with pytest.raises(ValueError):
        lift_vector(np.array([1.0, 2.0, 3.0]), 1)


def test_embed_lift_round_trip(rng):
    M = crandn(rng, 2, 3)
    E = embed_matrix(M)
    np.testing.assert_array_equal(E[:2, :3] + 1j * E[2:, :3], M)
    v = crandn(rng, 5)
    np.testing.assert_array_equal(lift_vector(embed_vector(v)), v)


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_embedding_agrees_with_complex_matvec(r, c, seed):
    rng = np.random.default_rng(seed)
    A, x = crandn(rng, r, c), crandn(rng, c)
    ref = matvec(A, x)
    got = lift_vector(embed_matrix(A) @ embed_vector(x), r)
    assert np.linalg.norm(got - ref) <= 1e-12 * max(np.linalg.norm(ref), 1e-300)


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_gram_hermitian_psd(r, c, seed):
    rng = np.random.default_rng(seed)
    G = gram(crandn(rng, r, c))
    assert np.max(np.abs(G - G.conj().T)) <= 1e-14 * max(1.0, np.max(np.abs(G)))
    x = crandn(rng, c)
    assert np.real(np.vdot(x, G @ x)) >= -1e-12


@given(st.integers(0, 2**32 - 1))
def test_matvec_linear(seed):
    rng = np.random.default_rng(seed)
    A, x, y = crandn(rng, 3, 4), crandn(rng, 4), crandn(rng, 4)
    a, b = complex(*rng.standard_normal(2)), complex(*rng.standard_normal(2))
    lhs = matvec(A, a * x + b * y)
    rhs = a * matvec(A, x) + b * matvec(A, y)
    assert np.linalg.norm(lhs - rhs) <= 1e-12 * np.linalg.norm(rhs)


def test_batched_matvec_matches_loop(rng):
    A, x = crandn(rng, 5, 3, 4), crandn(rng, 5, 4)
    out = matvec(A, x)
    for k in range(5):
        np.testing.assert_allclose(out[k], A[k] @ x[k], rtol=1e-14)
