import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mzimesh.linalg import dagger, embed_2x2, matmul, power, singular_values, unitarity_defect
from mzimesh.mzi import MziPhases, cross_state, mzi_transfer

angles = st.floats(-10, 10, allow_nan=False)


def random_unitary(rng, n):
    z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def test_matmul_identity_and_triple_loop_oracle(rng):
    m = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    assert np.allclose(matmul(np.eye(2), m), m, atol=0)
    a = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    b = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    ref = np.zeros((3, 3), complex)
    for i in range(3):
        for j in range(3):
            for k in range(3):
                ref[i, j] += a[i, k] * b[k, j]
    assert np.max(np.abs(matmul(a, b) - ref)) < 1e-12


def test_double_cross_has_bar_magnitudes():
    c = mzi_transfer(cross_state())
    assert np.allclose(np.abs(matmul(c, c)), np.eye(2), atol=1e-12)


def test_matmul_rejects_mismatch():
    with pytest.raises(ValueError, match="dimension mismatch"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_dagger_examples():
    assert np.array_equal(dagger(np.eye(3)), np.eye(3))
    m = mzi_transfer(MziPhases(0.7, 0.3))
    assert np.max(np.abs(dagger(m) @ m - np.eye(2))) < 1e-12


def test_unitarity_defect_basics():
    assert unitarity_defect(np.eye(4)) == 0.0
    with pytest.raises(ValueError):
        unitarity_defect(np.ones((2, 3)))


def test_embed_examples():
    assert np.array_equal(embed_2x2(np.eye(2), 4, 1, 2), np.eye(4))
    out = embed_2x2(mzi_transfer(cross_state()), 3, 0, 1) @ np.array([1, 0, 0])
    assert np.isclose(abs(out[1]), 1.0) and np.isclose(abs(out[0]), 0.0)
    with pytest.raises(ValueError):
        embed_2x2(np.eye(2), 3, 2, 3)
    with pytest.raises(ValueError):
        embed_2x2(np.eye(3), 3, 0, 1)


def test_singular_values_match_numpy(rng):
    m = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
    assert np.allclose(singular_values(m), np.linalg.svd(m, compute_uv=False), atol=1e-8)


@given(angles, angles)
def test_lossless_block_unitary(theta, phi):
    assert unitarity_defect(mzi_transfer(MziPhases(theta, phi))) < 1e-12


@given(st.integers(0, 2**32 - 1))
def test_associativity_and_power_conservation(seed):
    r = np.random.default_rng(seed)
    a, b, c = (r.standard_normal((4, 4)) + 1j * r.standard_normal((4, 4)) for _ in range(3))
    assert np.max(np.abs(matmul(matmul(a, b), c) - matmul(a, matmul(b, c)))) < 1e-10
    u = random_unitary(r, 5)
    v = r.standard_normal(5) + 1j * r.standard_normal(5)
    assert abs(power(u @ v) - power(v)) <= 1e-10 * power(v)


@given(st.integers(0, 2**32 - 1), st.integers(3, 8))
def test_embed_preserves_unitarity(seed, n):
    r = np.random.default_rng(seed)
    i = int(r.integers(0, n - 1))
    j = int(r.integers(i + 1, n))
    assert unitarity_defect(embed_2x2(random_unitary(r, 2), n, i, j)) < 1e-12
