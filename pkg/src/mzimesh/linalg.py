"""Small dense complex linear-algebra kernel.

Matrices are plain ``numpy`` complex128 arrays. The helpers here add the
dimension checks and the few mesh-specific operations (2x2 embedding,
unitarity defect, power-iteration singular values) used across the package.
"""

from __future__ import annotations

import numpy as np


def as_matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=np.complex128)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    return a


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def dagger(m) -> np.ndarray:
    """Conjugate transpose."""
    return as_matrix(m).conj().T


def unitarity_defect(m) -> float:
    """Largest absolute entry of ``m^H m - I``; zero iff ``m`` is unitary."""
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"unitarity_defect needs a square matrix, got {m.shape}")
    return float(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))))


def embed_2x2(block, n: int, i: int, j: int) -> np.ndarray:
    """Return the n x n identity with rows/cols (i, j) replaced by ``block``."""
    block = as_matrix(block)
    if block.shape != (2, 2):
        raise ValueError(f"block must be 2x2, got {block.shape}")
    if not (0 <= i < j < n):
        raise ValueError(f"need 0 <= i < j < n, got i={i}, j={j}, n={n}")
    out = np.eye(n, dtype=np.complex128)
    out[np.ix_([i, j], [i, j])] = block
    return out


def power(v) -> float:
    v = np.asarray(v, dtype=np.complex128)
    return float(np.sum(np.abs(v) ** 2))


def singular_values(m, iters: int = 500, tol: float = 1e-13, seed: int = 0) -> np.ndarray:
    """Singular values by power iteration with deflation on ``m^H m``.

    Adequate for the small (<= ~32) matrices met here; returns values in
    descending order.
    """
    m = as_matrix(m)
    g = m.conj().T @ m
    n = g.shape[0]
    rng = np.random.default_rng(seed)
    values = []
    vecs: list[np.ndarray] = []
    for _ in range(n):
        v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        lam = 0.0
        for _ in range(iters):
            for u in vecs:
                v = v - (u.conj() @ v) * u
            w = g @ v
            for u in vecs:
                w = w - (u.conj() @ w) * u
            norm = np.linalg.norm(w)
            if norm == 0.0:
                lam = 0.0
                break
            new_lam = float(np.real(v.conj() @ w) / np.real(v.conj() @ v))
            v = w / norm
            if abs(new_lam - lam) <= tol * max(1.0, abs(new_lam)):
                lam = new_lam
                break
            lam = new_lam
        vecs.append(v / np.linalg.norm(v))
        values.append(np.sqrt(max(lam, 0.0)))
    return np.array(sorted(values, reverse=True))
