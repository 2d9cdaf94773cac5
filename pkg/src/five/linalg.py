"""Dense complex Hermitian linear algebra for small per-bin matrices.

All routines accept a single (M, M) matrix or a stack (..., M, M) and
broadcast over the leading axes, since the pipeline factorises one matrix
per frequency bin. Eigendecompositions are ordered by descending
eigenvalue and eigenvector phases are fixed so the largest-magnitude
entry of each vector is real positive, making outputs deterministic.
"""

from typing import NamedTuple

import numpy as np

__all__ = [
    "NotHermitianError",
    "NotPositiveDefiniteError",
    "EigenConvergenceError",
    "SingularTriangularError",
    "EigenDecomposition",
    "check_hermitian",
    "cholesky",
    "eig_hermitian",
    "smallest_eigenpair",
    "solve_upper_triangular",
    "apply_inverse_hermitian_transpose",
    "invert_upper_triangular",
]

_HERMITIAN_RTOL = 1e-12
_PIVOT_RTOL = 1e-12
_DIAG_RTOL = 1e-13


class NotHermitianError(ValueError):
    """Input violates Hermitian symmetry beyond tolerance."""


class NotPositiveDefiniteError(ValueError):
    """Cholesky hit a non-positive pivot; carries the pivot index."""

    def __init__(self, pivot_index, message=None):
        self.pivot_index = pivot_index
        super().__init__(message or f"matrix is not positive definite (pivot {pivot_index})")


class EigenConvergenceError(RuntimeError):
    """Eigensolver failed to converge (numerically pathological input)."""


class SingularTriangularError(ValueError):
    """Triangular solve hit a near-zero diagonal entry."""


class EigenDecomposition(NamedTuple):
    eigenvalues: np.ndarray  # (..., M) real, descending
    eigenvectors: np.ndarray  # (..., M, M), column k pairs with eigenvalues[..., k]


def _conj_t(a):
    return np.conj(np.swapaxes(a, -2, -1))


def check_hermitian(a, rtol=_HERMITIAN_RTOL):
    """Raise NotHermitianError unless a == a^H within relative tolerance."""
    a = np.asarray(a)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError("expected square matrices")
    scale = np.max(np.abs(a))
    if scale == 0:
        return
    asym = np.max(np.abs(a - _conj_t(a)))
    if asym > rtol * scale:
        raise NotHermitianError(
            f"asymmetry {asym:.3e} exceeds {rtol:.0e} relative to scale {scale:.3e}"
        )


def cholesky(a, pivot_rtol=_PIVOT_RTOL):
    """Upper-triangular factor q with q^H q = a and positive real diagonal.

    Pivots at or below pivot_rtol times the largest diagonal entry raise
    NotPositiveDefiniteError with the failing pivot index.
    """
    a = np.asarray(a, dtype=np.complex128)
    check_hermitian(a)
    m = a.shape[-1]
    q = np.zeros_like(a)
    tol = pivot_rtol * np.max(np.real(np.diagonal(a, axis1=-2, axis2=-1)), axis=-1)
    for j in range(m):
        head = q[..., :j, j]
        pivot = np.real(a[..., j, j]) - np.sum(np.abs(head) ** 2, axis=-1)
        if np.any(pivot <= tol):
            raise NotPositiveDefiniteError(j)
        d = np.sqrt(pivot)
        q[..., j, j] = d
        if j + 1 < m:
            cross = np.einsum("...i,...ik->...k", np.conj(head), q[..., :j, j + 1 :])
            q[..., j, j + 1 :] = (a[..., j, j + 1 :] - cross) / d[..., None]
    return q


def _fix_phase(vectors):
    # Rotate each column so its largest-magnitude entry is real positive.
    idx = np.argmax(np.abs(vectors), axis=-2)
    lead = np.take_along_axis(vectors, idx[..., None, :], axis=-2)[..., 0, :]
    mag = np.abs(lead)
    phase = np.where(mag > 0, lead / np.where(mag > 0, mag, 1.0), 1.0)
    return vectors * np.conj(phase)[..., None, :]


def eig_hermitian(a):
    """Full Hermitian eigendecomposition, eigenvalues sorted descending."""
    a = np.asarray(a, dtype=np.complex128)
    check_hermitian(a)
    try:
        values, vectors = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise EigenConvergenceError(str(exc)) from exc
    values = values[..., ::-1]
    vectors = _fix_phase(vectors[..., ::-1])
    return EigenDecomposition(np.ascontiguousarray(values), np.ascontiguousarray(vectors))


def smallest_eigenpair(a):
    """Smallest eigenvalue and its (phase-fixed) unit eigenvector."""
    values, vectors = eig_hermitian(a)
    return values[..., -1], vectors[..., :, -1]


def _check_diagonal(q):
    diag = np.abs(np.diagonal(q, axis1=-2, axis2=-1))
    if np.any(diag <= _DIAG_RTOL * np.max(diag)):
        raise SingularTriangularError("near-zero diagonal entry in triangular factor")


def solve_upper_triangular(q, b):
    """Solve q x = b by back substitution; q is (..., M, M), b is (..., M)."""
    q = np.asarray(q, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    _check_diagonal(q)
    m = q.shape[-1]
    shape = np.broadcast_shapes(q.shape[:-2], b.shape[:-1])
    x = np.zeros(shape + (m,), dtype=np.complex128)
    for i in range(m - 1, -1, -1):
        tail = np.einsum("...k,...k->...", q[..., i, i + 1 :], x[..., i + 1 :])
        x[..., i] = (b[..., i] - tail) / q[..., i, i]
    return x


def apply_inverse_hermitian_transpose(q, x):
    """Solve q^H y = x (forward substitution); applies the whitening map q^{-H}."""
    q = np.asarray(q, dtype=np.complex128)
    x = np.asarray(x, dtype=np.complex128)
    _check_diagonal(q)
    m = q.shape[-1]
    shape = np.broadcast_shapes(q.shape[:-2], x.shape[:-1])
    y = np.zeros(shape + (m,), dtype=np.complex128)
    for i in range(m):
        head = np.einsum("...j,...j->...", np.conj(q[..., :i, i]), y[..., :i])
        y[..., i] = (x[..., i] - head) / np.conj(q[..., i, i])
    return y


def invert_upper_triangular(q):
    """Explicit inverse of an upper-triangular factor (stays upper-triangular)."""
    q = np.asarray(q, dtype=np.complex128)
    _check_diagonal(q)
    m = q.shape[-1]
    eye = np.broadcast_to(np.eye(m, dtype=np.complex128), q.shape)
    inv = np.zeros_like(q)
    for i in range(m - 1, -1, -1):
        tail = np.einsum("...k,...kj->...j", q[..., i, i + 1 :], inv[..., i + 1 :, :])
        inv[..., i, :] = (eye[..., i, :] - tail) / q[..., i, i, None]
    return inv
