"""Dense linear-algebra kernels with fixed ordering and phase conventions.

LAPACK (through numpy) does the factorizations; this module pins down
what LAPACK leaves open: the order of eigenvalues, the phase of
eigenvectors and singular vectors, and residual-based acceptance checks.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, InputError, RankError, ShapeError, SymmetryError

# Relative tolerance under which two sort keys count as tied.
_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class SvdResult:
    """Rank-N singular triplets; ``A ~= U @ diag(s) @ V.conj().T``."""

    U: np.ndarray
    singular_values: np.ndarray
    V: np.ndarray

    @property
    def rank(self) -> int:
        return self.singular_values.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.singular_values) @ self.V.conj().T


def as_matrix(A, name: str = "matrix") -> np.ndarray:
    """Return ``A`` as a finite 2-D float64 or complex128 array."""
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise ShapeError(f"{name} must be a non-empty 2-D array, got shape {A.shape}")
    if np.iscomplexobj(A):
        A = A.astype(np.complex128, copy=False)
    else:
        A = A.astype(np.float64, copy=False)
    if not np.all(np.isfinite(A)):
        raise InputError(f"{name} contains non-finite entries")
    return A


def _phase_factors(vectors: np.ndarray) -> np.ndarray:
    """Unit factors that rotate each column's largest-magnitude entry onto the positive real axis."""
    idx = np.argmax(np.abs(vectors), axis=0)
    pivots = vectors[idx, np.arange(vectors.shape[1])]
    mags = np.abs(pivots)
    factors = np.ones(vectors.shape[1], dtype=vectors.dtype)
    nz = mags > 0
    factors[nz] = np.conj(pivots[nz]) / mags[nz]
    return factors


def normalize_phase(vectors: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude component of every column real and positive."""
    vectors = np.array(vectors, copy=True)
    if vectors.size == 0:
        return vectors
    return vectors * _phase_factors(vectors)


def truncated_svd(A, N: int) -> SvdResult:
    """Dominant ``N`` singular triplets of ``A``.

    Singular values are returned in descending order. Each left singular
    vector has its largest-magnitude entry made real-positive and the
    matching right vector is rotated by the same phase, so the product
    ``U diag(s) V^H`` is unchanged.
    """
    A = as_matrix(A, "A")
    kmax = min(A.shape)
    if not isinstance(N, (int, np.integer)) or not 1 <= N <= kmax:
        raise RankError(f"rank N={N} outside [1, {kmax}]")
    U, s, Vh = np.linalg.svd(A, full_matrices=False)
    U = U[:, :N]
    s = s[:N]
    V = Vh[:N].conj().T
    f = _phase_factors(U)
    U = U * f
    V = V * f
    return SvdResult(U=U, singular_values=s, V=V)


def hermitian_eig(C, rtol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of a Hermitian matrix, eigenvalues descending."""
    C = as_matrix(C, "C")
    if C.shape[0] != C.shape[1]:
        raise ShapeError(f"C must be square, got {C.shape}")
    scale = np.max(np.abs(C))
    asym = np.max(np.abs(C - C.conj().T))
    if asym > rtol * max(scale, np.finfo(float).tiny):
        raise SymmetryError(f"matrix not Hermitian: max |C - C^H| = {asym:.3e}")
    w, v = np.linalg.eigh(0.5 * (C + C.conj().T))
    w = w[::-1]
    v = normalize_phase(v[:, ::-1])
    return w, v


def _compare_eigenvalues(x: complex, y: complex) -> int:
    # descending magnitude, then real part, then imaginary part
    for kx, ky in ((abs(x), abs(y)), (x.real, y.real), (x.imag, y.imag)):
        tol = _TIE_RTOL * max(abs(x), abs(y), 1e-300)
        if abs(kx - ky) > tol:
            return -1 if kx > ky else 1
    return 0


def sort_eigenvalues(values) -> np.ndarray:
    """Permutation ordering ``values`` by descending magnitude with real/imag tiebreaks."""
    values = np.asarray(values, dtype=complex)
    order = sorted(
        range(values.size),
        key=functools.cmp_to_key(lambda i, j: _compare_eigenvalues(values[i], values[j])),
    )
    return np.asarray(order, dtype=int)


def general_eig(K, rtol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues and unit eigenvectors of a general square matrix.

    Raises
    ------
    ConvergenceError
        If any eigenpair residual exceeds ``rtol * ||K||_2``.
    """
    K = as_matrix(K, "K")
    if K.shape[0] != K.shape[1]:
        raise ShapeError(f"K must be square, got {K.shape}")
    w, v = np.linalg.eig(K)
    order = sort_eigenvalues(w)
    w = w[order].astype(complex)
    v = v[:, order].astype(complex)
    v = v / np.linalg.norm(v, axis=0)
    v = normalize_phase(v)
    residual = np.linalg.norm(K @ v - v * w, axis=0).max()
    knorm = np.linalg.norm(K, 2)
    if residual > rtol * max(knorm, np.finfo(float).tiny):
        raise ConvergenceError(
            f"eigenpair residual {residual:.3e} exceeds {rtol:g} * ||K|| = {rtol * knorm:.3e}"
        )
    return w, v


def pseudoinverse(A, tol: float = 1e-12) -> np.ndarray:
    """Moore-Penrose pseudoinverse, nulling directions below ``tol * sigma_1``."""
    A = as_matrix(A, "A")
    if not 0 < tol < 1:
        raise InputError(f"tol must lie in (0, 1), got {tol}")
    U, s, Vh = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros(A.T.shape, dtype=A.dtype)
    keep = s > tol * s[0]
    inv = np.zeros_like(s)
    inv[keep] = 1.0 / s[keep]
    return (Vh.conj().T * inv) @ U.conj().T


def numerical_rank(A, tol: float) -> int:
    """Number of singular values above ``tol * sigma_1`` (0 for a zero matrix)."""
    s = np.linalg.svd(np.asarray(A), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


def dft(signal, direction: str = "forward", axis: int = 0) -> np.ndarray:
    """Discrete Fourier transform along ``axis``.

    ``forward`` uses the ``exp(-i w t)`` kernel without scaling; ``inverse``
    carries the ``1/n`` factor. No padding is applied, any length works.
    """
    x = np.asarray(signal)
    if x.ndim == 0 or x.shape[axis] < 1:
        raise ShapeError("dft needs a sequence of length >= 1")
    if direction == "forward":
        return np.fft.fft(x, axis=axis)
    if direction == "inverse":
        return np.fft.ifft(x, axis=axis)
    raise ValueError(f"direction must be 'forward' or 'inverse', not {direction!r}")
