"""Dense complex-matrix kernel.

Hermitian eigendecompositions, PSD square roots/inverses, log-determinants,
and the real-symmetric embedding that bridges Hermitian cone variables to
the real conic solver.  Everything here is a pure function on immutable
inputs; matrices are plain ``numpy`` arrays.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError

__all__ = [
    "herm",
    "HermitianEig",
    "hermitian_eig",
    "psd_sqrt_inv",
    "real_embed",
    "complex_from_embed",
    "embed_coeff",
    "log_det_psd",
]


def herm(a):
    """Symmetric part (A + A^H)/2; absorbs round-off before decompositions."""
    a = np.asarray(a)
    return 0.5 * (a + a.conj().T)


def _check_square_finite(a, name):
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a.view(float))):
        raise NumericError(f"{name} contains non-finite entries")
    return a


@dataclass(frozen=True)
class HermitianEig:
    """Eigendecomposition of a Hermitian matrix.

    ``values`` ascend; the columns of ``vectors`` are orthonormal and each
    column's first component of modulus above 1e-12 is real nonnegative, so
    repeated runs produce identical decompositions.
    """

    values: np.ndarray
    vectors: np.ndarray


def _fix_eigvec_phases(vecs):
    vecs = vecs.copy()
    for j in range(vecs.shape[1]):
        col = vecs[:, j]
        idx = np.flatnonzero(np.abs(col) > 1e-12)
        if idx.size:
            pivot = col[idx[0]]
            vecs[:, j] = col * (pivot.conjugate() / abs(pivot))
    return vecs


def hermitian_eig(a):
    """Eigendecomposition of a (nearly) Hermitian matrix.

    The input is symmetrized before decomposing; downstream SDR iterates are
    Hermitian only up to solver tolerance.
    """
    a = _check_square_finite(a, "matrix")
    w, v = np.linalg.eigh(herm(a))
    return HermitianEig(values=w, vectors=_fix_eigvec_phases(v))


def psd_sqrt_inv(t):
    """Hermitian square root B and its inverse for a positive-definite T.

    B @ B = T and B @ B_inv = I.  Raises ``NumericError`` when T is
    numerically singular; the caller is expected to have added its noise
    floor to T before calling.
    """
    t = _check_square_finite(t, "matrix")
    eig = hermitian_eig(t)
    scale = float(np.max(np.abs(eig.values))) if eig.values.size else 0.0
    if scale == 0.0 or float(eig.values[0]) <= 1e-12 * scale:
        raise NumericError(
            "matrix is numerically singular (min eigenvalue "
            f"{eig.values[0] if eig.values.size else 0.0:.3e}); add the noise floor "
            "before taking the PSD square root"
        )
    v = eig.vectors
    sqrt_w = np.sqrt(eig.values)
    b = herm((v * sqrt_w) @ v.conj().T)
    b_inv = herm((v * (1.0 / sqrt_w)) @ v.conj().T)
    return b, b_inv


def real_embed(h):
    """Real-symmetric embedding [[Re H, -Im H], [Im H, Re H]] of Hermitian H.

    H is PSD iff the embedding is PSD; every eigenvalue of H shows up twice.
    Inner products double: tr(R(A) R(B)) = 2 tr(A B) for Hermitian A, B.
    """
    h = _check_square_finite(h, "matrix")
    re, im = h.real, h.imag
    top = np.hstack([re, -im])
    bot = np.hstack([im, re])
    return np.vstack([top, bot])


def complex_from_embed(x):
    """Adjoint of :func:`real_embed` (up to the factor of two).

    Maps an arbitrary real symmetric 2n x 2n matrix back to the Hermitian
    n x n matrix H with tr(real_embed(C) @ X) = 2 tr(C H) for every
    Hermitian C.  For X = real_embed(H) this recovers H exactly, and X PSD
    implies H PSD.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] != x.shape[1] or x.shape[0] % 2:
        raise DimensionError(f"embedding must be square with even dim, got {x.shape}")
    n = x.shape[0] // 2
    re = 0.5 * (x[:n, :n] + x[n:, n:])
    im = 0.5 * (x[n:, :n] - x[:n, n:])
    return herm(re + 1j * im)


def embed_coeff(c):
    """Real coefficient matrix for a Hermitian functional.

    tr(embed_coeff(C) @ X_real) equals tr(C H) for X_real = real_embed(H);
    the factor of two picked up by the embedding is divided out here.
    """
    return 0.5 * real_embed(herm(c))


def log_det_psd(a):
    """Natural-log determinant of a positive-definite Hermitian matrix.

    Computed from a Cholesky factorization; rate matrices can be badly
    conditioned, so the determinant itself is never formed.
    """
    a = _check_square_finite(a, "matrix")
    try:
        chol = np.linalg.cholesky(herm(a))
    except np.linalg.LinAlgError:
        w = np.linalg.eigvalsh(herm(a))
        raise NumericError(
            f"matrix is not positive definite (min eigenvalue {w[0]:.6e})"
        ) from None
    return 2.0 * float(np.sum(np.log(np.real(np.diag(chol)))))
