"""Dense complex arithmetic and the real-valued embedding.

Complex vectors and matrices are plain ``numpy`` arrays of dtype
``complex128``.  Every function here also accepts stacked inputs with a
leading batch axis, which is how the trainer and the evaluator process many
channel realizations at once.

The real embedding maps a complex matrix ``M`` to::

    [[Re M, -Im M],
     [Im M,  Re M]]

and a complex vector ``v`` to ``[Re v; Im v]``, so that
``embed_matrix(M) @ embed_vector(v) == embed_vector(M @ v)``.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "as_complex_vector",
    "as_complex_matrix",
    "matvec",
    "gram",
    "embed_matrix",
    "embed_vector",
    "lift_vector",
]


def _check_finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} contains non-finite entries")


def as_complex_vector(v, name: str = "vector") -> np.ndarray:
    """Validate and convert ``v`` to a 1-D ``complex128`` array."""
    a = np.asarray(v, dtype=np.complex128)
    if a.ndim != 1 or a.size == 0:
        raise ValueError(f"{name} must be a nonempty 1-D array, got shape {a.shape}")
    _check_finite(a, name)
    return a


def as_complex_matrix(m, name: str = "matrix") -> np.ndarray:
    """Validate and convert ``m`` to a 2-D ``complex128`` array."""
    a = np.asarray(m, dtype=np.complex128)
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"{name} must be a nonempty 2-D array, got shape {a.shape}")
    _check_finite(a, name)
    return a


def matvec(A: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Matrix-vector product, batched over any leading axes.

    Raises
    ------
    ValueError
        If the inner dimensions do not agree.
    """
    A = np.asarray(A)
    x = np.asarray(x)
    if A.ndim < 2 or x.ndim < 1:
        raise ValueError("matvec needs a matrix and a vector")
    if A.shape[-1] != x.shape[-1]:
        raise ValueError(
            f"dimension mismatch: matrix has {A.shape[-1]} columns, vector has {x.shape[-1]} entries"
        )
    return (A @ x[..., None])[..., 0]


def gram(A: np.ndarray) -> np.ndarray:
    """Return ``A^H A`` (batched over leading axes)."""
    A = np.asarray(A)
    if A.ndim < 2 or A.size == 0:
        raise ValueError("gram needs a nonempty matrix")
    return np.swapaxes(A, -1, -2).conj() @ A


def embed_matrix(M: np.ndarray) -> np.ndarray:
    """Real embedding of a (batched) complex matrix, shape ``(..., 2R, 2C)``."""
    M = np.asarray(M, dtype=np.complex128)
    if M.ndim < 2:
        raise ValueError("embed_matrix needs a matrix")
    re, im = M.real, M.imag
    top = np.concatenate([re, -im], axis=-1)
    bottom = np.concatenate([im, re], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def embed_vector(v: np.ndarray) -> np.ndarray:
    """Stack real and imaginary parts: ``(..., n) -> (..., 2n)``."""
    v = np.asarray(v, dtype=np.complex128)
    return np.concatenate([v.real, v.imag], axis=-1)


def lift_vector(xr: np.ndarray, length: int | None = None) -> np.ndarray:
    """Inverse of :func:`embed_vector`: entry ``b`` is ``xr[b] + 1j * xr[b + n]``."""
    xr = np.asarray(xr, dtype=np.float64)
    if length is None:
        if xr.shape[-1] % 2:
            raise ValueError("real embedding must have even length")
        length = xr.shape[-1] // 2
    if xr.shape[-1] != 2 * length:
        raise ValueError(f"expected {2 * length} real entries, got {xr.shape[-1]}")
    return xr[..., :length] + 1j * xr[..., length:]
