"""Dense third-order tensors and the t-product algebra.

Tensors are plain ``numpy`` arrays of shape ``(rows, cols, depth)``; the
frontal slice ``A_k`` is ``A[:, :, k]``.  Flattening in Fortran order gives
the canonical layout used everywhere in the package: slice-major, and
column-major inside each frontal slice.

Two routes exist for every bcirc-based definition.  The dense route builds
``bcirc(A)`` explicitly and is only meant for small instances and tests.  The
production route diagonalizes ``bcirc`` with a real FFT along the third mode
and works slice by slice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "FourierSlices",
    "as_tensor3",
    "bcirc",
    "from_bcirc",
    "fold",
    "unfold",
    "tv",
    "from_tv",
    "t_product",
    "t_product_dense",
    "t_transpose",
    "t_identity",
    "inner",
    "fro_norm",
    "to_fourier",
    "from_fourier",
    "t_pinv",
    "t_pinv_dense",
    "parseval_weights",
]

DEFAULT_RANK_TOL = 1e-12


def as_tensor3(a, *, check_finite: bool = True) -> np.ndarray:
    """Return ``a`` as a float64 array with exactly three axes.

    Raises ``ValueError`` for the wrong number of axes or for NaN/Inf entries
    when ``check_finite`` is set.
    """
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"expected a third-order tensor, got shape {arr.shape}")
    if check_finite and not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite entries")
    return arr


def _check_product_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[1] != b.shape[0] or a.shape[2] != b.shape[2]:
        raise ValueError(f"incompatible t-product shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------------------
# reshaping operators
# ---------------------------------------------------------------------------


def bcirc(a) -> np.ndarray:
    """Block circulant matrix whose (i, j) block is ``A_{(i - j) mod n}``."""
    a = np.asarray(a)
    m, l, n = a.shape
    out = np.empty((m * n, l * n), dtype=a.dtype)
    for i in range(n):
        for j in range(n):
            out[i * m:(i + 1) * m, j * l:(j + 1) * l] = a[:, :, (i - j) % n]
    return out


def from_bcirc(mat, depth: int) -> np.ndarray:
    """Recover a tensor from (the first block column of) its bcirc matrix."""
    mat = np.asarray(mat)
    cols = mat.shape[1] // depth
    return fold(mat[:, :cols], depth)


def unfold(a) -> np.ndarray:
    """Stack the frontal slices vertically into an ``(rows*depth, cols)`` matrix."""
    a = np.asarray(a)
    m, l, n = a.shape
    return a.transpose(2, 0, 1).reshape(m * n, l)


def fold(mat, depth: int) -> np.ndarray:
    """Inverse of :func:`unfold`."""
    mat = np.asarray(mat)
    if mat.ndim != 2:
        raise ValueError("fold expects a matrix")
    if depth < 1 or mat.shape[0] % depth:
        raise ValueError(f"row count {mat.shape[0]} not divisible by depth {depth}")
    m = mat.shape[0] // depth
    return mat.reshape(depth, m, mat.shape[1]).transpose(1, 2, 0).copy()


def tv(a) -> np.ndarray:
    """Tube-wise vectorization: column-major vec of each frontal slice, in slice order."""
    return np.asarray(a).reshape(-1, order="F")


def from_tv(vec, shape) -> np.ndarray:
    return np.asarray(vec).reshape(shape, order="F")


# ---------------------------------------------------------------------------
# Fourier domain
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FourierSlices:
    """DFT of a tensor along its third mode.

    For real input only the first ``depth // 2 + 1`` slices are kept
    (``half=True``); the rest follow by conjugate symmetry.  ``data`` has
    shape ``(n_slices, rows, cols)`` so slicewise products are batched
    ``matmul`` calls.
    """

    data: np.ndarray
    depth: int
    half: bool = True

    @property
    def shape(self):
        return self.data.shape[1], self.data.shape[2], self.depth

    def full(self) -> np.ndarray:
        """All ``depth`` slices, reconstructing the redundant half if needed."""
        if not self.half:
            return self.data
        n = self.depth
        out = np.empty((n,) + self.data.shape[1:], dtype=complex)
        nh = self.data.shape[0]
        out[:nh] = self.data
        for j in range(nh, n):
            out[j] = np.conj(self.data[n - j])
        return out


def to_fourier(a, *, half: bool = True) -> FourierSlices:
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[2]
    if half:
        data = np.fft.rfft(a, axis=2)
    else:
        data = np.fft.fft(a, axis=2)
    return FourierSlices(np.ascontiguousarray(data.transpose(2, 0, 1)), n, half)


def from_fourier(f: FourierSlices) -> np.ndarray:
    spec = f.data.transpose(1, 2, 0)
    if f.half:
        return np.fft.irfft(spec, n=f.depth, axis=2)
    return np.fft.ifft(spec, axis=2).real


def parseval_weights(depth: int) -> np.ndarray:
    """Weights turning half-spectrum sums of squares into Frobenius norms.

    ``||A||_F^2 == sum_k w[k] * ||Ahat_k||_F^2`` for ``Ahat = rfft(A)``.
    """
    nh = depth // 2 + 1
    w = np.full(nh, 2.0)
    w[0] = 1.0
    if depth % 2 == 0:
        w[-1] = 1.0
    return w / depth


# ---------------------------------------------------------------------------
# products
# ---------------------------------------------------------------------------


def t_product(a, b) -> np.ndarray:
    """t-product ``A * B`` computed slicewise in the Fourier domain."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_product_dims(a, b)
    fa = to_fourier(a)
    fb = to_fourier(b)
    return from_fourier(FourierSlices(fa.data @ fb.data, a.shape[2]))


def t_product_dense(a, b) -> np.ndarray:
    """Reference t-product ``fold(bcirc(A) @ unfold(B))``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_product_dims(a, b)
    return fold(bcirc(a) @ unfold(b), a.shape[2])


def t_transpose(a) -> np.ndarray:
    """Transpose every frontal slice and reverse the order of slices 2..n."""
    a = np.asarray(a)
    out = a.transpose(1, 0, 2)
    idx = (-np.arange(a.shape[2])) % a.shape[2]
    return out[:, :, idx].copy()


def t_identity(size: int, depth: int) -> np.ndarray:
    if size < 1 or depth < 1:
        raise ValueError("identity tensor needs size >= 1 and depth >= 1")
    out = np.zeros((size, size, depth))
    out[:, :, 0] = np.eye(size)
    return out


def inner(a, b) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"inner product of mismatched shapes {a.shape} and {b.shape}")
    return float(np.vdot(a.ravel(), b.ravel()))


def fro_norm(a) -> float:
    return float(np.linalg.norm(np.asarray(a).ravel()))


# ---------------------------------------------------------------------------
# pseudoinverse
# ---------------------------------------------------------------------------


def _slice_pinv(data: np.ndarray, rank_tol: float) -> np.ndarray:
    # Cut-off is relative to the largest singular value over *all* slices,
    # i.e. to ||bcirc(A)||_2, so this agrees with the dense pseudoinverse.
    u, s, vh = np.linalg.svd(data, full_matrices=False)
    smax = s.max() if s.size else 0.0
    if smax == 0.0:
        return np.zeros(data.shape[:1] + data.shape[:0:-1], dtype=data.dtype)
    keep = s > rank_tol * smax
    s_inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    return (np.conj(vh).transpose(0, 2, 1) * s_inv[:, None, :]) @ np.conj(u).transpose(0, 2, 1)


def t_pinv(a, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Tensor pseudoinverse, ``bcirc(pinv(A)) == pinv(bcirc(A))``.

    Singular values below ``rank_tol * ||bcirc(A)||_2`` are treated as zero.
    """
    a = as_tensor3(a)
    f = to_fourier(a)
    return from_fourier(FourierSlices(_slice_pinv(f.data, rank_tol), a.shape[2]))


def t_pinv_dense(a, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Reference pseudoinverse through the dense bcirc matrix."""
    a = as_tensor3(a)
    m, l, n = a.shape
    p = np.linalg.pinv(bcirc(a), rcond=rank_tol)
    return from_bcirc(p, n)
