"""Dense tensor helpers: im2col unrolling, a direct reference convolution,
a fixed-order matmul and a central-difference gradient.

Feature maps are numpy arrays laid out ``(c, h, w)`` or batched
``(b, c, h, w)``. Kernels are ``(c_in, k1, k2, c_out)``. Unrolled rows use the
canonical order ``row = (c * k1 + r) * k2 + q`` everywhere in the package.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NonFiniteError, ShapeError

# Largest (rows x block x cols) temporary allowed in matmul, in elements.
_MATMUL_BLOCK_ELEMS = 1 << 22


@dataclass(frozen=True)
class ConvSpec:
    c_in: int
    k1: int
    k2: int
    c_out: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        for name in ("c_in", "k1", "k2", "c_out", "stride"):
            if getattr(self, name) < 1:
                raise ShapeError(f"ConvSpec.{name} must be >= 1, got {getattr(self, name)}")
        if self.padding < 0:
            raise ShapeError(f"ConvSpec.padding must be >= 0, got {self.padding}")

    @property
    def unrolled_dim(self) -> int:
        return self.c_in * self.k1 * self.k2

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        ho = (h + 2 * self.padding - self.k1) // self.stride + 1
        wo = (w + 2 * self.padding - self.k2) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(
                f"input {h}x{w} (padding {self.padding}) too small for "
                f"{self.k1}x{self.k2} kernel"
            )
        return ho, wo


def _as_batch(x: np.ndarray, spec: ConvSpec) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    if x.ndim == 3:
        x, batched = x[None], False
    elif x.ndim == 4:
        batched = True
    else:
        raise ShapeError(f"expected (c,h,w) or (b,c,h,w) input, got shape {x.shape}")
    if x.shape[1] != spec.c_in:
        raise ShapeError(f"input has {x.shape[1]} channels, spec expects c_in={spec.c_in}")
    return x, batched


def im2col(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Unroll receptive fields into a ``(P, D)`` matrix.

    Rows are ordered by (batch, out_row, out_col); columns follow the
    canonical (c, r, q) order so ``im2col(x) @ unroll_kernel(w)`` is the
    convolution.
    """
    xb, _ = _as_batch(x, spec)
    b, c, h, w = xb.shape
    ho, wo = spec.output_hw(h, w)
    p = spec.padding
    if p:
        xb = np.pad(xb, ((0, 0), (0, 0), (p, p), (p, p)))
    s = spec.stride
    cols = np.empty((b, ho, wo, spec.unrolled_dim), dtype=np.result_type(xb.dtype, np.float64))
    for ci in range(c):
        for r in range(spec.k1):
            for q in range(spec.k2):
                d = (ci * spec.k1 + r) * spec.k2 + q
                cols[..., d] = xb[:, ci, r : r + s * (ho - 1) + 1 : s, q : q + s * (wo - 1) + 1 : s]
    return cols.reshape(b * ho * wo, spec.unrolled_dim)


def col2im(cols: np.ndarray, spec: ConvSpec, input_shape: tuple[int, ...]) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add ``(P, D)`` rows back to a feature map."""
    batched = len(input_shape) == 4
    b, c, h, w = input_shape if batched else (1, *input_shape)
    ho, wo = spec.output_hw(h, w)
    if cols.shape != (b * ho * wo, spec.unrolled_dim):
        raise ShapeError(f"cols shape {cols.shape} does not match input {input_shape}")
    p, s = spec.padding, spec.stride
    out = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=np.float64)
    grid = cols.reshape(b, ho, wo, spec.unrolled_dim)
    for ci in range(c):
        for r in range(spec.k1):
            for q in range(spec.k2):
                d = (ci * spec.k1 + r) * spec.k2 + q
                out[:, ci, r : r + s * (ho - 1) + 1 : s, q : q + s * (wo - 1) + 1 : s] += grid[..., d]
    if p:
        out = out[:, :, p:-p, p:-p]
    return out if batched else out[0]


def unroll_kernel(kernel: np.ndarray) -> np.ndarray:
    """``(c_in, k1, k2, c_out)`` kernel -> ``(D, c_out)`` matrix in canonical row order."""
    kernel = np.asarray(kernel)
    if kernel.ndim != 4:
        raise ShapeError(f"kernel must be 4-D (c_in,k1,k2,c_out), got shape {kernel.shape}")
    c_in, k1, k2, c_out = kernel.shape
    return kernel.reshape(c_in * k1 * k2, c_out)


def fold_kernel(unrolled: np.ndarray, spec: ConvSpec) -> np.ndarray:
    return np.asarray(unrolled).reshape(spec.c_in, spec.k1, spec.k2, spec.c_out)


def rows_to_fmap(rows: np.ndarray, batch: int, ho: int, wo: int, batched: bool) -> np.ndarray:
    """``(P, C)`` output rows -> ``(b, C, ho, wo)`` (or ``(C, ho, wo)``)."""
    out = rows.reshape(batch, ho, wo, rows.shape[-1]).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    return out if batched else out[0]


def fmap_to_rows(fmap: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rows_to_fmap` for batched maps."""
    b, c, ho, wo = fmap.shape
    return np.ascontiguousarray(fmap.transpose(0, 2, 3, 1)).reshape(b * ho * wo, c)


def conv_reference(x: np.ndarray, kernel: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Direct convolution, looping over kernel taps and output pixels.

    Deliberately does not go through im2col; it is the oracle the partitioned
    paths are checked against.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.shape != (spec.c_in, spec.k1, spec.k2, spec.c_out):
        raise ShapeError(
            f"kernel shape {kernel.shape} does not match spec "
            f"{(spec.c_in, spec.k1, spec.k2, spec.c_out)}"
        )
    xb, batched = _as_batch(np.asarray(x, dtype=np.float64), spec)
    b, _, h, w = xb.shape
    ho, wo = spec.output_hw(h, w)
    p, s = spec.padding, spec.stride
    if p:
        xb = np.pad(xb, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((b, spec.c_out, ho, wo))
    for oy in range(ho):
        for ox in range(wo):
            patch = xb[:, :, oy * s : oy * s + spec.k1, ox * s : ox * s + spec.k2]
            acc = np.zeros((b, spec.c_out))
            for ci in range(spec.c_in):
                for r in range(spec.k1):
                    for q in range(spec.k2):
                        acc = acc + patch[:, ci, r, q, None] * kernel[ci, r, q]
            out[:, :, oy, ox] = acc
    return out if batched else out[0]


def _matmul_numpy(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    rows, inner = a.shape
    cols = b.shape[1]
    acc = np.zeros((rows, cols))
    block = max(1, min(inner, _MATMUL_BLOCK_ELEMS // max(1, rows * cols)))
    for start in range(0, inner, block):
        stop = min(inner, start + block)
        prod = a[:, start:stop, None] * b[None, start:stop, :]
        # accumulate() is a sequential prefix sum, so prepending the running
        # total keeps the left fold intact across block boundaries.
        chain = np.concatenate([acc[:, None, :], prod], axis=1)
        acc = np.add.accumulate(chain, axis=1)[:, -1, :]
    return acc


try:
    import numba

    @numba.njit(cache=True, fastmath=False)
    def _matmul_kernel(a, b, out):  # pragma: no cover - compiled
        rows, inner = a.shape
        cols = b.shape[1]
        for i in range(rows):
            for k in range(inner):
                aik = a[i, k]
                for j in range(cols):
                    out[i, j] += aik * b[k, j]

    def _matmul_fast(a, b):
        out = np.zeros((a.shape[0], b.shape[1]))
        _matmul_kernel(np.ascontiguousarray(a), np.ascontiguousarray(b), out)
        return out

except ImportError:  # pragma: no cover
    _matmul_fast = _matmul_numpy


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with a fixed, ascending summation order over the inner dim.

    ``out[p, c] = ((a[p,0]*b[0,c] + a[p,1]*b[1,c]) + ...)``, a strict left fold,
    so results are bit-identical across calls and independent of BLAS.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return _matmul_fast(a, b)


def finite_diff_grad(fn: Callable[[np.ndarray], float], at: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one element at a time."""
    if not eps > 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    x = np.array(at, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(fn(x))
        flat[i] = orig - eps
        lo = float(fn(x))
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NonFiniteError(f"function is non-finite near element {i}: f+={hi}, f-={lo}")
        gflat[i] = (hi - lo) / (2 * eps)
    return grad
