"""Partitioned convolution with per-crossbar dendritic nonlinearities.

Two forward paths share the same psum computation:

* vConv: ``y[p,k] = sum_s psum[s,p,k]``
* CADC:  ``y[p,k] = sum_s soma[s] * f(psum[s,p,k])``

where ``psum[s,p,k]`` is the dot product of segment ``s``'s weight rows with
the matching slice of the unrolled input. Cross-segment sums are left folds in
segment order, which is what makes Identity-CADC bit-identical to vConv.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .partition import CrossbarConfig, PartitionedKernel, partition
from .tensor import ConvSpec, col2im, fmap_to_rows, im2col, matmul, rows_to_fmap, unroll_kernel

KINDS = ("relu", "sublinear", "supralinear", "tanh", "identity")
SQRT_GRAD_FLOOR = 1e-12


@dataclass(frozen=True)
class DendriteFn:
    """``f(x) = 0`` for ``x <= 0`` and ``g(x)`` above it (except ``identity``)."""

    kind: str = "relu"
    k: float = 1.0

    def __post_init__(self):
        kind = self.kind.lower()
        if kind not in KINDS:
            raise ValueError(f"unknown dendrite fn {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        if kind == "supralinear" and not self.k > 0:
            raise ValueError(f"supralinear coefficient must be > 0, got {self.k}")

    @classmethod
    def parse(cls, spec: "str | DendriteFn") -> "DendriteFn":
        """Accept ``"relu"``, ``"supralinear"`` or ``"supralinear:0.5"``."""
        if isinstance(spec, DendriteFn):
            return spec
        kind, _, k = str(spec).partition(":")
        return cls(kind, float(k)) if k else cls(kind)

    @property
    def name(self) -> str:
        if self.kind == "supralinear" and self.k != 1.0:
            return f"supralinear:{self.k:g}"
        return self.kind

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "identity":
            return x.copy()
        pos = x > 0
        if self.kind == "relu":
            return np.where(pos, x, 0.0)
        if self.kind == "sublinear":
            return np.where(pos, np.sqrt(np.where(pos, x, 0.0)), 0.0)
        if self.kind == "supralinear":
            return np.where(pos, self.k * x * x, 0.0)
        return np.where(pos, np.tanh(x), 0.0)

    def derivative(self, x):
        """Derivative w.r.t. the psum; subgradient 0 at and below 0."""
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "identity":
            return np.ones_like(x)
        pos = x > 0
        if self.kind == "relu":
            return pos.astype(np.float64)
        if self.kind == "sublinear":
            safe = np.maximum(np.where(pos, x, 1.0), SQRT_GRAD_FLOOR)
            return np.where(pos, 0.5 / np.sqrt(safe), 0.0)
        if self.kind == "supralinear":
            return np.where(pos, 2.0 * self.k * x, 0.0)
        t = np.tanh(np.where(pos, x, 0.0))
        return np.where(pos, 1.0 - t * t, 0.0)


def apply_f(fn: DendriteFn, x):
    out = fn(x)
    return float(out) if np.ndim(x) == 0 else out


@dataclass
class CadcLayer:
    spec: ConvSpec
    partitioned: PartitionedKernel
    fn: DendriteFn = field(default_factory=DendriteFn)
    soma_weights: np.ndarray | None = None

    def __post_init__(self):
        if self.partitioned.segment_map.depth != self.spec.unrolled_dim:
            raise ShapeError(
                f"partition covers {self.partitioned.segment_map.depth} rows, "
                f"spec needs D={self.spec.unrolled_dim}"
            )
        if self.soma_weights is None:
            self.soma_weights = np.ones(self.partitioned.s_count)

    @classmethod
    def from_kernel(cls, kernel: np.ndarray, spec: ConvSpec, xbar: CrossbarConfig,
                    fn: DendriteFn | str = "relu") -> "CadcLayer":
        """Build from a ``(c_in, k1, k2, c_out)`` or already-unrolled kernel."""
        kernel = np.asarray(kernel, dtype=np.float64)
        unrolled = unroll_kernel(kernel) if kernel.ndim == 4 else kernel
        return cls(spec, partition(unrolled, xbar), DendriteFn.parse(fn))

    @property
    def s_count(self) -> int:
        return self.partitioned.s_count


@dataclass
class PsumTensor:
    """Psums laid out ``(S, P, c_out)``, tagged with the pipeline stage."""

    data: np.ndarray
    stage: str = "raw"

    def __post_init__(self):
        if self.stage not in ("raw", "post_f", "post_adc"):
            raise ValueError(f"unknown psum stage {self.stage!r}")
        if self.data.ndim != 3:
            raise ShapeError(f"psum tensor must be (S, P, c_out), got {self.data.shape}")

    @property
    def s_count(self) -> int:
        return self.data.shape[0]


def segment_psums(layer: CadcLayer, unrolled_input: np.ndarray) -> PsumTensor:
    cols = np.asarray(unrolled_input, dtype=np.float64)
    if cols.ndim != 2 or cols.shape[1] != layer.spec.unrolled_dim:
        raise ShapeError(f"unrolled input shape {cols.shape}, expected (P, {layer.spec.unrolled_dim})")
    pk = layer.partitioned
    out = np.empty((pk.s_count, cols.shape[0], pk.c_out))
    for s, (lo, hi) in enumerate(pk.segment_map.segments):
        out[s] = matmul(cols[:, lo:hi], pk.segment_rows(s))
    return PsumTensor(out, "raw")


def _fold_segments(terms: np.ndarray) -> np.ndarray:
    acc = np.zeros(terms.shape[1:])
    for s in range(terms.shape[0]):
        acc = acc + terms[s]
    return acc


def _unroll(layer: CadcLayer, x: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 4
    b = x.shape[0] if batched else 1
    ho, wo = layer.spec.output_hw(x.shape[-2], x.shape[-1])
    return im2col(x, layer.spec), (b, ho, wo, batched)


def vconv_rows(layer: CadcLayer, cols: np.ndarray) -> tuple[np.ndarray, PsumTensor]:
    psums = segment_psums(layer, cols)
    return _fold_segments(psums.data), psums


def cadc_rows(layer: CadcLayer, cols: np.ndarray) -> tuple[np.ndarray, PsumTensor, PsumTensor]:
    raw = segment_psums(layer, cols)
    post = layer.fn(raw.data)
    weighted = post * layer.soma_weights[:, None, None]
    return _fold_segments(weighted), PsumTensor(post, "post_f"), raw


def vconv_forward(layer: CadcLayer, x: np.ndarray) -> np.ndarray:
    cols, geom = _unroll(layer, x)
    y, _ = vconv_rows(layer, cols)
    return rows_to_fmap(y, *geom)


def cadc_forward(layer: CadcLayer, x: np.ndarray) -> tuple[np.ndarray, PsumTensor]:
    cols, geom = _unroll(layer, x)
    y, post, _ = cadc_rows(layer, cols)
    return rows_to_fmap(y, *geom), post


def sparsity_stats(psums: PsumTensor | np.ndarray) -> dict:
    data = psums.data if isinstance(psums, PsumTensor) else np.asarray(psums)
    if data.size == 0:
        raise ShapeError("sparsity of an empty psum tensor is undefined")
    zeros = data == 0
    per_segment = zeros.reshape(data.shape[0], -1).mean(axis=1) if data.ndim > 1 else zeros.astype(float)
    return {
        "zero_fraction": float(zeros.sum() / data.size),
        "per_segment": [float(v) for v in np.atleast_1d(per_segment)],
    }


def backward_rows(layer: CadcLayer, cols: np.ndarray, grad_rows: np.ndarray,
                  raw: PsumTensor | None = None, dendritic: bool = True) -> dict:
    """Gradients for a ``(P, D)`` unrolled input given ``(P, c_out)`` upstream grads.

    With ``dendritic=False`` this is the vConv backward (plain accumulation).
    """
    pk = layer.partitioned
    grad_rows = np.asarray(grad_rows, dtype=np.float64)
    if grad_rows.shape != (cols.shape[0], pk.c_out):
        raise ShapeError(f"upstream grad shape {grad_rows.shape}, expected {(cols.shape[0], pk.c_out)}")
    if dendritic and raw is None:
        raw = segment_psums(layer, cols)
    grad_w = np.zeros((layer.spec.unrolled_dim, pk.c_out))
    grad_cols = np.zeros_like(cols)
    grad_soma = np.zeros(pk.s_count)
    for s, (lo, hi) in enumerate(pk.segment_map.segments):
        if dendritic:
            g = grad_rows * (layer.soma_weights[s] * layer.fn.derivative(raw.data[s]))
            grad_soma[s] = float(np.sum(grad_rows * layer.fn(raw.data[s])))
        else:
            g = grad_rows
        grad_w[lo:hi] = matmul(cols[:, lo:hi].T, g)
        grad_cols[:, lo:hi] = matmul(g, pk.segment_rows(s).T)
    return {"grad_weights": grad_w, "grad_cols": grad_cols, "grad_soma": grad_soma}


def _backward(layer: CadcLayer, x: np.ndarray, upstream_grad: np.ndarray, dendritic: bool) -> dict:
    x = np.asarray(x, dtype=np.float64)
    cols, (b, ho, wo, batched) = _unroll(layer, x)
    g = np.asarray(upstream_grad, dtype=np.float64)
    g = g if batched else g[None]
    if g.shape != (b, layer.spec.c_out, ho, wo):
        raise ShapeError(f"upstream grad shape {np.shape(upstream_grad)} does not match layer output")
    grads = backward_rows(layer, cols, fmap_to_rows(g), dendritic=dendritic)
    return {
        "grad_weights": grads["grad_weights"].reshape(
            layer.spec.c_in, layer.spec.k1, layer.spec.k2, layer.spec.c_out
        ),
        "grad_input": col2im(grads["grad_cols"], layer.spec, x.shape),
        "grad_soma": grads["grad_soma"],
    }


def cadc_backward(layer: CadcLayer, x: np.ndarray, upstream_grad: np.ndarray) -> dict:
    """Chain rule through ``sum_s soma[s] * f(psum_s)``.

    Returns ``grad_weights`` shaped like the ``(c_in, k1, k2, c_out)`` kernel,
    ``grad_input`` shaped like ``x`` and ``grad_soma`` (one per segment).
    """
    return _backward(layer, x, upstream_grad, dendritic=True)


def vconv_backward(layer: CadcLayer, x: np.ndarray, upstream_grad: np.ndarray) -> dict:
    return _backward(layer, x, upstream_grad, dendritic=False)
