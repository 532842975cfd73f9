"""Small feed-forward networks built from a :class:`NetSpec`.

Conv layers run through the partitioned CADC/vConv paths; average pooling and
the dense readout are plain float ops. Two forward modes exist:

* :meth:`Network.forward` - float64 reference path (trainable).
* :meth:`Network.forward_quantized` - ternary weights, fixed-point inputs and
  per-segment ADC conversion with optional code noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dendritic import CadcLayer, PsumTensor, backward_rows, cadc_rows, vconv_rows
from .errors import ConfigError, ShapeError
from .netspec import LayerSpec, NetSpec, flat_features
from .partition import CrossbarConfig, partition
from .quant import (AdcModel, FixedPointFormat, NoiseModel, adc_convert_noisy, mac_analog, quantize_input,
                    ternarize)
from .tensor import col2im, fmap_to_rows, im2col, matmul, rows_to_fmap, unroll_kernel


def init_weights(netspec: NetSpec, seed: int = 0) -> dict:
    """He-normal conv kernels, scaled-normal dense weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights = {}
    for layer in netspec.layers:
        if layer.kind == "conv":
            c = layer.conv
            weights[f"{layer.name}.weight"] = rng.normal(0.0, np.sqrt(2.0 / c.unrolled_dim),
                                                         size=(c.c_in, c.k1, c.k2, c.c_out))
        elif layer.kind == "dense":
            fin = flat_features(layer.in_shape)
            weights[f"{layer.name}.weight"] = rng.normal(0.0, np.sqrt(1.0 / fin), size=(fin, layer.out_features))
            weights[f"{layer.name}.bias"] = np.zeros(layer.out_features)
    return weights


def softmax_xent(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    log_p = z - np.log(e.sum(axis=1, keepdims=True))
    p = np.exp(log_p)
    n = logits.shape[0]
    loss = float(-np.mean(log_p[np.arange(n), labels]))
    g = p.copy()
    g[np.arange(n), labels] -= 1.0
    return loss, g / n


@dataclass
class LayerTrace:
    """Per-layer record from one forward pass."""

    name: str
    psums: PsumTensor | None = None
    codes: np.ndarray | None = None
    s_count: int = 1
    output_positions: int = 0
    cache: dict = field(default_factory=dict, repr=False)


def _pool_fwd(x, size):
    if size == 0:
        return x.mean(axis=(2, 3), keepdims=True)
    b, c, h, w = x.shape
    ho, wo = h // size, w // size
    return x[:, :, : ho * size, : wo * size].reshape(b, c, ho, size, wo, size).mean(axis=(3, 5))


def _pool_bwd(g, in_shape, size):
    b, c, h, w = in_shape
    if size == 0:
        return np.broadcast_to(g / (h * w), in_shape).copy()
    out = np.zeros(in_shape)
    ho, wo = g.shape[2], g.shape[3]
    up = np.repeat(np.repeat(g, size, axis=2), size, axis=3) / (size * size)
    out[:, :, : ho * size, : wo * size] = up
    return out


class Network:
    def __init__(self, netspec: NetSpec, weights: dict, xbar: CrossbarConfig):
        self.netspec = netspec
        self.weights = weights
        self.xbar = xbar
        missing = [k for k in init_weights(netspec, 0) if k not in weights]
        if missing:
            raise ShapeError(f"weights missing tensors: {missing}")
        for layer in netspec.layers:
            if layer.kind == "conv":
                c = layer.conv
                got = weights[f"{layer.name}.weight"].shape
                if got != (c.c_in, c.k1, c.k2, c.c_out):
                    raise ShapeError(f"{layer.name}.weight has shape {got}, expected {(c.c_in, c.k1, c.k2, c.c_out)}")
            elif layer.kind == "dense":
                got = weights[f"{layer.name}.weight"].shape
                want = (flat_features(layer.in_shape), layer.out_features)
                if got != want:
                    raise ShapeError(f"{layer.name}.weight has shape {got}, expected {want}")

    def cadc_layer(self, layer: LayerSpec) -> CadcLayer:
        unrolled = unroll_kernel(self.weights[f"{layer.name}.weight"])
        return CadcLayer(layer.conv, partition(unrolled, self.xbar, layer.weight_bits), layer.fn)

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != tuple(self.netspec.input_shape):
            raise ShapeError(f"input batch shape {x.shape}, netspec expects (b, {self.netspec.input_shape})")
        return x

    # ---- float path -------------------------------------------------------
    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[LayerTrace]]:
        x = self._check_input(x)
        traces = []
        for layer in self.netspec.layers:
            tr = LayerTrace(layer.name)
            tr.cache["x_shape"] = x.shape
            if layer.kind == "conv":
                cl = self.cadc_layer(layer)
                cols = im2col(x, layer.conv)
                if layer.is_vconv:
                    y, psums = vconv_rows(cl, cols)
                    raw = psums
                else:
                    y, psums, raw = cadc_rows(cl, cols)
                _, ho, wo = layer.out_shape
                pre = rows_to_fmap(y, x.shape[0], ho, wo, True)
                x = np.maximum(pre, 0.0) if layer.activation == "relu" else pre
                tr.psums, tr.s_count = psums, cl.s_count
                tr.output_positions = x.shape[0] * ho * wo
                tr.cache.update(layer=cl, cols=cols, raw=raw, pre=pre)
            elif layer.kind == "avgpool":
                x = _pool_fwd(x, layer.pool)
            else:
                flat = x.reshape(x.shape[0], -1)
                tr.cache["flat"] = flat
                x = matmul(flat, self.weights[f"{layer.name}.weight"]) + self.weights[f"{layer.name}.bias"]
                if layer.activation == "relu":
                    tr.cache["pre"] = x
                    x = np.maximum(x, 0.0)
            traces.append(tr)
        return x, traces

    def backward(self, traces: list[LayerTrace], grad_out: np.ndarray) -> dict:
        grads = {}
        g = grad_out
        for layer, tr in zip(reversed(self.netspec.layers), reversed(traces)):
            if layer.kind == "dense":
                if layer.activation == "relu":
                    g = g * (tr.cache["pre"] > 0)
                w = self.weights[f"{layer.name}.weight"]
                grads[f"{layer.name}.weight"] = matmul(tr.cache["flat"].T, g)
                grads[f"{layer.name}.bias"] = g.sum(axis=0)
                g = matmul(g, w.T).reshape(tr.cache["x_shape"])
            elif layer.kind == "avgpool":
                g = _pool_bwd(g, tr.cache["x_shape"], layer.pool)
            else:
                if layer.activation == "relu":
                    g = g * (tr.cache["pre"] > 0)
                res = backward_rows(tr.cache["layer"], tr.cache["cols"], fmap_to_rows(g),
                                    raw=tr.cache["raw"], dendritic=not layer.is_vconv)
                c = layer.conv
                grads[f"{layer.name}.weight"] = res["grad_weights"].reshape(c.c_in, c.k1, c.k2, c.c_out)
                g = col2im(res["grad_cols"], c, tr.cache["x_shape"])
        return grads

    def predict(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        out = [self.forward(x[i : i + batch_size])[0] for i in range(0, len(x), batch_size)]
        return np.concatenate(out, axis=0)

    # ---- hardware-fidelity path --------------------------------------------
    def calibrate_quantized(self, x: np.ndarray) -> list[dict]:
        """Per conv layer input format and ADC full scale, from a noise-free pass."""
        _, _, calib = self._run_quantized(x, None, None)
        return calib

    def forward_quantized(self, x: np.ndarray, calib: list[dict] | None = None,
                          noise: NoiseModel | None = None) -> tuple[np.ndarray, list[LayerTrace]]:
        if calib is None:
            calib = self.calibrate_quantized(x)
        logits, traces, _ = self._run_quantized(x, calib, noise)
        return logits, traces

    def _run_quantized(self, x, calib, noise):
        x = self._check_input(x)
        traces, new_calib = [], []
        ci = 0
        for li, layer in enumerate(self.netspec.layers):
            tr = LayerTrace(layer.name)
            if layer.kind == "conv":
                if layer.weight_bits > self.xbar.weight_bits_per_cell:
                    raise ConfigError(f"{layer.name}: quantized path models one ternary cell per weight "
                                      f"(weight_bits <= {self.xbar.weight_bits_per_cell})")
                if layer.is_vconv and layer.adc_bits < 2:
                    raise ConfigError(f"{layer.name}: vConv needs a signed ADC of at least 2 bits")
                cl = self.cadc_layer(layer)
                tern, wscale = ternarize(unroll_kernel(self.weights[f"{layer.name}.weight"]))
                if calib is None:
                    fmt = FixedPointFormat.for_range(float(np.max(np.abs(x))), layer.input_bits, bool(x.min() < 0))
                else:
                    fmt = calib[ci]["input_format"]
                cols = quantize_input(im2col(x, layer.conv), fmt)
                analog = np.stack([
                    mac_analog(tern[lo:hi], cols[:, lo:hi], fmt.scale * wscale)
                    for lo, hi in cl.partitioned.segment_map.segments
                ])
                if calib is None:
                    peak = float(np.max(np.abs(analog))) if layer.is_vconv else float(np.max(layer.fn(analog)))
                    full_scale = peak if peak > 0 else 1.0
                    new_calib.append({"input_format": fmt, "full_scale": full_scale})
                else:
                    full_scale = calib[ci]["full_scale"]
                adc = AdcModel(layer.adc_bits, full_scale, layer.fn, noise, signed=layer.is_vconv)
                codes = np.stack([
                    adc_convert_noisy(adc, analog[s], noise.rng(li, s) if noise else None)
                    for s in range(cl.s_count)
                ])
                acc = np.zeros(codes.shape[1:], dtype=np.int64)
                for s in range(cl.s_count):
                    acc = acc + codes[s]
                _, ho, wo = layer.out_shape
                pre = rows_to_fmap(acc * adc.lsb, x.shape[0], ho, wo, True)
                x = np.maximum(pre, 0.0) if layer.activation == "relu" else pre
                tr.psums = PsumTensor(codes.astype(np.float64), "post_adc")
                tr.codes, tr.s_count = codes, cl.s_count
                tr.output_positions = x.shape[0] * ho * wo
                tr.cache["adc"] = adc
                ci += 1
            elif layer.kind == "avgpool":
                x = _pool_fwd(x, layer.pool)
            else:
                flat = x.reshape(x.shape[0], -1)
                x = matmul(flat, self.weights[f"{layer.name}.weight"]) + self.weights[f"{layer.name}.bias"]
                if layer.activation == "relu":
                    x = np.maximum(x, 0.0)
            traces.append(tr)
        return x, traces, new_calib


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == labels))
