"""Network descriptions loaded from YAML.

A netspec is an input shape plus an ordered layer list; each layer's input
shape is inferred from the previous layer's output::

    name: toy-digits
    input_shape: [1, 8, 8]
    layers:
      - {kind: conv, c_out: 8, kernel: 3, padding: 1}
      - {kind: conv, c_out: 16, kernel: 3, dendrite_fn: relu, adc_bits: 4}
      - {kind: avgpool, size: 2}
      - {kind: dense, out_features: 10}

Conv keys: ``c_out``, ``kernel`` (int or ``[k1, k2]``), ``stride`` (1),
``padding`` (0), ``dendrite_fn`` (``relu``; ``none`` selects vConv),
``activation`` (``relu`` or ``none``), ``adc_bits`` (4, range 1-5),
``input_bits`` (4), ``weight_bits`` (2). ``avgpool`` takes ``size``
(0 = global). ``dense`` takes ``out_features``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import yaml

from .dendritic import DendriteFn
from .errors import ConfigError, ShapeError
from .tensor import ConvSpec

VCONV_NAMES = (None, "none", "vconv")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    name: str
    in_shape: tuple
    out_shape: tuple
    conv: ConvSpec | None = None
    dendrite_fn: str | None = "relu"
    activation: str = "relu"
    adc_bits: int = 4
    input_bits: int = 4
    weight_bits: int = 2
    pool: int = 0
    out_features: int = 0

    @property
    def is_vconv(self) -> bool:
        return self.dendrite_fn in VCONV_NAMES

    @property
    def fn(self) -> DendriteFn:
        return DendriteFn("identity") if self.is_vconv else DendriteFn.parse(self.dendrite_fn)

    @property
    def output_positions(self) -> int:
        return self.out_shape[1] * self.out_shape[2] if self.kind == "conv" else 1


@dataclass(frozen=True)
class NetSpec:
    name: str
    input_shape: tuple
    layers: tuple = field(default_factory=tuple)

    @property
    def conv_layers(self) -> list[LayerSpec]:
        return [l for l in self.layers if l.kind == "conv"]

    @property
    def output_shape(self) -> tuple:
        return self.layers[-1].out_shape if self.layers else self.input_shape

    def with_dendrite_fn(self, fn: str | None) -> "NetSpec":
        """Same network with every conv layer switched to ``fn`` (``None`` = vConv)."""
        layers = tuple(replace(l, dendrite_fn=fn) if l.kind == "conv" else l for l in self.layers)
        return replace(self, layers=layers)

    def with_adc_bits(self, bits: int) -> "NetSpec":
        _check_adc_bits(bits, "override")
        layers = tuple(replace(l, adc_bits=bits) if l.kind == "conv" else l for l in self.layers)
        return replace(self, layers=layers)


def _check_adc_bits(bits, where):
    if not isinstance(bits, int) or not 1 <= bits <= 5:
        raise ConfigError(f"{where}: adc_bits must be an integer in [1, 5], got {bits!r}")


def _pair(v, key):
    if isinstance(v, int):
        return v, v
    if isinstance(v, (list, tuple)) and len(v) == 2:
        return int(v[0]), int(v[1])
    raise ConfigError(f"{key} must be an int or a pair, got {v!r}")


def build_netspec(data: dict) -> NetSpec:
    try:
        shape = tuple(int(v) for v in data["input_shape"])
        raw_layers = data["layers"]
    except (KeyError, TypeError) as e:
        raise ConfigError(f"netspec needs input_shape and layers: {e}") from None
    if len(shape) not in (1, 3):
        raise ConfigError(f"input_shape must be [c, h, w] or [features], got {list(shape)}")
    layers = []
    counts: dict[str, int] = {}
    for i, ld in enumerate(raw_layers):
        kind = ld.get("kind")
        idx = counts.get(kind, 0)
        counts[kind] = idx + 1
        name = ld.get("name", f"{kind}{idx}")
        where = f"layer {i} ({name})"
        if kind == "conv":
            if len(shape) != 3:
                raise ShapeError(f"{where}: conv needs a (c, h, w) input, got {shape}")
            k1, k2 = _pair(ld.get("kernel", 3), "kernel")
            spec = ConvSpec(shape[0], k1, k2, int(ld["c_out"]), int(ld.get("stride", 1)), int(ld.get("padding", 0)))
            ho, wo = spec.output_hw(shape[1], shape[2])
            fn = ld.get("dendrite_fn", "relu")
            fn = None if fn in VCONV_NAMES else str(fn)
            if fn is not None:
                DendriteFn.parse(fn)
            adc_bits = ld.get("adc_bits", 4)
            _check_adc_bits(adc_bits, where)
            out = (spec.c_out, ho, wo)
            layers.append(LayerSpec(
                "conv", name, shape, out, conv=spec, dendrite_fn=fn,
                activation=str(ld.get("activation", "relu")), adc_bits=adc_bits,
                input_bits=int(ld.get("input_bits", 4)), weight_bits=int(ld.get("weight_bits", 2)),
            ))
        elif kind == "avgpool":
            if len(shape) != 3:
                raise ShapeError(f"{where}: avgpool needs a (c, h, w) input")
            size = int(ld.get("size", 0))
            out = (shape[0], 1, 1) if size == 0 else (shape[0], shape[1] // size, shape[2] // size)
            if min(out) < 1:
                raise ShapeError(f"{where}: pool size {size} too large for {shape}")
            layers.append(LayerSpec("avgpool", name, shape, out, pool=size))
        elif kind == "dense":
            nout = int(ld["out_features"])
            out = (nout,)
            layers.append(LayerSpec("dense", name, shape, out, out_features=nout,
                                    activation=str(ld.get("activation", "none"))))
        else:
            raise ConfigError(f"{where}: unknown layer kind {kind!r}")
        shape = out
    return NetSpec(str(data.get("name", "net")), tuple(int(v) for v in data["input_shape"]), tuple(layers))


def load_netspec(path: "str | Path") -> NetSpec:
    """Load a YAML netspec; ``builtin:<name>`` resolves to a packaged file."""
    path = str(path)
    if path.startswith("builtin:"):
        text = resources.files("cadc.data").joinpath(path.split(":", 1)[1] + ".yaml").read_text()
    else:
        text = Path(path).read_text()
    data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigError(f"netspec {path} is not a mapping")
    return build_netspec(data)


def flat_features(shape: tuple) -> int:
    return math.prod(shape)
