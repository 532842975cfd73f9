"""Energy/latency accounting for partitioned convolution layers.

This is bookkeeping, not circuit physics: every per-operation cost comes from
a :class:`CostParams` file. Components are ``crossbar``, ``adc``, ``buffer``,
``transfer``, ``accumulation`` and ``codec``; the last four only exist when a
layer is split over more than one crossbar (``S > 1``), since an unsplit layer
emits final outputs rather than psums.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import yaml

from .errors import ConfigError, ShapeError
from .partition import SegmentMap

COMPONENTS = ("crossbar", "adc", "buffer", "transfer", "accumulation", "codec")
CODEC_MODES = ("on", "off", "auto")


@dataclass
class CostParams:
    # energy, pJ
    e_mac_crossbar_per_op: float = 0.0028
    e_adc_convert: dict = field(default_factory=lambda: {1: 0.05, 2: 0.1, 3: 0.2, 4: 0.4, 5: 0.8})
    e_buffer_write_per_bit: float = 0.05
    e_buffer_read_per_bit: float = 0.04
    e_transfer_per_bit: float = 0.06
    e_add: float = 0.05
    e_accumulate_writeback: float = 0.0
    e_codec_compress_per_psum: float = 0.004
    e_codec_skip_check_per_psum: float = 0.002
    # latency
    clock_period_ns: float = 5.0
    crossbar_ns_per_activation: float = 16.0
    adc_ns_per_step: float = 16.0
    buffer_bits_per_cycle: int = 64
    transfer_word_bits: int = 32
    transfer_cycles_per_word: float = 1.0
    accumulate_cycles: float = 1.0
    accumulator_lanes: int = 1
    codec_cycles_per_psum: float = 1.0
    codec_lanes: int = 1

    def __post_init__(self):
        self.e_adc_convert = {int(k): float(v) for k, v in self.e_adc_convert.items()}
        for f in fields(self):
            v = getattr(self, f.name)
            vals = v.values() if isinstance(v, dict) else [v]
            if any(x < 0 for x in vals):
                raise ConfigError(f"cost parameter {f.name} must be >= 0, got {v}")
        for name in ("buffer_bits_per_cycle", "transfer_word_bits", "accumulator_lanes", "codec_lanes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"cost parameter {name} must be >= 1")

    def adc_energy(self, bits: int) -> float:
        try:
            return self.e_adc_convert[bits]
        except KeyError:
            raise ConfigError(f"no ADC energy configured for {bits}-bit conversions") from None

    @classmethod
    def from_dict(cls, d: dict) -> "CostParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known - {"notes"}
        if unknown:
            raise ConfigError(f"unknown cost parameter keys: {sorted(unknown)}")
        return cls(**{k: v for k, v in d.items() if k in known})

    @classmethod
    def load(cls, path: "str | Path | None" = None) -> "CostParams":
        """Load a YAML parameter file; ``None`` or ``"builtin:default"`` gives the calibrated defaults."""
        if path is None or str(path) in ("default", "builtin:default"):
            text = resources.files("cadc.data").joinpath("cost_params.yaml").read_text()
        else:
            text = Path(path).read_text()
        data = yaml.safe_load(text) or {}
        if not isinstance(data, dict):
            raise ConfigError("cost parameter file must be a mapping")
        return cls.from_dict(data)


@dataclass(frozen=True)
class LayerShape:
    """What the cost model needs to know about one conv layer."""

    name: str
    c_in: int
    k1: int
    k2: int
    c_out: int
    output_positions: int
    weight_bits: int = 2
    input_bits: int = 4
    adc_bits: int = 4

    @property
    def depth(self) -> int:
        return self.c_in * self.k1 * self.k2


@dataclass
class CostReport:
    energy: dict = field(default_factory=lambda: dict.fromkeys(COMPONENTS, 0.0))
    latency: dict = field(default_factory=lambda: dict.fromkeys(COMPONENTS, 0.0))
    stats: dict = field(default_factory=dict)

    @property
    def total_energy(self) -> float:
        return sum(self.energy[c] for c in COMPONENTS)

    @property
    def total_latency(self) -> float:
        return sum(self.latency[c] for c in COMPONENTS)

    def __add__(self, other: "CostReport") -> "CostReport":
        stats = dict(self.stats)
        for k, v in other.stats.items():
            if isinstance(v, (int, float)) and not isinstance(v, bool):
                stats[k] = stats.get(k, 0) + v
        return CostReport(
            {c: self.energy[c] + other.energy[c] for c in COMPONENTS},
            {c: self.latency[c] + other.latency[c] for c in COMPONENTS},
            stats,
        )

    def to_dict(self) -> dict:
        return {
            "energy_pj": dict(self.energy),
            "latency_ns": dict(self.latency),
            "total_energy_pj": self.total_energy,
            "total_latency_ns": self.total_latency,
            "stats": dict(self.stats),
        }


def _spread(total: int, blocks: int) -> tuple[int, int]:
    """Even split of ``total`` nonzeros: ``r`` blocks get ``q + 1``, the rest ``q``."""
    return divmod(total, blocks)


def layer_cost(layer: LayerShape, partition: SegmentMap, sparsity: float, codec: "str | bool",
               params: CostParams, adc_bits: int | None = None, weight_slices: int = 1,
               input_serial: int = 1) -> CostReport:
    """Cost of one layer given the fraction of exactly-zero psums.

    ``codec`` is ``"on"``, ``"off"`` or ``"auto"`` (compress only when the
    bitmask format is smaller than raw psums). Nonzeros are assumed spread as
    evenly as possible over the per-output blocks.
    """
    if not 0.0 <= sparsity <= 1.0:
        raise ShapeError(f"sparsity must be in [0, 1], got {sparsity}")
    if partition.depth != layer.depth:
        raise ShapeError(f"segment map covers D={partition.depth}, layer {layer.name} has D={layer.depth}")
    codec = {True: "on", False: "off"}.get(codec, codec)
    if codec not in CODEC_MODES:
        raise ConfigError(f"codec mode must be one of {CODEC_MODES}, got {codec!r}")
    bits = layer.adc_bits if adc_bits is None else adc_bits
    width = bits
    s = partition.s_count

    blocks = layer.output_positions * layer.c_out * weight_slices * input_serial
    psum_total = blocks * s
    nnz = int(round((1.0 - sparsity) * psum_total))
    q, r = _spread(nnz, blocks)
    raw_bits = psum_total * width
    compressed_bits = blocks * s + width * nnz

    has_psums = s > 1
    use_codec = has_psums and (codec == "on" or (codec == "auto" and compressed_bits < raw_bits))
    if not has_psums:
        moved_bits, adds, outputs = 0, 0, 0
    elif use_codec:
        moved_bits = compressed_bits
        adds = r * q + (blocks - r) * max(q - 1, 0)
        outputs = blocks
    else:
        moved_bits = raw_bits
        adds = psum_total - blocks
        outputs = blocks

    p = params
    activations = layer.output_positions * s * partition.col_tiles * input_serial
    macs = layer.output_positions * layer.depth * layer.c_out * weight_slices * input_serial
    rep = CostReport()
    rep.energy["crossbar"] = macs * p.e_mac_crossbar_per_op
    rep.energy["adc"] = psum_total * p.adc_energy(bits)
    rep.energy["buffer"] = moved_bits * (p.e_buffer_write_per_bit + p.e_buffer_read_per_bit)
    rep.energy["transfer"] = moved_bits * p.e_transfer_per_bit
    rep.energy["accumulation"] = adds * p.e_add + outputs * p.e_accumulate_writeback
    codec_psums = psum_total if use_codec else 0
    rep.energy["codec"] = codec_psums * (p.e_codec_compress_per_psum + p.e_codec_skip_check_per_psum)

    clk = p.clock_period_ns
    rep.latency["crossbar"] = activations * p.crossbar_ns_per_activation
    rep.latency["adc"] = activations * (1 << bits) * p.adc_ns_per_step
    rep.latency["buffer"] = math.ceil(2 * moved_bits / p.buffer_bits_per_cycle) * clk
    rep.latency["transfer"] = math.ceil(moved_bits / p.transfer_word_bits) * p.transfer_cycles_per_word * clk
    rep.latency["accumulation"] = adds * p.accumulate_cycles * clk / p.accumulator_lanes
    rep.latency["codec"] = codec_psums * p.codec_cycles_per_psum * clk / p.codec_lanes

    rep.stats = {
        "psum_total": psum_total,
        "psum_nonzero": nnz,
        "blocks": blocks,
        "moved_bits": moved_bits,
        "raw_bits": raw_bits if has_psums else 0,
        "adds": adds,
        "codec_used": use_codec,
    }
    return rep


def reduction_pct(cadc: float, vconv: float) -> float | None:
    """Percent saved relative to ``vconv``; ``None`` when the baseline is zero
    but CADC is not (a cost vConv never pays, such as the codec)."""
    if vconv == 0:
        return 0.0 if cadc == 0 else None
    return 100.0 * (1.0 - cadc / vconv)


def compare(cadc: CostReport, vconv: CostReport) -> dict:
    """Percent reductions of CADC relative to vConv, per component and combined."""
    out = {c: reduction_pct(cadc.energy[c], vconv.energy[c]) for c in COMPONENTS}
    out["buffer+transfer"] = reduction_pct(
        cadc.energy["buffer"] + cadc.energy["transfer"], vconv.energy["buffer"] + vconv.energy["transfer"]
    )
    out["total"] = reduction_pct(cadc.total_energy, vconv.total_energy)
    out["latency_total"] = reduction_pct(cadc.total_latency, vconv.total_latency)
    return out


@dataclass
class NetworkCost:
    cadc: CostReport
    vconv: CostReport
    layers: list  # per-layer dict rows
    reductions: dict

    def to_dict(self) -> dict:
        return {
            "cadc": self.cadc.to_dict(),
            "vconv": self.vconv.to_dict(),
            "reductions_pct": self.reductions,
            "layers": self.layers,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def layers_csv(self) -> str:
        buf = io.StringIO()
        cols = ["layer", "s_count", "sparsity", "psum_total", "codec_used"] + [
            f"{side}_{c}_pj" for side in ("vconv", "cadc") for c in COMPONENTS
        ]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for row in self.layers:
            w.writerow(row)
        return buf.getvalue()


def network_cost(layers: list, segment_maps: list, sparsities, params: CostParams,
                 codec: str = "auto", weight_bits_per_cell: int = 2) -> NetworkCost:
    """Sum of per-layer CADC and vConv costs plus percent reductions.

    ``sparsities`` is one value for all layers or one per layer.
    """
    if isinstance(sparsities, (int, float)):
        sparsities = [float(sparsities)] * len(layers)
    if not (len(layers) == len(segment_maps) == len(sparsities)):
        raise ShapeError("layers, segment maps and sparsities must have equal length")
    cadc_total, vconv_total = CostReport(), CostReport()
    rows = []
    for layer, smap, sp in zip(layers, segment_maps, sparsities):
        slices = math.ceil(layer.weight_bits / weight_bits_per_cell)
        c = layer_cost(layer, smap, sp, codec, params, weight_slices=slices)
        v = layer_cost(layer, smap, 0.0, "off", params, weight_slices=slices)
        cadc_total, vconv_total = cadc_total + c, vconv_total + v
        row = {
            "layer": layer.name,
            "s_count": smap.s_count,
            "sparsity": sp,
            "psum_total": c.stats["psum_total"],
            "codec_used": c.stats["codec_used"],
        }
        row.update({f"cadc_{k}_pj": val for k, val in c.energy.items()})
        row.update({f"vconv_{k}_pj": val for k, val in v.energy.items()})
        rows.append(row)
    return NetworkCost(cadc_total, vconv_total, rows, compare(cadc_total, vconv_total))


def params_as_dict(params: CostParams) -> dict:
    return asdict(params)
