"""Experiment runners behind the CLI: inference reports, crossbar sweeps,
noise sweeps, partition and cost reports.

Every runner returns plain dict rows so results can be written as JSON and
CSV; rows are sorted by their key columns before writing, which keeps report
files byte-identical across runs with the same config and seeds.
"""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .codec import compress_psum_codes
from .cost import CostParams, LayerShape, NetworkCost, network_cost
from .datasets import make_digits, make_separable
from .dendritic import sparsity_stats
from .errors import ConfigError
from .netspec import NetSpec, load_netspec
from .network import Network, accuracy
from .partition import CrossbarConfig, baseline_psum_count, psum_count, segment_map_for
from .quant import NoiseModel
from .training import TrainParams, train_toy


@dataclass
class ExperimentConfig:
    """One YAML file drives every subcommand; see README for the key list."""

    netspec: str = "builtin:toy_digits"
    crossbar_sizes: list = field(default_factory=lambda: [64, 128, 256])
    crossbar_size: int | None = None
    weight_bits_per_cell: int = 2
    dendrite_fns: list = field(default_factory=lambda: ["relu"])
    weights: str | None = None
    dataset: dict = field(default_factory=lambda: {"kind": "digits", "n_samples": 1000, "seed": 0})
    quantized: bool = False
    noise: dict = field(default_factory=lambda: {"enabled": False, "mean": -0.11, "std": 0.56, "seed": 0})
    noise_grid: list = field(default_factory=lambda: [
        {"mean": 0.0, "std": 0.0}, {"mean": -0.11, "std": 0.56}, {"mean": -0.11, "std": 1.12}])
    adc_bits_grid: list = field(default_factory=lambda: [4])
    noise_seeds: list = field(default_factory=lambda: [0, 1, 2])
    codec: str = "auto"
    cost_params: str = "builtin:default"
    sparsity: float | list = 0.54
    train: dict = field(default_factory=dict)
    seed: int = 0
    output_dir: str = "cadc-out"
    base_dir: str = "."

    def __post_init__(self):
        if not self.crossbar_sizes:
            raise ConfigError("crossbar_sizes must be non-empty")
        if any(int(n) < 1 for n in self.crossbar_sizes):
            raise ConfigError(f"crossbar sizes must be >= 1, got {self.crossbar_sizes}")
        if self.crossbar_size is None:
            self.crossbar_size = int(self.crossbar_sizes[0])
        if self.codec not in ("on", "off", "auto"):
            raise ConfigError(f"codec must be on/off/auto, got {self.codec!r}")
        if not self.noise_grid:
            raise ConfigError("noise_grid must be non-empty")

    @classmethod
    def load(cls, path: "str | Path | None", **overrides) -> "ExperimentConfig":
        data = {}
        base = "."
        if path is not None:
            data = yaml.safe_load(Path(path).read_text()) or {}
            if not isinstance(data, dict):
                raise ConfigError(f"config {path} is not a mapping")
            base = str(Path(path).resolve().parent)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        data.setdefault("base_dir", base)
        return cls(**data)

    def resolve(self, p: str | None) -> str | None:
        if p is None or p.startswith("builtin:") or p == "default":
            return p
        return str(Path(self.base_dir) / p)

    def load_netspec(self) -> NetSpec:
        return load_netspec(self.resolve(self.netspec))

    def load_cost_params(self) -> CostParams:
        return CostParams.load(self.resolve(self.cost_params))

    def xbar(self, n: int | None = None) -> CrossbarConfig:
        return CrossbarConfig(int(n or self.crossbar_size), weight_bits_per_cell=self.weight_bits_per_cell)

    def noise_model(self) -> NoiseModel | None:
        nz = self.noise or {}
        if not nz.get("enabled", False):
            return None
        return NoiseModel(float(nz.get("mean", -0.11)), float(nz.get("std", 0.56)), int(nz.get("seed", self.seed)))

    def train_params(self) -> TrainParams:
        return TrainParams.from_dict(self.train)


def make_dataset(spec: dict, netspec: NetSpec | None = None) -> tuple[np.ndarray, np.ndarray]:
    spec = dict(spec or {})
    kind = spec.pop("kind", "digits")
    if kind == "digits":
        return make_digits(**spec)
    if kind == "separable":
        if netspec is not None:
            spec.setdefault("shape", tuple(netspec.input_shape))
        return make_separable(**spec)
    raise ConfigError(f"unknown dataset kind {kind!r}")


# ---- per-layer reporting ---------------------------------------------------

def layer_shapes(netspec: NetSpec, batch: int = 1) -> list[LayerShape]:
    return [
        LayerShape(l.name, l.conv.c_in, l.conv.k1, l.conv.k2, l.conv.c_out, l.output_positions * batch,
                   l.weight_bits, l.input_bits, l.adc_bits)
        for l in netspec.conv_layers
    ]


def partition_rows(netspec: NetSpec, sizes: list, weight_bits_per_cell: int = 2, batch: int = 1) -> list[dict]:
    rows = []
    for n in sorted(int(v) for v in sizes):
        xbar = CrossbarConfig(n, weight_bits_per_cell=weight_bits_per_cell)
        for l in netspec.conv_layers:
            smap = segment_map_for(l.conv.unrolled_dim, n, l.conv.c_out, n, xbar.weight_slices(l.weight_bits))
            positions = l.output_positions * batch
            count = psum_count(l.conv, xbar, positions, l.weight_bits, l.input_bits)
            base = baseline_psum_count(l.conv, positions)
            rows.append({
                "crossbar_size": n,
                "layer": l.name,
                "kernel": f"{l.conv.c_in}x{l.conv.k1}x{l.conv.k2}x{l.conv.c_out}",
                "unrolled_rows": l.conv.unrolled_dim,
                "s_count": smap.s_count,
                "pad_rows": smap.pad_rows,
                "col_tiles": smap.col_tiles,
                "output_positions": positions,
                "psum_count": count,
                "baseline_count": base,
                "psum_ratio": count / base,
            })
    return rows


@dataclass
class InferenceResult:
    outputs: np.ndarray
    layers: list
    cost: NetworkCost
    accuracy: float | None = None

    def summary(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "layers": self.layers,
            "cost": {"reductions_pct": self.cost.reductions,
                     "cadc": self.cost.cadc.to_dict(), "vconv": self.cost.vconv.to_dict()},
        }


def run_inference(netspec: NetSpec, weights: dict, inputs: np.ndarray, xbar: CrossbarConfig,
                  labels: np.ndarray | None = None, quantized: bool = False, noise: NoiseModel | None = None,
                  codec: str = "auto", cost_params: CostParams | None = None) -> InferenceResult:
    """Forward a batch and collect per-layer psum counts, sparsity and cost.

    Sparsity is measured on post-f psums for CADC layers (ADC codes in the
    quantized path) and on raw psums for vConv layers.
    """
    net = Network(netspec, weights, xbar)
    if quantized:
        logits, traces = net.forward_quantized(inputs, noise=noise)
    else:
        logits, traces = net.forward(inputs)
    by_name = {t.name: t for t in traces}
    rows, shapes, smaps, sparsities = [], [], [], []
    for l, shape in zip(netspec.conv_layers, layer_shapes(netspec, batch=len(inputs))):
        tr = by_name[l.name]
        stats = sparsity_stats(tr.psums)
        smap = segment_map_for(l.conv.unrolled_dim, xbar.n_rows, l.conv.c_out, xbar.n_cols,
                               xbar.weight_slices(l.weight_bits))
        width = l.adc_bits
        if quantized:
            blocks = compress_psum_codes(tr.codes, width, signed=l.is_vconv)
            compressed_bits = sum(b.size_bits for b in blocks)
        else:
            nnz = int(np.count_nonzero(tr.psums.data))
            compressed_bits = tr.psums.data.shape[1] * tr.psums.data.shape[2] * smap.s_count + width * nnz
        rows.append({
            "layer": l.name,
            "mode": "vconv" if l.is_vconv else f"cadc-{l.fn.name}",
            "s_count": smap.s_count,
            "psum_count": psum_count(l.conv, xbar, tr.output_positions, l.weight_bits, l.input_bits),
            "psums_observed": int(tr.psums.data.size),
            "zero_fraction": stats["zero_fraction"],
            "raw_bits": int(tr.psums.data.size * width),
            "compressed_bits": int(compressed_bits),
        })
        shapes.append(shape)
        smaps.append(smap)
        sparsities.append(stats["zero_fraction"] if smap.s_count > 1 and not l.is_vconv else 0.0)
    cost = network_cost(shapes, smaps, sparsities, cost_params or CostParams.load(), codec,
                        xbar.weight_bits_per_cell)
    acc = accuracy(logits, labels) if labels is not None else None
    return InferenceResult(logits, rows, cost, acc)


def sweep_crossbars(netspec: NetSpec, weights: dict | None, x: np.ndarray, y: np.ndarray, sizes: list, fns: list,
                    cost_params: CostParams | None = None, codec: str = "auto", weight_bits_per_cell: int = 2,
                    train: TrainParams | None = None, seed: int = 0) -> list[dict]:
    """One row per (crossbar size, dendrite fn). With ``weights=None`` each cell
    is trained from scratch on ``(x, y)`` with ``train`` params.
    """
    rows = []
    params = cost_params or CostParams.load()
    for n in sorted(int(v) for v in sizes):
        xbar = CrossbarConfig(n, weight_bits_per_cell=weight_bits_per_cell)
        for fn in fns:
            fn = None if fn in (None, "none", "vconv") else fn
            spec = netspec.with_dendrite_fn(fn)
            w = weights
            if w is None:
                w = train_toy(spec, x, y, xbar, train, seed).weights
            res = run_inference(spec, w, x, xbar, y, codec=codec, cost_params=params)
            row = {
                "crossbar_size": n,
                "dendrite_fn": fn or "vconv",
                "accuracy": res.accuracy,
                "mean_zero_fraction": float(np.mean([r["zero_fraction"] for r in res.layers])),
                "accumulation_reduction_pct": res.cost.reductions["accumulation"],
                "buffer_transfer_reduction_pct": res.cost.reductions["buffer+transfer"],
                "total_energy_pj": res.cost.cadc.total_energy,
            }
            for r in res.layers:
                row[f"s_{r['layer']}"] = r["s_count"]
                row[f"psums_{r['layer']}"] = r["psum_count"]
                row[f"zero_fraction_{r['layer']}"] = r["zero_fraction"]
            rows.append(row)
    rows.sort(key=lambda r: (r["crossbar_size"], r["dendrite_fn"]))
    return rows


def noise_sweep(netspec: NetSpec, weights: dict, x: np.ndarray, y: np.ndarray, xbar: CrossbarConfig,
                adc_bits: list, grid: list, seeds: list) -> list[dict]:
    """Quantized accuracy, mean and std over seeds, per (ADC bits, noise) cell.

    ADC full scales and input formats are calibrated once per resolution on
    the noise-free pass over ``x``.
    """
    if not grid:
        raise ConfigError("noise grid must be non-empty")
    rows = []
    for bits in sorted(int(b) for b in adc_bits):
        spec = netspec.with_adc_bits(bits)
        net = Network(spec, weights, xbar)
        calib = net.calibrate_quantized(x)
        clean = accuracy(net.forward_quantized(x, calib)[0], y)
        for cell in grid:
            mean, std = float(cell.get("mean", 0.0)), float(cell.get("std", 0.0))
            accs = []
            for seed in seeds:
                nm = None if (mean == 0.0 and std == 0.0) else NoiseModel(mean, std, int(seed))
                accs.append(accuracy(net.forward_quantized(x, calib, nm)[0], y))
            rows.append({
                "adc_bits": bits,
                "noise_mean": mean,
                "noise_std": std,
                "accuracy_mean": statistics.mean(accs),
                "accuracy_std": statistics.pstdev(accs),
                "accuracy_noiseless": clean,
                "seeds": len(accs),
                "per_seed": " ".join(f"{a:.6f}" for a in accs),
            })
    rows.sort(key=lambda r: (r["adc_bits"], r["noise_std"], r["noise_mean"]))
    return rows


def cost_report(netspec: NetSpec, xbar: CrossbarConfig, sparsity, params: CostParams, codec: str = "auto",
                batch: int = 1) -> NetworkCost:
    shapes = layer_shapes(netspec, batch)
    smaps = [segment_map_for(s.depth, xbar.n_rows, s.c_out, xbar.n_cols,
                             math.ceil(s.weight_bits / xbar.weight_bits_per_cell)) for s in shapes]
    return network_cost(shapes, smaps, sparsity, params, codec, xbar.weight_bits_per_cell)


# ---- report writing ----------------------------------------------------------

def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def dumps_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def rows_to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    for r in rows[1:]:
        cols += [k for k in r if k not in cols]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(_clean(r))
    return buf.getvalue()


def write_reports(out_dir: "str | Path", summary: dict, tables: dict) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "summary.json"]
    written[0].write_text(dumps_json(summary))
    for name, rows in sorted(tables.items()):
        p = out / f"{name}.csv"
        p.write_text(rows_to_csv(rows))
        written.append(p)
    return written
