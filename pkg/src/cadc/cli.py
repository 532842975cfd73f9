"""Command-line entry point: ``cadc <subcommand> [--config FILE] ...``.

Each subcommand writes ``summary.json`` plus CSV tables into ``--out-dir`` and
echoes the main table to stdout in ``--format`` (json or csv). Failures exit
nonzero with a one-line JSON object ``{"error": ..., "message": ...}`` on
stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import errors
from .cost import COMPONENTS
from .experiments import (ExperimentConfig, cost_report, dumps_json, make_dataset, noise_sweep, partition_rows,
                          rows_to_csv, run_inference, sweep_crossbars, write_reports)
from .network import init_weights
from .tensorio import load_weights, read_tensor, save_weights, write_tensor
from .training import train_toy

EXIT_CODES = {
    errors.ConfigError: 2,
    FileNotFoundError: 2,
    errors.ShapeError: 3,
    errors.CorruptBlockError: 4,
    errors.FormatError: 4,
    errors.RangeError: 5,
    errors.AccumulatorOverflowError: 5,
    errors.DivergenceError: 6,
    errors.NonFiniteError: 7,
}


def _weights(cfg: ExperimentConfig, netspec, cli_path):
    path = cli_path or cfg.resolve(cfg.weights)
    return load_weights(path) if path else None


def _fn_override(netspec, fn):
    if fn is None:
        return netspec
    return netspec.with_dendrite_fn(None if fn in ("none", "vconv") else fn)


def cmd_partition_report(cfg, args):
    ns = _fn_override(cfg.load_netspec(), args.fn)
    rows = partition_rows(ns, cfg.crossbar_sizes, cfg.weight_bits_per_cell)
    return {"netspec": ns.name, "crossbar_sizes": sorted(cfg.crossbar_sizes), "layers": rows}, {"partition": rows}


def cmd_infer(cfg, args):
    ns = _fn_override(cfg.load_netspec(), args.fn)
    weights = _weights(cfg, ns, args.weights)
    if weights is None:
        weights = init_weights(ns, cfg.seed)
    if args.inputs:
        x, y = read_tensor(args.inputs), None
    else:
        x, y = make_dataset(cfg.dataset, ns)
    res = run_inference(ns, weights, x, cfg.xbar(), y, quantized=cfg.quantized, noise=cfg.noise_model(),
                        codec=cfg.codec, cost_params=cfg.load_cost_params())
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_tensor(out / "outputs.cadc", res.outputs)
    summary = {"netspec": ns.name, "crossbar_size": cfg.crossbar_size, "quantized": cfg.quantized, **res.summary()}
    return summary, {"layers": res.layers, "cost_layers": res.cost.layers}


def cmd_sweep(cfg, args):
    ns = cfg.load_netspec()
    x, y = make_dataset(cfg.dataset, ns)
    rows = sweep_crossbars(ns, _weights(cfg, ns, args.weights), x, y, cfg.crossbar_sizes, cfg.dendrite_fns,
                           cfg.load_cost_params(), cfg.codec, cfg.weight_bits_per_cell, cfg.train_params(), cfg.seed)
    return {"netspec": ns.name, "rows": len(rows)}, {"sweep": rows}


def cmd_train_toy(cfg, args):
    ns = _fn_override(cfg.load_netspec(), args.fn)
    x, y = make_dataset(cfg.dataset, ns)
    res = train_toy(ns, x, y, cfg.xbar(), cfg.train_params(), cfg.seed)
    save_weights(Path(args.out_dir) / "weights", res.weights)
    curve = [{"epoch": i + 1, "train_accuracy": a, "loss": l}
             for i, (a, l) in enumerate(zip(res.train_accuracy, res.loss))]
    summary = {"netspec": ns.name, "crossbar_size": cfg.crossbar_size, "seed": cfg.seed,
               "final_accuracy": res.final_accuracy, "epochs": len(curve)}
    return summary, {"curve": curve}


def cmd_noise_sweep(cfg, args):
    ns = _fn_override(cfg.load_netspec(), args.fn)
    x, y = make_dataset(cfg.dataset, ns)
    weights = _weights(cfg, ns, args.weights)
    if weights is None:
        weights = train_toy(ns, x, y, cfg.xbar(), cfg.train_params(), cfg.seed).weights
    rows = noise_sweep(ns, weights, x, y, cfg.xbar(), cfg.adc_bits_grid, cfg.noise_grid, cfg.noise_seeds)
    return {"netspec": ns.name, "crossbar_size": cfg.crossbar_size, "rows": len(rows)}, {"noise": rows}


def cmd_cost_report(cfg, args):
    ns = cfg.load_netspec()
    nc = cost_report(ns, cfg.xbar(), cfg.sparsity, cfg.load_cost_params(), cfg.codec)
    components = [{
        "component": c,
        "vconv_energy_pj": nc.vconv.energy[c],
        "cadc_energy_pj": nc.cadc.energy[c],
        "energy_reduction_pct": nc.reductions[c],
        "vconv_latency_ns": nc.vconv.latency[c],
        "cadc_latency_ns": nc.cadc.latency[c],
    } for c in COMPONENTS]
    summary = {"netspec": ns.name, "crossbar_size": cfg.crossbar_size, "sparsity": cfg.sparsity,
               "codec": cfg.codec, **nc.to_dict()}
    summary.pop("layers")
    return summary, {"components": components, "layers": nc.layers}


COMMANDS = {
    "partition-report": (cmd_partition_report, "segment counts and psum counts per layer and crossbar size"),
    "infer": (cmd_infer, "run a network and report psum sparsity, counts and cost"),
    "sweep": (cmd_sweep, "crossbar size x dendrite fn sweep"),
    "train-toy": (cmd_train_toy, "train a toy network with SGD"),
    "noise-sweep": (cmd_noise_sweep, "quantized accuracy under ADC code noise"),
    "cost-report": (cmd_cost_report, "CADC vs vConv energy/latency comparison"),
}
MAIN_TABLE = {"partition-report": "partition", "infer": "layers", "sweep": "sweep", "train-toy": "curve",
              "noise-sweep": "noise", "cost-report": "components"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cadc", description="Crossbar-aware dendritic convolution simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="experiment YAML file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out-dir", help="output directory (default: config output_dir)")
        p.add_argument("--format", choices=("json", "csv"), default="json", help="stdout format")
        p.add_argument("--crossbar-size", type=int, help="override crossbar_size")
        p.add_argument("--fn", help="override every conv layer's dendrite fn (vconv for plain accumulation)")
        p.add_argument("--weights", help="weight archive directory")
        p.add_argument("--inputs", help="input tensor file (infer only)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config, seed=args.seed, crossbar_size=args.crossbar_size)
        args.out_dir = args.out_dir or str(Path(cfg.resolve(cfg.output_dir)))
        summary, tables = COMMANDS[args.command][0](cfg, args)
        write_reports(args.out_dir, {"command": args.command, **summary}, tables)
        table = tables[MAIN_TABLE[args.command]]
        sys.stdout.write(rows_to_csv(table) if args.format == "csv" else dumps_json(table))
        return 0
    except (errors.CadcError, FileNotFoundError, OSError, KeyError, ValueError, TypeError) as e:
        code = next((c for cls, c in EXIT_CODES.items() if isinstance(e, cls)), 1)
        sys.stderr.write(json.dumps({"error": type(e).__name__, "message": str(e), "exit_code": code}) + "\n")
        return code


if __name__ == "__main__":
    sys.exit(main())
