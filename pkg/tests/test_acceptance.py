"""Acceptance suite: one test per criterion, each at its stated tolerance and
runtime budget. Every test records a PASS/FAIL line that is printed in the
"acceptance criteria" section at the end of the pytest run.
"""

import csv
import io
import json
import math
import time
from contextlib import contextmanager

import numpy as np

from conftest import ACCEPTANCE_LINES
from oracles import quantize_scalar, segment_psums_bruteforce

from cadc.cli import main as cli_main
from cadc.codec import (compress, compression_ratio, decompress, deserialize_blocks, serialize_blocks,
                        zero_skip_accumulate)
from cadc.cost import CostParams
from cadc.datasets import make_digits
from cadc.dendritic import (KINDS, CadcLayer, DendriteFn, cadc_backward, cadc_forward, cadc_rows, segment_psums,
                            sparsity_stats, vconv_rows)
from cadc.experiments import cost_report, partition_rows
from cadc.netspec import load_netspec
from cadc.network import init_weights
from cadc.partition import CrossbarConfig
from cadc.quant import (DEFAULT_NOISE_MEAN, DEFAULT_NOISE_STD, AdcModel, NoiseModel, adc_convert, adc_convert_noisy,
                        inject_noise)
from cadc.tensor import ConvSpec, conv_reference, finite_diff_grad, fmap_to_rows, im2col
from cadc.tensorio import save_weights
from cadc.training import TrainParams, train_toy


@contextmanager
def criterion(number, title, budget_s):
    """Time the body, enforce the runtime budget and record a one-line verdict."""
    info = {}
    t0 = time.perf_counter()
    try:
        yield info
        elapsed = time.perf_counter() - t0
        assert elapsed < budget_s, f"runtime {elapsed:.2f}s exceeds budget {budget_s}s"
    except BaseException as e:
        elapsed = time.perf_counter() - t0
        ACCEPTANCE_LINES[number] = (f"FAIL  criterion {number}: {title} [{elapsed:.2f}s / {budget_s}s] "
                                    f"{type(e).__name__}: {str(e).splitlines()[0] if str(e) else ''}")
        raise
    detail = " ".join(f"{k}={v}" for k, v in info.items())
    ACCEPTANCE_LINES[number] = f"PASS  criterion {number}: {title} [{elapsed:.2f}s / {budget_s}s] {detail}"


def test_criterion_1_worked_example():
    with criterion(1, "worked example", 1.0) as info:
        ns = load_netspec("builtin:worked_layer")
        rows = partition_rows(ns, [64])
        assert rows[0]["kernel"] == "64x3x3x64"
        assert rows[0]["s_count"] == 9
        psums = [37, 0, 12, 0, 0, 201, 0, 0, 0]  # a, 0, b, 0, 0, c, 0, 0, 0
        block = compress(psums, 8)
        assert block.size_bits == 33
        ratio = compression_ratio(block)
        assert ratio == 72 / 33
        assert 2.1 <= round(ratio, 2) <= 2.2
        assert decompress(block) == psums
        assert zero_skip_accumulate(psums).adds_performed == 2
        assert zero_skip_accumulate([1] * 9).adds_performed == 8
        info.update(S=9, bits=block.size_bits, ratio=f"{ratio:.2f}", adds=2)


def _random_instance(rng):
    c_in = int(rng.integers(1, 9))
    k1, k2 = int(rng.integers(1, 6)), int(rng.integers(1, 6))
    c_out = int(rng.integers(1, 9))
    stride = int(rng.integers(1, 3))
    padding = int(rng.integers(0, 3))
    h0, w0 = max(1, k1 - 2 * padding), max(1, k2 - 2 * padding)
    h, w = int(rng.integers(h0, h0 + 3)), int(rng.integers(w0, w0 + 3))
    spec = ConvSpec(c_in, k1, k2, c_out, stride, padding)
    return spec, rng.normal(size=(c_in, h, w)), rng.normal(size=(c_in, k1, k2, c_out))


def test_criterion_2_oracle_equivalence():
    with criterion(2, "oracle equivalence", 60.0) as info:
        rng = np.random.default_rng(2)
        n_cases = 1000
        seen_n = set()
        worst = 0.0
        for i in range(n_cases):
            spec, x, k = _random_instance(rng)
            n = (4, 8, 16, 64)[i % 4]
            seen_n.add(n)
            layer = CadcLayer.from_kernel(k, spec, CrossbarConfig(n), "identity")
            cols = im2col(x, spec)
            y_v, psums = vconv_rows(layer, cols)
            # (a) segment sum against the direct convolution
            ref = fmap_to_rows(conv_reference(x, k, spec)[None])
            scale = max(np.max(np.abs(ref)), np.finfo(float).tiny)
            err = float(np.max(np.abs(psums.data.sum(axis=0) - ref))) / scale
            worst = max(worst, err)
            assert err <= 1e-9, f"case {i}: relative error {err}"
            # (b) identity CADC is bit-identical to vConv
            assert np.array_equal(cadc_rows(layer, cols)[0], y_v), f"case {i}: identity != vconv"
            # (c) CADC-ReLU against the scalar brute force
            layer.fn = DendriteFn("relu")
            y_r = cadc_rows(layer, cols)[0]
            brute = segment_psums_bruteforce(x, k, spec.stride, spec.padding, n)
            for p in range(y_r.shape[0]):
                for c in range(spec.c_out):
                    want = 0.0
                    for s in range(len(brute)):
                        want += max(brute[s][p][c], 0.0)
                    assert abs(y_r[p, c] - want) <= 1e-9 * max(1.0, abs(want)), f"case {i}: relu mismatch"
        assert seen_n == {4, 8, 16, 64}
        info.update(cases=n_cases, worst_rel_err=f"{worst:.1e}")


def test_criterion_3_codec_soundness():
    from test_codec import GOLDEN, _golden_module

    with criterion(3, "codec soundness", 30.0) as info:
        rng = np.random.default_rng(3)
        n_cases = 100_000
        widths = rng.integers(1, 17, size=n_cases)
        lengths = rng.integers(1, 65, size=n_cases)
        densities = rng.random(n_cases)
        signed_flags = rng.random(n_cases) < 0.3
        for i in range(n_cases):
            w, s = int(widths[i]), int(lengths[i])
            signed = bool(signed_flags[i]) and w >= 2
            lo, hi = (-(1 << (w - 1)), (1 << (w - 1)) - 1) if signed else (0, (1 << w) - 1)
            v = rng.integers(lo, hi + 1, size=s)
            v[rng.random(s) >= densities[i]] = 0
            values = v.tolist()
            block = compress(values, w, signed)
            assert decompress(block) == values
            assert block.size_bits == s + w * int(np.count_nonzero(v))
        # serialized golden streams: bytes regenerated now must equal the committed files
        mod = _golden_module()
        for signed, name in ((False, "codec_unsigned.bin"), (True, "codec_signed.bin")):
            data = (GOLDEN / name).read_bytes()
            assert mod.codec_stream(signed) == data
            assert serialize_blocks(deserialize_blocks(data, signed)) == data
        info.update(fuzz_cases=n_cases, golden_files=2)


def _grad_instance(rng, kind):
    """Small random layer whose psums all sit away from 0 (the kink of relu/tanh)."""
    while True:
        spec = ConvSpec(int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 4)),
                        int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(0, 2)))
        h = spec.k1 - 2 * spec.padding + int(rng.integers(0, 3))
        w = spec.k2 - 2 * spec.padding + int(rng.integers(0, 3))
        if h < 1 or w < 1:
            continue
        n = int(rng.choice([2, 3, 4, 8]))
        k = rng.normal(size=(spec.c_in, spec.k1, spec.k2, spec.c_out))
        x = rng.normal(size=(1, spec.c_in, h, w))
        fn = DendriteFn(kind, float(rng.uniform(0.2, 2.0))) if kind == "supralinear" else DendriteFn(kind)
        layer = CadcLayer.from_kernel(k, spec, CrossbarConfig(n), fn)
        raw = segment_psums(layer, im2col(x, spec)).data
        if np.min(np.abs(raw)) > 1e-3:
            return spec, n, fn, layer, k, x


def _rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


def test_criterion_4_gradient_correctness():
    with criterion(4, "gradient correctness", 60.0) as info:
        rng = np.random.default_rng(4)
        worst = {}
        counts = {"tanh": 100, "supralinear": 100, "relu": 50}
        for kind, count in counts.items():
            worst[kind] = 0.0
            for _ in range(count):
                spec, n, fn, layer, k, x = _grad_instance(rng, kind)
                y, _ = cadc_forward(layer, x)
                up = rng.normal(size=y.shape)
                grads = cadc_backward(layer, x, up)

                def loss_w(kv):
                    lyr = CadcLayer.from_kernel(kv, spec, CrossbarConfig(n), fn)
                    return float(np.sum(cadc_forward(lyr, x)[0] * up))

                def loss_x(xv):
                    return float(np.sum(cadc_forward(layer, xv)[0] * up))

                e = max(_rel_err(grads["grad_weights"], finite_diff_grad(loss_w, k, eps=1e-6)),
                        _rel_err(grads["grad_input"], finite_diff_grad(loss_x, x, eps=1e-6)))
                worst[kind] = max(worst[kind], e)
                assert e < 1e-4, f"{kind}: max relative error {e:.2e}"
        info.update(instances=sum(counts.values()),
                    **{f"worst_{k}": f"{v:.1e}" for k, v in worst.items()})


def test_criterion_5_adc_noise_fidelity():
    with criterion(5, "ADC/noise fidelity", 60.0) as info:
        nm = NoiseModel(DEFAULT_NOISE_MEAN, DEFAULT_NOISE_STD, seed=5)
        e = nm.sample(100_000, 0, 0)
        assert abs(e.mean() - (-0.11)) <= 0.02
        assert abs(e.std() - 0.56) <= 0.02
        # the injected stream is that same draw, added before rounding and clamping
        codes = np.full(100_000, 1000)
        noisy = inject_noise(nm, codes, (0, 1 << 20), nm.rng(0, 0))
        assert np.array_equal(noisy, np.rint(codes + e).astype(np.int64))

        grid = np.linspace(-2.0, 2.0, 10_000)
        checked = 0
        for kind in KINDS:
            for bits in (1, 2, 3, 4, 5):
                adc = AdcModel(bits, 1.7, DendriteFn(kind))
                lo, hi = adc.code_range
                got = adc_convert(adc, grid)
                fv = DendriteFn(kind)(grid)
                for a, v, c in zip(grid, fv, got):
                    want = 0 if (kind != "identity" and a <= 0) else quantize_scalar(float(v), adc.lsb, lo, hi)
                    assert c == want, f"{kind} {bits}b at {a}: {c} != {want}"
                    checked += 1
                if kind != "identity":
                    assert np.all(got[grid <= 0] == 0)
                    noisy_adc = AdcModel(bits, 1.7, DendriteFn(kind), NoiseModel(0.5, 2.0, seed=bits))
                    noisy = adc_convert_noisy(noisy_adc, grid, noisy_adc.noise.rng(0, bits))
                    assert np.all(noisy[grid <= 0] == 0)
        info.update(noise_mean=f"{e.mean():.4f}", noise_std=f"{e.std():.4f}", staircase_points=checked)


def test_criterion_6_sparsity_mechanism():
    with criterion(6, "sparsity mechanism", 60.0) as info:
        rng = np.random.default_rng(6)
        spec = ConvSpec(16, 3, 3, 16, padding=1)
        layer = CadcLayer.from_kernel(rng.normal(size=(16, 3, 3, 16)), spec, CrossbarConfig(32), "relu")
        x = rng.normal(size=(2, 16, 8, 8))
        y, post = cadc_forward(layer, x)
        assert post.data.size >= 10_000
        zf = sparsity_stats(post)["zero_fraction"]
        assert 0.45 <= zf <= 0.55, zf
        # post-f zero fraction never drops below the raw one, for every fn
        for trial in range(30):
            spec = ConvSpec(int(rng.integers(1, 6)), 3, 3, int(rng.integers(1, 6)), padding=1)
            k = rng.normal(size=(spec.c_in, 3, 3, spec.c_out))
            xi = rng.normal(size=(spec.c_in, 5, 5))
            xi[rng.random(xi.shape) < 0.3] = 0.0  # some exact zeros in the raw psums too
            for kind in KINDS:
                lyr = CadcLayer.from_kernel(k, spec, CrossbarConfig(int(rng.choice([4, 8, 16]))), kind)
                cols = im2col(xi, spec)
                raw = sparsity_stats(segment_psums(lyr, cols))["zero_fraction"]
                pf = sparsity_stats(cadc_rows(lyr, cols)[1])["zero_fraction"]
                assert pf >= raw, (kind, pf, raw)
        info.update(psums=post.data.size, relu_zero_fraction=f"{zf:.4f}")


def test_criterion_7_cost_calibration():
    with criterion(7, "cost-model calibration", 10.0) as info:
        ns = load_netspec("builtin:resnet18_cifar10")
        params = CostParams.load("builtin:default")
        nc = cost_report(ns, CrossbarConfig(256), 0.54, params, "auto")
        acc, bt = nc.reductions["accumulation"], nc.reductions["buffer+transfer"]
        assert abs(acc - 47.9) <= 1.0, acc
        assert abs(bt - 29.3) <= 1.0, bt
        zero = cost_report(ns, CrossbarConfig(256), 0.0, params, "auto")
        assert all(v == 0.0 for v in zero.reductions.values()), zero.reductions
        info.update(accumulation=f"{acc:.2f}%", buffer_transfer=f"{bt:.2f}%", zero_sparsity="all 0%")


def test_criterion_8_toy_training():
    with criterion(8, "toy training", 300.0) as info:
        ns = load_netspec("builtin:toy_digits")
        x, y = make_digits(1000, seed=0)
        xbar = CrossbarConfig(16)  # conv1 splits into 5 segments
        params = TrainParams(epochs=30, lr=0.05, momentum=0.9, batch_size=32)
        runs = {fn or "vconv": train_toy(ns.with_dendrite_fn(fn), x, y, xbar, params, seed=0)
                for fn in ("relu", None, "identity")}
        relu, vconv, ident = runs["relu"], runs["vconv"], runs["identity"]
        for name in ("relu", "vconv"):
            r = runs[name]
            epochs_to_80 = next((i + 1 for i, a in enumerate(r.train_accuracy) if a > 0.8), None)
            assert epochs_to_80 is not None and epochs_to_80 <= 100, f"{name} never exceeded 80%"
            assert r.final_accuracy > 0.8, f"{name} final accuracy {r.final_accuracy}"
        assert abs(relu.final_accuracy - vconv.final_accuracy) <= 0.05
        assert ident.loss == vconv.loss and ident.train_accuracy == vconv.train_accuracy
        assert all(np.array_equal(ident.weights[k], vconv.weights[k]) for k in vconv.weights)
        info.update(relu=f"{relu.final_accuracy:.3f}", vconv=f"{vconv.final_accuracy:.3f}",
                    identity_bit_identical=True)


def test_criterion_9_crossbar_sweep(tmp_path, capsys):
    with criterion(9, "crossbar sweep consistency", 120.0) as info:
        ns = load_netspec("builtin:toy_digits")
        save_weights(tmp_path / "w", init_weights(ns, 0))
        cfg = tmp_path / "sweep.yaml"
        cfg.write_text("crossbar_sizes: [64, 128, 256]\ndendrite_fns: [relu, vconv]\n"
                       "dataset: {kind: digits, n_samples: 200, seed: 0}\n")
        assert cli_main(["sweep", "--config", str(cfg), "--out-dir", str(tmp_path / "s"),
                         "--weights", str(tmp_path / "w")]) == 0
        capsys.readouterr()
        rows = list(csv.DictReader(io.StringIO((tmp_path / "s" / "sweep.csv").read_text())))
        assert [(r["crossbar_size"], r["dendrite_fn"]) for r in rows] == [
            (str(n), f) for n in (64, 128, 256) for f in ("relu", "vconv")]
        assert all(v != "" for r in rows for v in r.values())
        depths = {l.name: l.conv.unrolled_dim for l in ns.conv_layers}
        for r in rows:
            for name, d in depths.items():
                assert int(r[f"s_{name}"]) == math.ceil(d / int(r["crossbar_size"]))

        # the same table for a network whose layers actually split at these sizes
        assert cli_main(["partition-report", "--config", str(_write(tmp_path / "p.yaml",
                        "netspec: builtin:resnet18_cifar10\ncrossbar_sizes: [256, 64, 128]\n")),
                         "--out-dir", str(tmp_path / "p")]) == 0
        table = json.loads(capsys.readouterr().out)
        res = load_netspec("builtin:resnet18_cifar10")
        assert len(table) == 3 * len(res.conv_layers)
        by_layer = {}
        for r in table:
            assert r["s_count"] == math.ceil(r["unrolled_rows"] / r["crossbar_size"])
            by_layer.setdefault(r["layer"], []).append((r["crossbar_size"], r["psum_count"]))
        for counts in by_layer.values():
            counts.sort()
            assert [n for n, _ in counts] == [64, 128, 256]
            assert all(a[1] >= b[1] for a, b in zip(counts, counts[1:]))
        info.update(sweep_rows=len(rows), partition_rows=len(table))


def _write(path, text):
    path.write_text(text)
    return path
