import json

import numpy as np
import pytest

from cadc.codec import compress, zero_skip_accumulate
from cadc.cost import (COMPONENTS, CostParams, CostReport, LayerShape, compare, layer_cost, network_cost,
                       params_as_dict, reduction_pct)
from cadc.errors import ConfigError, ShapeError
from cadc.experiments import cost_report
from cadc.netspec import load_netspec
from cadc.partition import CrossbarConfig, segment_map_for


def _layer(c_in=64, c_out=8, pos=10, bits=4):
    return LayerShape("l", c_in, 3, 3, c_out, pos, adc_bits=bits)


def _even_blocks(blocks, s, nnz):
    """Explicit psum blocks with nonzeros spread as evenly as possible."""
    q, r = divmod(nnz, blocks)
    out = []
    for b in range(blocks):
        k = q + 1 if b < r else q
        out.append([1] * k + [0] * (s - k))
    return out


def test_builtin_params_load():
    p = CostParams.load()
    assert p.e_accumulate_writeback > 0
    assert p == CostParams.load("builtin:default")
    assert set(params_as_dict(p)) >= {"e_add", "clock_period_ns"}


def test_params_reject_unknown_and_negative(tmp_path):
    with pytest.raises(ConfigError):
        CostParams.from_dict({"e_addd": 1.0})
    with pytest.raises(ConfigError):
        CostParams(e_add=-1.0)
    with pytest.raises(ConfigError):
        CostParams(codec_lanes=0)
    with pytest.raises(ConfigError):
        CostParams().adc_energy(7)
    f = tmp_path / "p.yaml"
    f.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        CostParams.load(f)


@pytest.mark.parametrize("sparsity", [0.0, 0.3, 0.54, 0.9, 1.0])
def test_adds_and_bits_match_explicit_blocks(sparsity):
    layer = _layer(pos=7, c_out=3)
    smap = segment_map_for(layer.depth, 64, layer.c_out)
    rep = layer_cost(layer, smap, sparsity, "on", CostParams())
    blocks = _even_blocks(7 * 3, smap.s_count, rep.stats["psum_nonzero"])
    assert rep.stats["adds"] == sum(zero_skip_accumulate(b).adds_performed for b in blocks)
    assert rep.stats["moved_bits"] == sum(compress(b, layer.adc_bits).size_bits for b in blocks)
    off = layer_cost(layer, smap, sparsity, "off", CostParams())
    assert off.stats["adds"] == 7 * 3 * (smap.s_count - 1)
    assert off.stats["moved_bits"] == 7 * 3 * smap.s_count * layer.adc_bits


def test_energy_components_by_hand():
    p = CostParams(e_accumulate_writeback=0.5)
    layer = _layer(c_in=8, c_out=2, pos=3)  # D = 72 -> S = 2 on 64-row crossbars
    smap = segment_map_for(72, 64, 2)
    rep = layer_cost(layer, smap, 0.0, "off", p)
    blocks, psums = 3 * 2, 3 * 2 * 2
    assert rep.energy["crossbar"] == pytest.approx(3 * 72 * 2 * p.e_mac_crossbar_per_op)
    assert rep.energy["adc"] == pytest.approx(psums * p.e_adc_convert[4])
    assert rep.energy["buffer"] == pytest.approx(psums * 4 * (p.e_buffer_write_per_bit + p.e_buffer_read_per_bit))
    assert rep.energy["transfer"] == pytest.approx(psums * 4 * p.e_transfer_per_bit)
    assert rep.energy["accumulation"] == pytest.approx((psums - blocks) * p.e_add + blocks * 0.5)
    assert rep.energy["codec"] == 0.0


def test_single_segment_layer_has_no_psum_traffic():
    layer = LayerShape("l", 1, 3, 3, 8, 100)
    rep = layer_cost(layer, segment_map_for(9, 64, 8), 0.5, "on", CostParams.load())
    assert rep.energy["buffer"] == rep.energy["transfer"] == rep.energy["accumulation"] == 0.0
    assert rep.stats["codec_used"] is False


def test_auto_codec_only_when_smaller():
    layer = _layer()
    smap = segment_map_for(layer.depth, 64, layer.c_out)
    p = CostParams.load()
    dense = layer_cost(layer, smap, 0.1, "auto", p)
    assert not dense.stats["codec_used"]
    sparse = layer_cost(layer, smap, 0.6, "auto", p)
    assert sparse.stats["codec_used"]
    assert sparse.stats["moved_bits"] < sparse.stats["raw_bits"]


@pytest.mark.parametrize("codec", ["on", "off"])
def test_cost_monotone_in_sparsity(codec):
    layer = _layer(pos=50)
    smap = segment_map_for(layer.depth, 64, layer.c_out)
    p = CostParams.load()
    prev = None
    for sp in np.linspace(0, 1, 21):
        rep = layer_cost(layer, smap, float(sp), codec, p)
        if prev is not None:
            for c in COMPONENTS:
                assert rep.energy[c] <= prev.energy[c] + 1e-9
        prev = rep


def test_layer_cost_validation():
    layer = _layer()
    smap = segment_map_for(layer.depth, 64)
    with pytest.raises(ShapeError):
        layer_cost(layer, smap, 1.5, "on", CostParams())
    with pytest.raises(ShapeError):
        layer_cost(layer, segment_map_for(10, 64), 0.5, "on", CostParams())
    with pytest.raises(ConfigError):
        layer_cost(layer, smap, 0.5, "sometimes", CostParams())


def test_reduction_pct_edge_cases():
    assert reduction_pct(50.0, 100.0) == 50.0
    assert reduction_pct(0.0, 0.0) == 0.0
    assert reduction_pct(1.0, 0.0) is None


def test_compare_and_report_sum():
    a, b = CostReport(), CostReport()
    a.energy["buffer"], b.energy["buffer"] = 1.0, 4.0
    a.energy["transfer"], b.energy["transfer"] = 1.0, 0.0
    r = compare(a, b)
    assert r["buffer"] == 75.0 and r["transfer"] is None and r["buffer+transfer"] == 50.0
    assert (a + b).energy["buffer"] == 5.0


def test_calibration_point():
    ns = load_netspec("builtin:resnet18_cifar10")
    nc = cost_report(ns, CrossbarConfig(256), 0.54, CostParams.load(), "auto")
    assert abs(nc.reductions["accumulation"] - 47.9) <= 1.0
    assert abs(nc.reductions["buffer+transfer"] - 29.3) <= 1.0


def test_zero_sparsity_gives_zero_reduction():
    ns = load_netspec("builtin:resnet18_cifar10")
    nc = cost_report(ns, CrossbarConfig(256), 0.0, CostParams.load(), "auto")
    assert all(v == 0.0 for v in nc.reductions.values())


def test_network_cost_per_layer_sparsity_and_json():
    ns = load_netspec("builtin:resnet18_cifar10")
    n = len(ns.conv_layers)
    nc = cost_report(ns, CrossbarConfig(128), [0.5] * n, CostParams.load(), "on")
    d = json.loads(nc.to_json())
    assert len(d["layers"]) == n
    assert nc.layers_csv().count("\n") == n + 1
    with pytest.raises(ShapeError):
        network_cost([], [], [0.5], CostParams())
