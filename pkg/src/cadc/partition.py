"""Kernel partitioning across size-limited crossbars.

An unrolled ``(D, c_out)`` kernel is cut into ``S = ceil(D / n_rows)``
contiguous row segments; each segment lives on its own crossbar and emits one
psum per output position and output channel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import ConvSpec


@dataclass(frozen=True)
class CrossbarConfig:
    n_rows: int
    n_cols: int | None = None
    weight_bits_per_cell: int = 2
    adc_resolution_bits: int = 4

    def __post_init__(self):
        if self.n_cols is None:
            object.__setattr__(self, "n_cols", self.n_rows)
        if self.n_rows < 1 or self.n_cols < 1:
            raise ConfigError(f"crossbar dims must be >= 1, got {self.n_rows}x{self.n_cols}")
        if self.weight_bits_per_cell < 1:
            raise ConfigError("weight_bits_per_cell must be >= 1")
        if not 1 <= self.adc_resolution_bits <= 5:
            raise ConfigError(f"adc_resolution_bits must be in [1, 5], got {self.adc_resolution_bits}")

    def weight_slices(self, weight_bits: int) -> int:
        return math.ceil(weight_bits / self.weight_bits_per_cell)


@dataclass(frozen=True)
class SegmentMap:
    segments: tuple[tuple[int, int], ...]
    n_rows: int
    pad_rows: int
    col_tiles: int = 1

    @property
    def s_count(self) -> int:
        return len(self.segments)

    @property
    def depth(self) -> int:
        """Unrolled input dimension D covered by the map."""
        return self.segments[-1][1] if self.segments else 0

    def validate(self) -> None:
        if not self.segments:
            raise ShapeError("segment map is empty")
        pos = 0
        for i, (lo, hi) in enumerate(self.segments):
            if lo != pos or hi <= lo:
                raise ShapeError(f"segment {i} = [{lo}, {hi}) is not contiguous from row {pos}")
            last = i == len(self.segments) - 1
            if hi - lo > self.n_rows or (not last and hi - lo != self.n_rows):
                raise ShapeError(f"segment {i} has {hi - lo} rows, crossbar holds {self.n_rows}")
            pos = hi
        last_rows = self.segments[-1][1] - self.segments[-1][0]
        if self.pad_rows != self.n_rows - last_rows:
            raise ShapeError(f"pad_rows={self.pad_rows} inconsistent with last segment of {last_rows} rows")


@dataclass
class PartitionedKernel:
    """Per-segment ``(n_rows, c_out)`` weight blocks; the last block is zero-padded."""

    blocks: list[np.ndarray]
    segment_map: SegmentMap
    c_out: int = field(init=False)

    def __post_init__(self):
        self.c_out = self.blocks[0].shape[1] if self.blocks else 0

    @property
    def s_count(self) -> int:
        return self.segment_map.s_count

    def segment_rows(self, s: int) -> np.ndarray:
        """Unpadded weight rows of segment ``s``."""
        lo, hi = self.segment_map.segments[s]
        return self.blocks[s][: hi - lo]


def segment_map_for(depth: int, n_rows: int, c_out: int = 1, n_cols: int | None = None,
                    weight_slices: int = 1) -> SegmentMap:
    if depth < 1:
        raise ShapeError(f"unrolled dimension must be >= 1, got {depth}")
    n_cols = n_rows if n_cols is None else n_cols
    s = math.ceil(depth / n_rows)
    segments = tuple((i * n_rows, min(depth, (i + 1) * n_rows)) for i in range(s))
    return SegmentMap(
        segments=segments,
        n_rows=n_rows,
        pad_rows=s * n_rows - depth,
        col_tiles=math.ceil(c_out * weight_slices / n_cols),
    )


def num_segments(spec: ConvSpec, xbar: CrossbarConfig) -> int:
    return math.ceil(spec.unrolled_dim / xbar.n_rows)


def partition(kernel: np.ndarray, xbar: CrossbarConfig, weight_bits: int | None = None) -> PartitionedKernel:
    kernel = np.asarray(kernel)
    if kernel.ndim != 2:
        raise ShapeError(f"partition expects an unrolled (D, c_out) kernel, got shape {kernel.shape}")
    depth, c_out = kernel.shape
    slices = xbar.weight_slices(weight_bits if weight_bits is not None else xbar.weight_bits_per_cell)
    smap = segment_map_for(depth, xbar.n_rows, c_out, xbar.n_cols, slices)
    blocks = []
    for lo, hi in smap.segments:
        block = np.zeros((xbar.n_rows, c_out), dtype=kernel.dtype)
        block[: hi - lo] = kernel[lo:hi]
        blocks.append(block)
    return PartitionedKernel(blocks, smap)


def reconstruct(pk: PartitionedKernel) -> np.ndarray:
    smap = pk.segment_map
    smap.validate()
    if len(pk.blocks) != smap.s_count:
        raise ShapeError(f"{len(pk.blocks)} blocks for a {smap.s_count}-segment map")
    for i, block in enumerate(pk.blocks):
        if block.shape != (smap.n_rows, pk.c_out):
            raise ShapeError(f"block {i} has shape {block.shape}, expected {(smap.n_rows, pk.c_out)}")
    return np.concatenate([pk.segment_rows(s) for s in range(smap.s_count)], axis=0)


def psum_count(spec: ConvSpec, xbar: CrossbarConfig, output_positions: int, weight_bits: int = 2,
               input_bits: int = 4, input_bit_serial: bool = False) -> int:
    """Number of psums a layer emits for ``output_positions`` output pixels."""
    if output_positions < 1 or weight_bits < 1 or input_bits < 1:
        raise ShapeError("psum_count arguments must be positive")
    serial = input_bits if input_bit_serial else 1
    return output_positions * spec.c_out * num_segments(spec, xbar) * xbar.weight_slices(weight_bits) * serial


def baseline_psum_count(spec: ConvSpec, output_positions: int) -> int:
    """Unpartitioned reference: one value per output pixel and channel."""
    return output_positions * spec.c_out
