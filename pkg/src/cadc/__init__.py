"""Crossbar-aware dendritic convolution (CADC) simulator for in-memory computing."""

from .codec import CompressedPsumBlock, compress, decompress, zero_skip_accumulate
from .dendritic import CadcLayer, DendriteFn, cadc_forward, vconv_forward
from .partition import CrossbarConfig, SegmentMap, partition, reconstruct, segment_map_for
from .quant import AdcModel, FixedPointFormat, NoiseModel, adc_convert, ternarize
from .tensor import ConvSpec, conv_reference, im2col

__version__ = "0.1.0"

__all__ = [
    "AdcModel", "CadcLayer", "CompressedPsumBlock", "ConvSpec", "CrossbarConfig", "DendriteFn",
    "FixedPointFormat", "NoiseModel", "SegmentMap", "adc_convert", "cadc_forward", "compress",
    "conv_reference", "decompress", "im2col", "partition", "reconstruct", "segment_map_for",
    "ternarize", "vconv_forward", "zero_skip_accumulate",
]
