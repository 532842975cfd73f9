"""Zero-compression of psum vectors and zero-skipping accumulation.

One block holds the ``S`` psum codes for one (output position, output
channel). A block is a presence bitmask (bit ``s`` set iff psum ``s`` is
nonzero, LSB-first over the segment index) plus the nonzero codes in
ascending segment order, so it costs ``S + width * nnz`` bits.

Serialized record, repeated per block, all multi-byte fields little-endian::

    u16 s_count | u8 width_bits | bitmask (ceil(S/8) bytes) | payload

The payload packs each code into ``width_bits`` bits, LSB-first, and is
zero-padded to a byte boundary so every record starts byte-aligned. Signed
codes are stored two's complement; signedness is not recorded in the stream
and must be supplied when decoding.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import AccumulatorOverflowError, CorruptBlockError, RangeError

ACC_MIN = -(1 << 31)
ACC_MAX = (1 << 31) - 1
_HEADER = struct.Struct("<HB")


def code_range(width_bits: int, signed: bool) -> tuple[int, int]:
    if signed:
        return -(1 << (width_bits - 1)), (1 << (width_bits - 1)) - 1
    return 0, (1 << width_bits) - 1


@dataclass(frozen=True)
class CompressedPsumBlock:
    s_count: int
    width_bits: int
    bitmask: int
    payload: tuple[int, ...]
    signed: bool = False

    @property
    def nnz(self) -> int:
        return len(self.payload)

    @property
    def size_bits(self) -> int:
        return self.s_count + self.width_bits * self.nnz

    def validate(self) -> None:
        if self.s_count < 1:
            raise CorruptBlockError(f"s_count must be >= 1, got {self.s_count}")
        if not 1 <= self.width_bits <= 32:
            raise CorruptBlockError(f"width_bits must be 1-32, got {self.width_bits}")
        if self.bitmask < 0 or self.bitmask >> self.s_count:
            raise CorruptBlockError(f"bitmask has bits set beyond s_count={self.s_count}")
        pop = bin(self.bitmask).count("1")
        if pop != len(self.payload):
            raise CorruptBlockError(f"bitmask popcount {pop} != payload length {len(self.payload)}")
        lo, hi = code_range(self.width_bits, self.signed)
        for i, v in enumerate(self.payload):
            if v == 0:
                raise CorruptBlockError(f"payload entry {i} is zero but flagged present")
            if not lo <= v <= hi:
                raise CorruptBlockError(f"payload entry {i} = {v} outside [{lo}, {hi}]")


def compress(psums: Sequence[int], width_bits: int = 8, signed: bool = False) -> CompressedPsumBlock:
    lo, hi = code_range(width_bits, signed)
    mask = 0
    payload = []
    for s, v in enumerate(psums):
        v = int(v)
        if not lo <= v <= hi:
            raise RangeError(f"psum {s} = {v} not representable in {width_bits} bits ({lo}..{hi})")
        if v:
            mask |= 1 << s
            payload.append(v)
    return CompressedPsumBlock(len(psums), width_bits, mask, tuple(payload), signed)


def decompress(block: CompressedPsumBlock) -> list[int]:
    block.validate()
    out = [0] * block.s_count
    it = iter(block.payload)
    for s in range(block.s_count):
        if block.bitmask >> s & 1:
            out[s] = next(it)
    return out


def compression_ratio(block: CompressedPsumBlock, s_count: int | None = None,
                      width_bits: int | None = None) -> float:
    """Uncompressed bits over compressed bits; below 1 when compression loses."""
    s = block.s_count if s_count is None else s_count
    w = block.width_bits if width_bits is None else width_bits
    return (s * w) / block.size_bits


@dataclass(frozen=True)
class AccumulatorReport:
    sum: int
    adds_performed: int
    psums_skipped: int


def _checked(acc: int) -> int:
    if not ACC_MIN <= acc <= ACC_MAX:
        raise AccumulatorOverflowError(f"accumulator value {acc} exceeds 32-bit signed range")
    return acc


def zero_skip_accumulate(psums: Iterable[int]) -> AccumulatorReport:
    """Sum only the nonzero psums; the first nonzero loads the register."""
    acc = 0
    adds = skipped = 0
    loaded = False
    for v in psums:
        v = int(v)
        if v == 0:
            skipped += 1
            continue
        if loaded:
            acc = _checked(acc + v)
            adds += 1
        else:
            acc = _checked(v)
            loaded = True
    return AccumulatorReport(acc, adds, skipped)


def accumulate_block(block: CompressedPsumBlock) -> AccumulatorReport:
    """Zero-skip accumulation driven directly by a compressed block."""
    block.validate()
    acc = 0
    for i, v in enumerate(block.payload):
        acc = _checked(acc + v) if i else _checked(v)
    return AccumulatorReport(acc, max(block.nnz - 1, 0), block.s_count - block.nnz)


def compress_psum_codes(codes: np.ndarray, width_bits: int, signed: bool = False) -> list[CompressedPsumBlock]:
    """One block per (position, channel) of an ``(S, P, C)`` code tensor, row-major in (p, c)."""
    codes = np.asarray(codes)
    s, p, c = codes.shape
    flat = codes.reshape(s, p * c).T
    return [compress(col.tolist(), width_bits, signed) for col in flat]


def _pack(values: Iterable[int], width: int) -> bytes:
    acc = 0
    nbits = 0
    mask = (1 << width) - 1
    for v in values:
        acc |= (v & mask) << nbits
        nbits += width
    return acc.to_bytes((nbits + 7) // 8, "little")


def serialize_block(block: CompressedPsumBlock) -> bytes:
    block.validate()
    if block.s_count > 0xFFFF or block.width_bits > 0xFF:
        raise RangeError(f"block header ({block.s_count}, {block.width_bits}) does not fit u16/u8")
    mask_bytes = block.bitmask.to_bytes((block.s_count + 7) // 8, "little")
    return _HEADER.pack(block.s_count, block.width_bits) + mask_bytes + _pack(block.payload, block.width_bits)


def serialize_blocks(blocks: Iterable[CompressedPsumBlock]) -> bytes:
    return b"".join(serialize_block(b) for b in blocks)


def deserialize_blocks(data: bytes, signed: bool = False) -> list[CompressedPsumBlock]:
    blocks = []
    pos = 0
    n = len(data)
    while pos < n:
        if pos + _HEADER.size > n:
            raise CorruptBlockError(f"truncated header at byte {pos}")
        s_count, width = _HEADER.unpack_from(data, pos)
        pos += _HEADER.size
        if s_count == 0 or not 1 <= width <= 32:
            raise CorruptBlockError(f"invalid header (s_count={s_count}, width={width}) at byte {pos - 3}")
        mlen = (s_count + 7) // 8
        if pos + mlen > n:
            raise CorruptBlockError(f"truncated bitmask at byte {pos}")
        mask = int.from_bytes(data[pos : pos + mlen], "little")
        pos += mlen
        if mask >> s_count:
            raise CorruptBlockError("nonzero bitmask padding bits")
        nnz = bin(mask).count("1")
        plen = (nnz * width + 7) // 8
        if pos + plen > n:
            raise CorruptBlockError(f"truncated payload at byte {pos}")
        packed = int.from_bytes(data[pos : pos + plen], "little")
        pos += plen
        if packed >> (nnz * width):
            raise CorruptBlockError("nonzero payload padding bits")
        vmask = (1 << width) - 1
        payload = []
        for i in range(nnz):
            v = packed >> (i * width) & vmask
            if signed and v >> (width - 1):
                v -= 1 << width
            payload.append(v)
        block = CompressedPsumBlock(s_count, width, mask, tuple(payload), signed)
        block.validate()
        blocks.append(block)
    return blocks
