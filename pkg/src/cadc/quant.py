"""Hardware-fidelity number path: ternary weights, fixed-point inputs, the
in-memory ADC whose transfer curve embeds f(), and Gaussian code noise.

Rounding is round-half-even throughout (``np.rint``). ADC noise is expressed
in LSB units and added to output codes after quantization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dendritic import DendriteFn
from .errors import ConfigError, NonFiniteError, RangeError, ShapeError

DEFAULT_NOISE_MEAN = -0.11
DEFAULT_NOISE_STD = 0.56


@dataclass(frozen=True)
class FixedPointFormat:
    bits: int
    signed: bool = False
    scale: float = 1.0

    def __post_init__(self):
        if self.bits < 1:
            raise ConfigError(f"bits must be >= 1, got {self.bits}")
        if not self.scale > 0:
            raise ConfigError(f"scale must be > 0, got {self.scale}")

    @property
    def code_min(self) -> int:
        return -(1 << (self.bits - 1)) if self.signed else 0

    @property
    def code_max(self) -> int:
        return (1 << (self.bits - 1)) - 1 if self.signed else (1 << self.bits) - 1

    @classmethod
    def for_range(cls, max_abs: float, bits: int, signed: bool = False) -> "FixedPointFormat":
        """Format whose largest code maps to ``max_abs``."""
        top = (1 << (bits - 1)) - 1 if signed else (1 << bits) - 1
        if top < 1:
            raise ConfigError(f"{bits}-bit {'signed' if signed else 'unsigned'} format has no positive code")
        return cls(bits, signed, float(max_abs) / top if max_abs > 0 else 1.0)


def quantize_input(x, fmt: FixedPointFormat):
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("cannot quantize non-finite input")
    codes = np.clip(np.rint(x / fmt.scale), fmt.code_min, fmt.code_max).astype(np.int64)
    return int(codes) if codes.ndim == 0 else codes


def dequantize(codes, fmt: FixedPointFormat):
    return np.asarray(codes, dtype=np.float64) * fmt.scale


def encode_ternary(weight, threshold: float):
    if not threshold > 0:
        raise ValueError(f"threshold must be > 0, got {threshold}")
    w = np.asarray(weight, dtype=np.float64)
    codes = np.where(w > threshold, 1, np.where(w < -threshold, -1, 0)).astype(np.int8)
    return int(codes) if codes.ndim == 0 else codes


def default_ternary_threshold(weights: np.ndarray) -> float:
    return 0.5 * float(np.mean(np.abs(weights)))


def ternary_scale(weights: np.ndarray, codes: np.ndarray) -> float:
    """Least-squares scale for fixed ternary codes: mean |w| over kept weights."""
    kept = codes != 0
    return float(np.mean(np.abs(np.asarray(weights)[kept]))) if kept.any() else 1.0


def ternarize(weights: np.ndarray, threshold: float | None = None) -> tuple[np.ndarray, float]:
    """Return ``(codes, scale)`` with ``codes * scale`` approximating ``weights``."""
    weights = np.asarray(weights, dtype=np.float64)
    if threshold is None:
        threshold = default_ternary_threshold(weights)
    if threshold <= 0:
        return np.zeros(weights.shape, dtype=np.int8), 1.0
    codes = encode_ternary(weights, threshold)
    return codes, ternary_scale(weights, codes)


def optimal_ternary_threshold(weights: np.ndarray) -> float:
    """Threshold minimizing ``||w - scale * ternary(w)||^2`` with the LSQ scale.

    Keeping the ``m`` largest magnitudes leaves an error of
    ``sum(w^2) - (sum of kept |w|)^2 / m``, so it suffices to maximize
    ``csum[m]^2 / m`` over the sorted magnitudes.
    """
    mags = np.sort(np.abs(np.asarray(weights, dtype=np.float64)).ravel())[::-1]
    if mags.size == 0 or mags[0] == 0:
        return 1.0
    csum = np.cumsum(mags)
    m = np.arange(1, mags.size + 1)
    best = int(np.argmax(csum * csum / m))
    # any threshold strictly between the last kept and first dropped magnitude
    nxt = mags[best + 1] if best + 1 < mags.size else 0.0
    return float(0.5 * (mags[best] + nxt)) if mags[best] > nxt else float(mags[best])


@dataclass(frozen=True)
class NoiseModel:
    mean: float = DEFAULT_NOISE_MEAN
    std: float = DEFAULT_NOISE_STD
    seed: int = 0

    def __post_init__(self):
        if self.std < 0:
            raise ConfigError(f"noise std must be >= 0, got {self.std}")

    def rng(self, *key: int) -> np.random.Generator:
        """Independent stream for a ``(layer, segment, ...)`` key.

        Splitting by index rather than draw order keeps results independent of
        evaluation schedule.
        """
        seq = np.random.SeedSequence(entropy=self.seed & ((1 << 64) - 1), spawn_key=tuple(int(k) for k in key))
        return np.random.Generator(np.random.PCG64(seq))

    def sample(self, n: int, *key: int) -> np.ndarray:
        return self.rng(*key).normal(self.mean, self.std, size=n) if self.std > 0 else np.full(n, float(self.mean))


def inject_noise(model: NoiseModel, code, code_range: tuple[int, int], rng: np.random.Generator | None = None):
    """``clamp(rint(code + e), lo, hi)`` with ``e ~ N(mean, std)``."""
    lo, hi = code_range
    codes = np.asarray(code, dtype=np.int64)
    if codes.size and (codes.min() < lo or codes.max() > hi):
        raise RangeError(f"codes outside [{lo}, {hi}]")
    if model.std == 0 and model.mean == 0:
        return int(codes) if codes.ndim == 0 else codes.copy()
    rng = rng if rng is not None else model.rng()
    e = rng.normal(model.mean, model.std, size=codes.shape) if model.std > 0 else np.full(codes.shape, model.mean)
    out = np.clip(np.rint(codes + e), lo, hi).astype(np.int64)
    return int(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class AdcModel:
    """In-memory ADC. Unsigned codes ``0..2^n-1`` apply ``fn`` before
    quantizing; ``signed=True`` is the vConv variant with codes
    ``-(2^(n-1))..2^(n-1)-1`` and no nonlinearity.
    """

    resolution_bits: int
    full_scale: float
    fn: DendriteFn = DendriteFn("relu")
    noise: NoiseModel | None = None
    signed: bool = False

    def __post_init__(self):
        if not 1 <= self.resolution_bits <= 5:
            raise ConfigError(f"ADC resolution must be 1-5 bits, got {self.resolution_bits}")
        if not self.full_scale > 0:
            raise ConfigError(f"full_scale must be > 0, got {self.full_scale}")
        if self.signed and self.resolution_bits < 2:
            raise ConfigError("signed ADC needs at least 2 bits")

    @property
    def code_range(self) -> tuple[int, int]:
        n = self.resolution_bits
        if self.signed:
            return -(1 << (n - 1)), (1 << (n - 1)) - 1
        return 0, (1 << n) - 1

    @property
    def lsb(self) -> float:
        return self.full_scale / self.code_range[1]


def adc_convert(model: AdcModel, analog):
    """Noise-free conversion of analog MAC value(s) to output codes."""
    a = np.asarray(analog, dtype=np.float64)
    lo, hi = model.code_range
    v = a if model.signed else model.fn(a)
    codes = np.clip(np.rint(v / model.lsb), lo, hi).astype(np.int64)
    if not model.signed and model.fn.kind != "identity":
        codes = np.where(a > 0, codes, 0)
    return int(codes) if codes.ndim == 0 else codes


def adc_convert_noisy(model: AdcModel, analog: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Convert then inject code noise.

    For nonlinear (unsigned, non-identity) modes the comparator never fires
    when the MAC is <= 0, so those conversions stay exactly 0; only
    conversions of positive MAC values receive noise.
    """
    codes = np.asarray(adc_convert(model, analog))
    if model.noise is None:
        return codes
    noisy = np.asarray(inject_noise(model.noise, codes, model.code_range, rng))
    if not model.signed and model.fn.kind != "identity":
        noisy = np.where(np.asarray(analog) > 0, noisy, 0)
    return noisy


def mac_analog(segment_weights: np.ndarray, input_codes: np.ndarray, input_scale: float = 1.0) -> np.ndarray:
    """Ideal crossbar MAC: integer dot product of ternary weights and input
    codes, scaled to analog units. Works on a single input vector ``(D,)`` or
    a batch ``(P, D)``.
    """
    w = np.asarray(segment_weights, dtype=np.int64)
    x = np.asarray(input_codes, dtype=np.int64)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"input codes {x.shape} do not match weights {w.shape}")
    return (x @ w).astype(np.float64) * input_scale
