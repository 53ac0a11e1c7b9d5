"""Round-to-nearest-even emulation of BF16 / FP16 / FP32 on float64 data."""

from __future__ import annotations

import enum

import numpy as np

from .errors import ConfigError, DataError


class PrecisionKind(str, enum.Enum):
    BF16 = "bf16"
    FP16 = "fp16"
    FP32 = "fp32"

    @classmethod
    def parse(cls, value: "str | PrecisionKind") -> "PrecisionKind":
        if isinstance(value, cls):
            return value
        aliases = {"bfloat16": "bf16", "float16": "fp16", "half": "fp16", "float32": "fp32", "single": "fp32"}
        key = str(value).lower()
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ConfigError(f"unknown precision {value!r}; expected bf16, fp16 or fp32") from None

    @property
    def exponent_bits(self) -> int:
        return _LAYOUT[self][0]

    @property
    def mantissa_bits(self) -> int:
        return _LAYOUT[self][1]


_LAYOUT = {PrecisionKind.BF16: (8, 7), PrecisionKind.FP16: (5, 10), PrecisionKind.FP32: (8, 23)}


def round_to_float_grid(x, exponent_bits: int, mantissa_bits: int) -> np.ndarray:
    """Round float64 values onto an IEEE-style (E, M) grid.

    Nearest-even, gradual underflow, and overflow to signed infinity once a
    value rounds past the largest finite number. NaN and Inf pass through.
    """
    x = np.asarray(x, dtype=np.float64)
    bias = 2 ** (exponent_bits - 1) - 1
    e_min = 1 - bias
    e_max = bias
    max_finite = (2.0 - 2.0**-mantissa_bits) * 2.0**e_max

    with np.errstate(invalid="ignore", over="ignore"):
        _, e = np.frexp(x)
        # frexp mantissa is in [0.5, 1): the unbiased exponent is e - 1
        e = np.maximum(e - 1, e_min)
        step = np.ldexp(1.0, e - mantissa_bits)
        out = np.rint(x / step) * step
        out = np.where(np.abs(out) > max_finite, np.copysign(np.inf, x), out)
    return np.where(np.isfinite(x), out, x)


def emulate_precision(x, kind: "PrecisionKind | str"):
    """Round ``x`` to the nearest value representable in ``kind``.

    Scalars in, float out; arrays in, float64 arrays out.
    """
    kind = PrecisionKind.parse(kind)
    arr = np.asarray(x, dtype=np.float64)
    if np.isnan(arr).any():
        raise DataError("emulate_precision expects finite input, got NaN")
    out = round_to_float_grid(arr, kind.exponent_bits, kind.mantissa_bits)
    if np.ndim(x) == 0:
        return float(out)
    return out


def cast(x, kind: "PrecisionKind | str | None") -> np.ndarray:
    """Like :func:`emulate_precision` but tolerant of NaN/Inf; ``None`` is identity."""
    arr = np.asarray(x, dtype=np.float64)
    if kind is None:
        return arr
    kind = PrecisionKind.parse(kind)
    return round_to_float_grid(arr, kind.exponent_bits, kind.mantissa_bits)
