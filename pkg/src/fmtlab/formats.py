"""Low-bit element formats, FP codebooks and the format registry.

Registered formats::

    name     element  block  scale
    MXFP8    E4M3     32     UE8M0 (round up)
    MXINT8   INT8     32     UE8M0 (round up)
    MXFP6    E2M3     32     UE8M0 (round up)
    MXINT6   INT6     32     UE8M0 (round up)
    MXFP4    E2M1     32     UE8M0 (round up)
    MXINT4   INT4     32     UE8M0 (round up)
    NVFP4    E2M1     16     E4M3 per block + FP32 per tensor
    NVINT4   INT4     16     E4M3 per block + FP32 per tensor
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .errors import ConfigError


class SpecialCodes(str, enum.Enum):
    NONE = "none"
    # only S.1..1.1..1 is NaN (OCP E4M3 "fn" convention)
    ALL_ONES = "all_ones"
    # whole top exponent reserved for Inf/NaN
    IEEE = "ieee"


class ScaleMode(str, enum.Enum):
    UE8M0_ROUND_UP = "ue8m0_round_up"
    UE8M0_ROUND_DOWN = "ue8m0_round_down"
    E4M3_TWO_LEVEL = "e4m3_two_level"
    EXACT = "exact"

    @property
    def is_ue8m0(self) -> bool:
        return self in (ScaleMode.UE8M0_ROUND_UP, ScaleMode.UE8M0_ROUND_DOWN)


@dataclass(frozen=True)
class FpLayout:
    exponent_bits: int
    mantissa_bits: int
    bias: int
    special_codes: SpecialCodes = SpecialCodes.NONE

    def __post_init__(self):
        if self.exponent_bits < 1:
            raise ConfigError(f"FP layout needs at least one exponent bit, got E={self.exponent_bits}")
        if self.mantissa_bits < 0:
            raise ConfigError(f"negative mantissa width M={self.mantissa_bits}")
        object.__setattr__(self, "special_codes", SpecialCodes(self.special_codes))

    @property
    def name(self) -> str:
        return f"E{self.exponent_bits}M{self.mantissa_bits}"

    @property
    def n_min(self) -> float:
        """Smallest positive normal."""
        return 2.0 ** (1 - self.bias)

    @property
    def s_min(self) -> float:
        """Subnormal spacing."""
        return self.n_min * 2.0 ** (-self.mantissa_bits)

    @property
    def q_max(self) -> float:
        return float(build_codebook(self).values[-1])

    @property
    def min_positive(self) -> float:
        return self.s_min if self.mantissa_bits > 0 else self.n_min

    @property
    def dynamic_range(self) -> float:
        return self.q_max / self.min_positive

    @property
    def bits(self) -> int:
        return 1 + self.exponent_bits + self.mantissa_bits

    @property
    def q_ref(self) -> float:
        return self.q_max

    def to_dict(self) -> dict:
        return {
            "kind": "fp",
            "name": self.name,
            "exponent_bits": self.exponent_bits,
            "mantissa_bits": self.mantissa_bits,
            "bias": self.bias,
            "special_codes": self.special_codes.value,
            "q_max": self.q_max,
            "n_min": self.n_min,
            "s_min": self.s_min,
            "min_positive": self.min_positive,
            "dynamic_range": self.dynamic_range,
        }


@dataclass(frozen=True)
class IntLayout:
    bits: int
    symmetric: bool = True

    def __post_init__(self):
        if self.bits < 2:
            raise ConfigError(f"INT layout needs at least 2 bits, got {self.bits}")

    @property
    def name(self) -> str:
        return f"INT{self.bits}"

    @property
    def q_max(self) -> int:
        return 2 ** (self.bits - 1) - 1

    @property
    def q_min(self) -> int:
        return -self.q_max if self.symmetric else -(2 ** (self.bits - 1))

    @property
    def q_ref(self) -> float:
        return float(self.q_max)

    @property
    def min_positive(self) -> float:
        return 1.0

    @property
    def dynamic_range(self) -> float:
        return float(self.q_max)

    def to_dict(self) -> dict:
        return {
            "kind": "int",
            "name": self.name,
            "bits": self.bits,
            "symmetric": self.symmetric,
            "q_max": self.q_max,
            "q_min": self.q_min,
            "min_positive": self.min_positive,
            "dynamic_range": self.dynamic_range,
        }


@dataclass(frozen=True)
class Codebook:
    """Sorted signed representable values of an FP layout.

    ``even`` flags entries whose encoding has a zero least-significant bit;
    round-to-nearest ties go to those.
    """

    values: np.ndarray
    even: np.ndarray
    normal_threshold: float

    def __len__(self) -> int:
        return len(self.values)

    @property
    def max(self) -> float:
        return float(self.values[-1])


@lru_cache(maxsize=None)
def build_codebook(layout: FpLayout) -> Codebook:
    if not isinstance(layout, FpLayout):
        raise ConfigError(f"codebooks exist only for FP layouts, got {layout!r}")
    E, M, B = layout.exponent_bits, layout.mantissa_bits, layout.bias
    n_exp, n_man = 2**E, 2**M

    mags = []
    for e in range(n_exp):
        for m in range(n_man):
            if e == n_exp - 1:
                if layout.special_codes is SpecialCodes.IEEE:
                    continue
                if layout.special_codes is SpecialCodes.ALL_ONES and m == n_man - 1:
                    continue
            if e == 0:
                mags.append(m / n_man * 2.0 ** (1 - B))
            else:
                mags.append((1 + m / n_man) * 2.0 ** (e - B))
    if len(mags) < 2:
        raise ConfigError(f"layout {layout.name} has no finite non-zero values")
    mags = np.asarray(mags, dtype=np.float64)
    # encoding LSB == magnitude index parity since exclusions only trim the top
    mag_even = np.arange(len(mags)) % 2 == 0

    values = np.concatenate([-mags[:0:-1], mags])
    even = np.concatenate([mag_even[:0:-1], mag_even])
    values.setflags(write=False)
    even.setflags(write=False)
    return Codebook(values=values, even=even, normal_threshold=layout.n_min)


@dataclass(frozen=True)
class FormatSpec:
    name: str
    element: FpLayout | IntLayout
    block_size: int
    scale_mode: ScaleMode
    rho_model: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.block_size < 1:
            raise ConfigError(f"block size must be positive, got {self.block_size}")
        object.__setattr__(self, "scale_mode", ScaleMode(self.scale_mode))
        if self.rho_model is None:
            object.__setattr__(self, "rho_model", 1.5 if self.scale_mode.is_ue8m0 else 1.0)
        if self.rho_model < 1:
            raise ConfigError(f"rho_model must be >= 1, got {self.rho_model}")

    @property
    def is_int(self) -> bool:
        return isinstance(self.element, IntLayout)

    @property
    def q_ref(self) -> float:
        return self.element.q_ref

    def with_(self, **changes) -> "FormatSpec":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "element": self.element.to_dict(),
            "block_size": self.block_size,
            "scale_mode": self.scale_mode.value,
            "rho_model": self.rho_model,
            "max_value": float(self.element.q_max),
            "min_value": self.element.min_positive,
            "dynamic_range": self.element.dynamic_range,
        }


E4M3 = FpLayout(4, 3, 7, SpecialCodes.ALL_ONES)
E2M3 = FpLayout(2, 3, 1)
E2M1 = FpLayout(2, 1, 1)

_BUILTIN = (
    FormatSpec("MXFP8", E4M3, 32, ScaleMode.UE8M0_ROUND_UP),
    FormatSpec("MXINT8", IntLayout(8), 32, ScaleMode.UE8M0_ROUND_UP),
    FormatSpec("MXFP6", E2M3, 32, ScaleMode.UE8M0_ROUND_UP),
    FormatSpec("MXINT6", IntLayout(6), 32, ScaleMode.UE8M0_ROUND_UP),
    FormatSpec("MXFP4", E2M1, 32, ScaleMode.UE8M0_ROUND_UP),
    FormatSpec("MXINT4", IntLayout(4), 32, ScaleMode.UE8M0_ROUND_UP),
    FormatSpec("NVFP4", E2M1, 16, ScaleMode.E4M3_TWO_LEVEL),
    FormatSpec("NVINT4", IntLayout(4), 16, ScaleMode.E4M3_TWO_LEVEL),
)

_registry: dict[str, FormatSpec] = {f.name: f for f in _BUILTIN}
_lock = threading.Lock()

BUILTIN_NAMES = tuple(f.name for f in _BUILTIN)

# INT/FP pairs compared throughout
FORMAT_PAIRS = (("MXINT8", "MXFP8"), ("MXINT6", "MXFP6"), ("MXINT4", "MXFP4"), ("NVINT4", "NVFP4"))


def available_formats() -> list[str]:
    return list(_registry)


def lookup_format(name: str) -> FormatSpec:
    try:
        return _registry[name]
    except KeyError:
        raise ConfigError(
            f"unknown format {name!r}; available: {', '.join(_registry)}"
        ) from None


def register_format(spec: FormatSpec, *, overwrite: bool = False) -> FormatSpec:
    with _lock:
        if spec.name in BUILTIN_NAMES:
            raise ConfigError(f"cannot replace built-in format {spec.name}")
        if spec.name in _registry and not overwrite:
            raise ConfigError(f"format {spec.name} already registered")
        _registry[spec.name] = spec
    return spec


def unregister_format(name: str) -> None:
    with _lock:
        if name in BUILTIN_NAMES:
            raise ConfigError(f"cannot remove built-in format {name}")
        _registry.pop(name, None)


def resolve(fmt: str | FormatSpec) -> FormatSpec:
    return fmt if isinstance(fmt, FormatSpec) else lookup_format(fmt)
