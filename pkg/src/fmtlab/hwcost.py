"""Gate-level area/energy model of a k-lane MAC array with FP32 accumulation.

Sub-block magnitudes follow the usual MAC complexity table (INT mul
k(x+y+1)^2, FP mul k(y+1)^2, INT add 2k(x+y+1), FP add kn, aligner
k n log2 n, shared normalizer n log2 n) and are broken into cells as:

    m-bit array multiplier   m^2 AND, m(m-2) FA, m HA
    w-bit ripple adder       (w-1) FA, 1 HA
    x-bit subtractor         x XOR, x FA
    x-bit comparator         x XOR, x AND, x OR
    barrel aligner           n*ceil(log2 n) MUX
    normalizer               n*ceil(log2 n) MUX, n OR

Default cell factors are relative placeholders, not library numbers; only
orderings between formats are meaningful.
"""

from __future__ import annotations

import enum
import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .formats import FormatSpec, FpLayout, ScaleMode, resolve

GATES = ("FA", "HA", "XOR", "AND", "OR", "MUX")

MAC_SUBBLOCKS = ("multiplier", "adder", "exponent_adder", "exponent_subtractor",
                 "comparator", "aligner", "normalizer")
SHARED_SUBBLOCKS = frozenset({"normalizer", "dequantizer", "acc32"})

PSUM_BIT_WIDTH = 24
ACC32_PSUM_BIT_WIDTH = 48

_DEFAULT_FACTORS = {
    "FA": (1.0, 1.0),
    "HA": (0.5, 0.5),
    "XOR": (0.5, 0.5),
    "AND": (0.25, 0.2),
    "OR": (0.25, 0.2),
    "MUX": (0.45, 0.4),
}


@dataclass(frozen=True)
class CellFactors:
    area: dict
    energy: dict
    toggle_rate: float = 1.0

    def __post_init__(self):
        for table in (self.area, self.energy):
            missing = set(GATES) - set(table)
            if missing:
                raise ConfigError(f"cell factors missing gates {sorted(missing)}")
            if any(not table[g] > 0 for g in GATES):
                raise ConfigError("cell factors must be positive")
        if not 0 < self.toggle_rate <= 1:
            raise ConfigError(f"toggle rate must be in (0, 1], got {self.toggle_rate}")

    @classmethod
    def default(cls) -> "CellFactors":
        return cls({g: a for g, (a, _) in _DEFAULT_FACTORS.items()},
                   {g: e for g, (_, e) in _DEFAULT_FACTORS.items()})

    @classmethod
    def from_dict(cls, data: dict) -> "CellFactors":
        """Parse ``{gate: {area, energy}, ..., toggle_rate}``; absent gates keep defaults."""
        base = cls.default()
        area, energy = dict(base.area), dict(base.energy)
        for gate, val in data.items():
            if gate == "toggle_rate":
                continue
            if gate not in GATES:
                raise ConfigError(f"unknown gate {gate!r}; expected one of {GATES}")
            area[gate] = float(val.get("area", area[gate]))
            energy[gate] = float(val.get("energy", energy[gate]))
        return cls(area, energy, float(data.get("toggle_rate", base.toggle_rate)))

    @classmethod
    def load(cls, path) -> "CellFactors":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        out = {g: {"area": self.area[g], "energy": self.energy[g]} for g in GATES}
        out["toggle_rate"] = self.toggle_rate
        return out

    def scaled(self, area: float = 1.0, energy: float = 1.0) -> "CellFactors":
        return replace(self, area={g: v * area for g, v in self.area.items()},
                       energy={g: v * energy for g, v in self.energy.items()})


class ScaleKind(str, enum.Enum):
    UE8M0 = "ue8m0"
    E4M3 = "e4m3"


@dataclass(frozen=True)
class MacConfig:
    exponent_bits: int  # x, 0 for INT
    mantissa_bits: int  # y; INT b bits -> y = b - 1
    lanes: int = 32
    psum_bit_width: int = PSUM_BIT_WIDTH
    scale_kind: ScaleKind = ScaleKind.UE8M0

    def __post_init__(self):
        if self.exponent_bits < 0 or self.mantissa_bits < 0:
            raise ConfigError("exponent and mantissa widths must be non-negative")
        if self.lanes < 1 or self.psum_bit_width < 1:
            raise ConfigError("lanes and psum_bit_width must be positive")
        object.__setattr__(self, "scale_kind", ScaleKind(self.scale_kind))

    @property
    def is_int(self) -> bool:
        return self.exponent_bits == 0

    @classmethod
    def for_format(cls, fmt: FormatSpec | str, psum_bit_width: int = PSUM_BIT_WIDTH) -> "MacConfig":
        spec = resolve(fmt)
        el = spec.element
        if isinstance(el, FpLayout):
            x, y = el.exponent_bits, el.mantissa_bits
        else:
            x, y = 0, el.bits - 1
        kind = ScaleKind.E4M3 if spec.scale_mode is ScaleMode.E4M3_TWO_LEVEL else ScaleKind.UE8M0
        return cls(x, y, spec.block_size, psum_bit_width, kind)

    def to_dict(self) -> dict:
        return {"exponent_bits": self.exponent_bits, "mantissa_bits": self.mantissa_bits,
                "lanes": self.lanes, "psum_bit_width": self.psum_bit_width,
                "scale_kind": self.scale_kind.value, "aligner_width": aligner_width(self)}


def aligner_width(config: MacConfig) -> int:
    return min(2 ** (config.exponent_bits + 1) + 2 * config.mantissa_bits, config.psum_bit_width)


# ---------------------------------------------------------------------------
# cell decompositions (per instance)
# ---------------------------------------------------------------------------

def multiplier_cells(m: int, n: int | None = None) -> Counter:
    """Array multiplier of m x n bits: mn AND, m(n-2) FA, m HA (square when n is None)."""
    n = m if n is None else n
    if m < 1 or n < 1:
        return Counter()
    c = Counter(AND=m * n)
    if n >= 2:
        c["FA"] = m * (n - 2)
        c["HA"] = m
    return +c


def adder_cells(w: int) -> Counter:
    if w < 1:
        return Counter()
    return +Counter(FA=w - 1, HA=1)


def subtractor_cells(x: int) -> Counter:
    return +Counter(XOR=x, FA=x)


def comparator_cells(x: int) -> Counter:
    return +Counter(XOR=x, AND=x, OR=x)


def _log2_ceil(n: int) -> int:
    return math.ceil(math.log2(n)) if n > 1 else 0


def aligner_cells(n: int) -> Counter:
    return +Counter(MUX=n * _log2_ceil(n))


def normalizer_cells(n: int) -> Counter:
    return +Counter(MUX=n * _log2_ceil(n), OR=n)


def _times(c: Counter, k: int) -> Counter:
    return Counter({g: v * k for g, v in c.items()})


@dataclass
class GateCounts:
    """sub-block -> gate -> count."""

    blocks: dict = field(default_factory=dict)

    def __getitem__(self, key) -> Counter:
        return self.blocks.get(key, Counter())

    def add(self, name: str, cells: Counter) -> "GateCounts":
        self.blocks[name] = self.blocks.get(name, Counter()) + Counter(cells)
        return self

    def merge(self, other: "GateCounts", prefix: str = "") -> "GateCounts":
        for name, cells in other.blocks.items():
            self.add(prefix + name, cells)
        return self

    def scaled(self, factor: int) -> "GateCounts":
        return GateCounts({n: _times(c, factor) for n, c in self.blocks.items()})

    def total(self) -> Counter:
        out = Counter()
        for c in self.blocks.values():
            out.update(c)
        return out

    def to_dict(self) -> dict:
        return {n: {g: int(c.get(g, 0)) for g in GATES} for n, c in self.blocks.items()}


def mac_gate_counts(config: MacConfig) -> GateCounts:
    """Per-sub-block cell counts of the k-lane multiplier array and adder tree.

    Every row is per lane times k except the normalizer, which is shared.
    INT configs (x = 0) have no exponent, comparator, aligner or normalizer rows.
    """
    x, y, k = config.exponent_bits, config.mantissa_bits, config.lanes
    gc = GateCounts()
    for name in MAC_SUBBLOCKS:
        gc.blocks[name] = Counter()
    if config.is_int:
        width = x + y + 1
        gc.add("multiplier", _times(multiplier_cells(width), k))
        gc.add("adder", _times(adder_cells(2 * width), k))
        return gc
    n = aligner_width(config)
    gc.add("multiplier", _times(multiplier_cells(y + 1), k))
    gc.add("exponent_adder", _times(adder_cells(x), k))
    gc.add("adder", _times(adder_cells(n), k))
    gc.add("exponent_subtractor", _times(subtractor_cells(x), k))
    gc.add("comparator", _times(comparator_cells(x), k))
    gc.add("aligner", _times(aligner_cells(n), k))
    gc.add("normalizer", normalizer_cells(n))
    return gc


def dequant_counts(config: MacConfig) -> GateCounts:
    """Shared dequantizer: two 8-bit adds (UE8M0) or two E4M3 multiplies."""
    if config.scale_kind is ScaleKind.UE8M0:
        cells = _times(adder_cells(8), 2)
    else:
        cells = _times(multiplier_cells(3 + 1) + adder_cells(4), 2)
    return GateCounts({"dequantizer": Counter(cells)})


def acc32_counts(psum_bit_width: int = ACC32_PSUM_BIT_WIDTH) -> GateCounts:
    """One shared FP32 adder (x=8, y=23) built from the same FP-add sub-blocks."""
    cfg = MacConfig(8, 23, lanes=1, psum_bit_width=psum_bit_width)
    n = aligner_width(cfg)
    cells = (adder_cells(n) + subtractor_cells(8) + comparator_cells(8)
             + aligner_cells(n) + normalizer_cells(n))
    return GateCounts({"acc32": Counter(cells)})


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

@dataclass
class MmuCostReport:
    area_total: float
    energy_total: float
    breakdown: dict  # sub-block -> {"area", "energy", "shared"}
    lanes: int
    counts: GateCounts
    modes: dict = field(default_factory=dict)  # operating mode -> energy (mixed schemes)

    @property
    def area_per_lane(self) -> float:
        return self.area_total / self.lanes

    @property
    def energy_per_lane(self) -> float:
        return self.energy_total / self.lanes

    def to_dict(self) -> dict:
        out = {
            "area_total": self.area_total,
            "energy_total": self.energy_total,
            "lanes": self.lanes,
            "area_per_lane": self.area_per_lane,
            "energy_per_lane": self.energy_per_lane,
            "breakdown": self.breakdown,
            "gate_counts": self.counts.to_dict(),
        }
        if self.modes:
            out["energy_by_mode"] = self.modes
        return out


def _cost(cells: Counter, cells_f: CellFactors) -> tuple[float, float]:
    area = sum(cnt * cells_f.area[g] for g, cnt in cells.items())
    energy = sum(cnt * cells_f.energy[g] for g, cnt in cells.items()) * cells_f.toggle_rate
    return float(area), float(energy)


def aggregate_cost(counts: GateCounts, cells: CellFactors | None = None, lanes: int = 1) -> MmuCostReport:
    """Area = sum count*A_g; energy = sum count*E_g*tau, per sub-block and in total."""
    cells = cells or CellFactors.default()
    breakdown = {}
    area_total = energy_total = 0.0
    for name, c in counts.blocks.items():
        a, e = _cost(c, cells)
        shared = name.split(".")[-1] in SHARED_SUBBLOCKS
        breakdown[name] = {"area": a, "energy": e, "shared": shared,
                           "area_per_lane": a / lanes, "energy_per_lane": e / lanes}
        area_total += a
        energy_total += e
    return MmuCostReport(area_total, energy_total, breakdown, lanes, counts)


def mmu_counts(config: MacConfig) -> GateCounts:
    """MAC array + dequantizer + FP32 accumulator."""
    gc = GateCounts().merge(mac_gate_counts(config))
    gc.merge(dequant_counts(config))
    gc.merge(acc32_counts())
    return gc


def format_cost(fmt: FormatSpec | str | MacConfig, cells: CellFactors | None = None) -> MmuCostReport:
    config = fmt if isinstance(fmt, MacConfig) else MacConfig.for_format(fmt)
    return aggregate_cost(mmu_counts(config), cells, config.lanes)


# ---------------------------------------------------------------------------
# mixed 8-bit / 4-bit schemes at 1:2 throughput
# ---------------------------------------------------------------------------

class ReuseScheme(str, enum.Enum):
    INT_NO_REUSE = "int_no_reuse"
    INT_REUSE_1 = "int_reuse_1"
    INT_REUSE_2 = "int_reuse_2"
    FP_NO_REUSE = "fp_no_reuse"
    FP_REUSE = "fp_reuse"

    @classmethod
    def parse(cls, value) -> "ReuseScheme":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown scheme {value!r}; expected one of {[s.value for s in cls]}") from None


MIXED_LANES = 32


def int8_uint4_lane_counts(lanes: int = MIXED_LANES) -> GateCounts:
    """Reconfigurable int8 x (u)int4 lanes: 8x5 multiplier + a MUX per product bit.

    Two of these units form one int8 x int8 array or two int4 arrays.
    """
    product_bits = 8 + 5
    gc = GateCounts()
    gc.add("multiplier", _times(multiplier_cells(8, 5), lanes))
    gc.add("mode_mux", _times(Counter(MUX=product_bits), lanes))
    gc.add("adder", _times(adder_cells(product_bits), lanes))
    return gc


def _unit_counts(unit: str, lanes: int) -> GateCounts:
    if unit == "int8_uint4":
        return int8_uint4_lane_counts(lanes)
    x, y = {"int8": (0, 7), "int4": (0, 3), "e4m3": (4, 3), "e2m1": (2, 1)}[unit]
    return mac_gate_counts(MacConfig(x, y, lanes))


# scheme -> (installed units, units active in 8-bit mode, units active in 4-bit mode)
_SCHEMES = {
    ReuseScheme.INT_NO_REUSE: ({"int8": 1, "int4": 2}, {"int8": 1}, {"int4": 2}),
    ReuseScheme.INT_REUSE_1: ({"int8": 1, "int4": 1}, {"int8": 1}, {"int8": 1, "int4": 1}),
    ReuseScheme.INT_REUSE_2: ({"int8_uint4": 2}, {"int8_uint4": 2}, {"int8_uint4": 2}),
    ReuseScheme.FP_NO_REUSE: ({"e4m3": 1, "e2m1": 2}, {"e4m3": 1}, {"e2m1": 2}),
    ReuseScheme.FP_REUSE: ({"e4m3": 1, "e2m1": 1}, {"e4m3": 1}, {"e4m3": 1, "e2m1": 1}),
}


def _units(spec: dict, lanes: int) -> GateCounts:
    gc = GateCounts()
    for unit, copies in spec.items():
        for i in range(copies):
            gc.merge(_unit_counts(unit, lanes), prefix=f"{unit}[{i}].")
    return gc


def mixed_format_cost(scheme: ReuseScheme | str, cells: CellFactors | None = None,
                      lanes: int = MIXED_LANES) -> MmuCostReport:
    """Area of the installed MAC units plus shared dequantizers and accumulator.

    Energy is reported per operating mode (8-bit pass at k MACs, 4-bit pass at
    2k MACs); ``energy_total`` is the sum over one pass of each mode.
    """
    scheme = ReuseScheme.parse(scheme)
    cells = cells or CellFactors.default()
    installed, mode8, mode4 = _SCHEMES[scheme]

    shared = GateCounts()
    shared.merge(dequant_counts(MacConfig(0, 7, scale_kind=ScaleKind.UE8M0)), prefix="ue8m0.")
    shared.merge(dequant_counts(MacConfig(0, 3, scale_kind=ScaleKind.E4M3)), prefix="e4m3.")
    shared.merge(acc32_counts())
    shared_area, shared_energy = _cost(shared.total(), cells)

    counts = _units(installed, lanes).merge(shared)
    report = aggregate_cost(counts, cells, lanes)
    modes = {}
    for mode, active in (("8bit", mode8), ("4bit", mode4)):
        _, e = _cost(_units(active, lanes).total(), cells)
        modes[mode] = e + shared_energy
    report.modes = modes
    report.energy_total = sum(modes.values())
    return report


# ---------------------------------------------------------------------------
# calibration against measured ratios
# ---------------------------------------------------------------------------

def fit_cell_factors(targets: dict, base: CellFactors | None = None, iters: int = 2000) -> CellFactors:
    """Fit cell factors to relative-cost targets.

    ``targets`` maps ``(metric, numerator, denominator)`` to a ratio, where
    metric is ``"area"`` or ``"energy"`` and numerator/denominator are format
    names or reuse-scheme names. Fits log-factors by least squares on log ratios.
    """
    from scipy.optimize import minimize

    base = base or CellFactors.default()

    def cost_of(name, cells):
        try:
            scheme = ReuseScheme.parse(name)
        except ConfigError:
            return format_cost(name, cells)
        return mixed_format_cost(scheme, cells)

    def unpack(theta):
        a = {g: base.area[g] * math.exp(t) for g, t in zip(GATES, theta[:6])}
        e = {g: base.energy[g] * math.exp(t) for g, t in zip(GATES, theta[6:])}
        return CellFactors(a, e, base.toggle_rate)

    def loss(theta):
        cells = unpack(theta)
        err = 0.0
        for (metric, num, den), ratio in targets.items():
            rn, rd = cost_of(num, cells), cost_of(den, cells)
            attr = "area_total" if metric == "area" else "energy_total"
            err += (math.log(getattr(rn, attr) / getattr(rd, attr)) - math.log(ratio)) ** 2
        return err + 1e-4 * float(np.sum(np.square(theta)))

    res = minimize(loss, np.zeros(12), method="Nelder-Mead", options={"maxiter": iters, "xatol": 1e-6})
    return unpack(res.x)
