"""Closed-form QSNR predictions for block INT and FP quantization of Gaussian data.

All results are in dB. ``kappa`` is the block crest factor max|x|/RMS and
``rho`` the power-of-two scale overhead s'/s (1 for E4M3 scales).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.stats import norm

from .errors import ConfigError
from .formats import FormatSpec, FpLayout, IntLayout, ScaleMode, resolve

EPS = 1e-12
DEFAULT_RHO = 1.5


@dataclass(frozen=True)
class FpNoiseTerms:
    alpha_m: float
    beta: float
    w_norm: float
    p_sub: float


@dataclass(frozen=True)
class GaussianQsnrModel:
    kappa: float
    format: FormatSpec
    rho: float | None = None
    allow_kappa_beyond_bound: bool = False

    def __post_init__(self):
        object.__setattr__(self, "format", resolve(self.format))
        if self.rho is None:
            object.__setattr__(self, "rho", self.format.rho_model)
        if not self.kappa > 0:
            raise ConfigError(f"kappa must be positive, got {self.kappa}")
        if self.rho < 1:
            raise ConfigError(f"rho must be >= 1, got {self.rho}")
        bound = math.sqrt(self.g)
        if self.kappa > bound and not self.allow_kappa_beyond_bound:
            raise ConfigError(
                f"kappa={self.kappa} exceeds sqrt(g)={bound:.4g}, the largest crest factor of a "
                f"{self.g}-element block; pass allow_kappa_beyond_bound=True to extrapolate"
            )

    @property
    def g(self) -> int:
        return self.format.block_size

    def qsnr_db(self) -> float:
        return format_qsnr(self.format, self.kappa, self.rho)


def alpha_m(mantissa_bits: int) -> float:
    return 1.0 / (24.0 * 2.0 ** (2 * mantissa_bits))


def beta(layout: FpLayout) -> float:
    return 2.0 ** (2 * (1 - layout.bias - layout.mantissa_bits)) / (12.0 * layout.q_max**2)


def qsnr_int_ue8m0(b: int, rho: float, kappa):
    """4.78 + 6.02 b - 20 log10(rho) - 20 log10(kappa)."""
    kappa = np.asarray(kappa, dtype=np.float64)
    out = 4.78 + 6.02 * b - 20.0 * np.log10(rho) - 20.0 * np.log10(kappa)
    return float(out) if out.ndim == 0 else out


def qsnr_int_e4m3(b: int, kappa, g: int):
    """INT QSNR with a (near) exact per-block scale: one error-free element per block."""
    if g < 2:
        raise ConfigError(f"block size must be >= 2, got {g}")
    kappa = np.asarray(kappa, dtype=np.float64)
    out = 4.78 + 6.02 * b - 20.0 * np.log10(kappa) + 10.0 * math.log10(g / (g - 1))
    return float(out) if out.ndim == 0 else out


def gaussian_subnormal_stats(kappa, rho: float, layout: FpLayout):
    """Energy fraction above the subnormal threshold and probability below it.

    The threshold in units of sigma is ``t = rho * kappa * n_min / q_max``;
    ``p_sub = 2 Phi(t) - 1`` and ``w_norm = 1 - (p_sub - 2 t phi(t))``.
    """
    t = rho * np.asarray(kappa, dtype=np.float64) * layout.n_min / layout.q_max
    p_sub = 2.0 * norm.cdf(t) - 1.0
    w_norm = 1.0 - (p_sub - 2.0 * t * norm.pdf(t))
    if t.ndim == 0:
        return float(w_norm), float(p_sub)
    return w_norm, p_sub


def noise_terms(layout: FpLayout, kappa: float, rho: float = 1.0) -> FpNoiseTerms:
    w, p = gaussian_subnormal_stats(kappa, rho, layout)
    return FpNoiseTerms(alpha_m(layout.mantissa_bits), beta(layout), w, p)


def qsnr_fp_ue8m0(layout: FpLayout, rho: float, kappa):
    w, p = gaussian_subnormal_stats(kappa, rho, layout)
    rk = rho * np.asarray(kappa, dtype=np.float64)
    out = -10.0 * np.log10(alpha_m(layout.mantissa_bits) * w + beta(layout) * rk**2 * p)
    return float(out) if np.ndim(out) == 0 else out


def qsnr_fp_e4m3(layout: FpLayout, kappa, g: int):
    """FP QSNR with an E4M3 block scale (rho = 1), block maximum excluded."""
    if g < 2:
        raise ConfigError(f"block size must be >= 2, got {g}")
    kappa = np.asarray(kappa, dtype=np.float64)
    w, p = gaussian_subnormal_stats(kappa, 1.0, layout)
    normal = np.maximum(w - kappa**2 / g, EPS)
    out = -10.0 * np.log10(alpha_m(layout.mantissa_bits) * normal + beta(layout) * kappa**2 * p)
    return float(out) if out.ndim == 0 else out


def format_qsnr(fmt: FormatSpec | str, kappa, rho: float | None = None):
    """Predicted QSNR for a registered format, dispatching on element and scale kind.

    ``rho`` defaults to the format's ``rho_model`` and is ignored for E4M3 scales.
    """
    spec = resolve(fmt)
    if rho is None:
        rho = spec.rho_model
    el = spec.element
    two_level = spec.scale_mode is ScaleMode.E4M3_TWO_LEVEL
    if isinstance(el, IntLayout):
        if two_level:
            return qsnr_int_e4m3(el.bits, kappa, spec.block_size)
        return qsnr_int_ue8m0(el.bits, rho, kappa)
    if two_level:
        return qsnr_fp_e4m3(el, kappa, spec.block_size)
    return qsnr_fp_ue8m0(el, rho, kappa)


@dataclass(frozen=True)
class CrossoverResult:
    kappa_star: float | None
    qsnr_at_crossover_db: float | None
    bracket: tuple[float, float]
    iterations: int = 0

    @property
    def found(self) -> bool:
        return self.kappa_star is not None

    def to_dict(self) -> dict:
        return {"kappa_star": self.kappa_star, "qsnr_at_crossover_db": self.qsnr_at_crossover_db,
                "bracket": list(self.bracket), "found": self.found, "iterations": self.iterations}


def crossover_kappa(int_curve: Callable[[float], float], fp_curve: Callable[[float], float],
                    bracket: tuple[float, float] = (1.0, 16.0), tol_db: float = 1e-6,
                    max_iter: int = 200) -> CrossoverResult:
    """Bisect for the crest factor where the two QSNR curves meet.

    Returns a result with ``kappa_star=None`` when the difference does not
    change sign over the bracket.
    """
    lo, hi = map(float, bracket)
    if not 0 < lo < hi:
        raise ConfigError(f"invalid bracket {bracket}")

    def diff(k):
        return int_curve(k) - fp_curve(k)

    d_lo, d_hi = diff(lo), diff(hi)
    if d_lo == 0:
        return CrossoverResult(lo, int_curve(lo), (lo, hi))
    if d_hi == 0:
        return CrossoverResult(hi, int_curve(hi), (lo, hi))
    if np.sign(d_lo) == np.sign(d_hi):
        return CrossoverResult(None, None, (lo, hi))

    a, b, da = lo, hi, d_lo
    mid = 0.5 * (a + b)
    for it in range(1, max_iter + 1):
        mid = 0.5 * (a + b)
        dm = diff(mid)
        if abs(dm) < tol_db:
            break
        if np.sign(dm) == np.sign(da):
            a, da = mid, dm
        else:
            b = mid
    return CrossoverResult(mid, int_curve(mid), (lo, hi), it)


def format_crossover(int_fmt: FormatSpec | str, fp_fmt: FormatSpec | str, rho: float = DEFAULT_RHO,
                     bracket: tuple[float, float] = (1.0, 16.0)) -> CrossoverResult:
    int_spec, fp_spec = resolve(int_fmt), resolve(fp_fmt)
    return crossover_kappa(lambda k: format_qsnr(int_spec, k, rho),
                           lambda k: format_qsnr(fp_spec, k, rho), bracket)


def qsnr_curve(format_pairs: Iterable[Sequence[str]], kappa_grid, rho: float = DEFAULT_RHO) -> list[dict]:
    """Long-format table rows ``{kappa, format, qsnr_db}`` for every format in the pairs."""
    grid = np.asarray(kappa_grid, dtype=np.float64)
    rows = []
    seen = []
    for pair in format_pairs:
        for name in pair:
            if name not in seen:
                seen.append(name)
    for name in seen:
        values = np.atleast_1d(format_qsnr(name, grid, rho))
        rows.extend({"kappa": float(k), "format": name, "qsnr_db": float(v)} for k, v in zip(grid, values))
    return rows
