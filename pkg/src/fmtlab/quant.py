"""Block quantize/dequantize for INT and FP element formats.

Tensors are plain numpy arrays. Blocks are contiguous runs of ``block_size``
elements along the GEMM reduction axis; optionally each run of ``rotation.dim``
elements is rotated by a random Hadamard matrix before scaling.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConfigError, DataError, ShapeError
from .formats import E4M3, FormatSpec, IntLayout, ScaleMode, build_codebook, resolve
from .metrics import measure_qsnr
from .precision import PrecisionKind, cast

# Scale used for all-zero blocks; any positive value gives an exact zero output.
MIN_SCALE = 2.0**-127
UE8M0_EXP_RANGE = (-127, 127)


class Rounding(str, enum.Enum):
    HALF_EVEN = "half_even"


@dataclass(frozen=True)
class BlockScale:
    value: float
    mode: ScaleMode
    second_level: float | None = None

    def __post_init__(self):
        if not self.value > 0:
            raise ConfigError(f"block scale must be positive, got {self.value}")

    @property
    def effective(self) -> float:
        """Multiplier actually applied to codes."""
        return self.value * (self.second_level if self.second_level is not None else 1.0)


@dataclass(frozen=True)
class RotationSpec:
    dim: int
    seed: int = 0
    random_signs: bool = True

    def __post_init__(self):
        if self.dim < 1 or self.dim & (self.dim - 1):
            raise ConfigError(f"Hadamard dimension must be a power of two, got {self.dim}")


@dataclass
class QuantResult:
    dequantized: np.ndarray
    scales: np.ndarray  # effective per-block scale s', blocked shape
    qsnr_db: float
    ideal_scales: np.ndarray | None = None  # AbsMax/q_ref before rounding the scale
    block_kappa: np.ndarray | None = None
    codes: np.ndarray | None = None  # INT codes or codebook indices
    tensor_scale: float | None = None

    @property
    def rho(self) -> np.ndarray | None:
        """Per-block scale overhead s'/s."""
        if self.ideal_scales is None:
            return None
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.ideal_scales > 0, self.scales / self.ideal_scales, np.nan)

    @property
    def mean_kappa(self) -> float:
        return float(np.mean(self.block_kappa))

    @property
    def mean_rho(self) -> float:
        return float(np.nanmean(self.rho))


def _check_finite(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise DataError("tensor contains NaN or Inf")


# ---------------------------------------------------------------------------
# scales
# ---------------------------------------------------------------------------

def absmax_scale(block, q_ref: float) -> float:
    """AbsMax(block) / q_ref, or ``MIN_SCALE`` for an all-zero block."""
    x = np.asarray(block, dtype=np.float64)
    if x.size == 0:
        raise DataError("empty block")
    if not q_ref > 0:
        raise ConfigError(f"q_ref must be positive, got {q_ref}")
    _check_finite(x)
    amax = float(np.max(np.abs(x)))
    return amax / q_ref if amax > 0 else MIN_SCALE


def _pow2(exponent):
    lo, hi = UE8M0_EXP_RANGE
    return np.ldexp(1.0, np.clip(exponent, lo, hi).astype(np.int64))


def _ceil_log2(s: np.ndarray) -> np.ndarray:
    m, e = np.frexp(s)
    return np.where(m == 0.5, e - 1, e)


def _floor_log2(s: np.ndarray) -> np.ndarray:
    return np.frexp(s)[1] - 1


def ue8m0_up(s):
    """Vectorised round-up to a power of two, exponent clipped to [-127, 127]."""
    s = np.asarray(s, dtype=np.float64)
    return _pow2(_ceil_log2(s))


def ue8m0_down(absmax, q_max: float):
    absmax = np.asarray(absmax, dtype=np.float64)
    return _pow2(_floor_log2(absmax) - _floor_log2(np.float64(q_max)))


def ue8m0_round_up(s: float) -> BlockScale:
    if not s > 0:
        raise ConfigError(f"scale must be positive, got {s}")
    return BlockScale(float(ue8m0_up(s)), ScaleMode.UE8M0_ROUND_UP)


def ue8m0_round_down(absmax: float, q_max: float) -> BlockScale:
    """Floor-based UE8M0 conversion; can clip the block maximum."""
    if not absmax > 0 or not q_max > 0:
        raise ConfigError("absmax and q_max must be positive")
    return BlockScale(float(ue8m0_down(absmax, q_max)), ScaleMode.UE8M0_ROUND_DOWN)


def round_to_codebook(y, codebook) -> tuple[np.ndarray, np.ndarray]:
    """Nearest codebook entry by binary search; ties go to the even encoding.

    Out-of-range inputs saturate to the extreme entries.
    Returns ``(values, indices)``.
    """
    y = np.asarray(y, dtype=np.float64)
    vals, even = codebook.values, codebook.even
    i = np.clip(np.searchsorted(vals, y), 1, len(vals) - 1)
    lo, hi = vals[i - 1], vals[i]
    d_lo = y - lo
    d_hi = hi - y
    take_hi = (d_hi < d_lo) | ((d_hi == d_lo) & even[i])
    idx = np.where(take_hi, i, i - 1)
    return vals[idx], idx


def _e4m3_round(v: np.ndarray) -> np.ndarray:
    q, _ = round_to_codebook(v, build_codebook(E4M3))
    # never let a non-zero block scale underflow to zero
    return np.where((q <= 0) & (v > 0), E4M3.s_min, q)


def _e4m3_scales_from_absmax(block_absmax: np.ndarray, q_max: float) -> tuple[float, np.ndarray]:
    tensor_absmax = float(np.max(block_absmax)) if block_absmax.size else 0.0
    if tensor_absmax == 0.0:
        return MIN_SCALE, np.full(block_absmax.shape, E4M3.s_min)
    e4m3_max = E4M3.q_max
    tensor_scale = tensor_absmax / (q_max * e4m3_max)
    raw = np.minimum(block_absmax / (q_max * tensor_scale), e4m3_max)
    return tensor_scale, _e4m3_round(raw)


def e4m3_two_level_scales(tensor, spec: FormatSpec | str, axis: int = -1) -> tuple[float, np.ndarray]:
    """Per-tensor FP32 scale plus per-block E4M3 scales.

    ``tensor_scale = AbsMax(tensor) / (q_max * 448)`` so every block scale
    ``AbsMax(block) / (q_max * tensor_scale)`` fits in E4M3 before rounding.
    The effective scale of a block is ``block_scale * tensor_scale``.
    """
    spec = resolve(spec)
    if spec.scale_mode is not ScaleMode.E4M3_TWO_LEVEL:
        raise ConfigError(f"{spec.name} does not use two-level E4M3 scales")
    x = np.asarray(tensor, dtype=np.float64)
    _check_finite(x)
    blocks, _ = _to_blocks(x, spec.block_size, axis)
    return _e4m3_scales_from_absmax(np.max(np.abs(blocks), axis=-1), spec.q_ref)


# ---------------------------------------------------------------------------
# element quantizers
# ---------------------------------------------------------------------------

def _quantize_scaled(y: np.ndarray, spec: FormatSpec, symmetric: bool | None = None):
    """Quantize already-scaled values. Returns (dequantized-in-code-units, codes)."""
    el = spec.element
    if isinstance(el, IntLayout):
        q_min = el.q_min if symmetric is None else (-el.q_max if symmetric else -(el.q_max + 1))
        codes = np.clip(np.rint(y), q_min, el.q_max)
        return codes, codes.astype(np.int64)
    return round_to_codebook(y, build_codebook(el))


def quantize_block(block, spec: FormatSpec | str, scale: BlockScale,
                   rounding: Rounding = Rounding.HALF_EVEN) -> QuantResult:
    """Quantize one block with a given scale."""
    spec = resolve(spec)
    Rounding(rounding)
    x = np.asarray(block, dtype=np.float64)
    _check_finite(x)
    s = scale.effective
    q, codes = _quantize_scaled(x / s, spec)
    deq = q * s
    qsnr = measure_qsnr(x, deq) if np.any(x) else math.inf
    return QuantResult(dequantized=deq, scales=np.array([s]), qsnr_db=qsnr, codes=codes,
                       tensor_scale=scale.second_level)


# ---------------------------------------------------------------------------
# rotation
# ---------------------------------------------------------------------------

def hadamard_matrix(rot: RotationSpec) -> np.ndarray:
    """``H_dim @ diag(signs) / sqrt(dim)`` with Sylvester ``H`` and seeded +-1 signs."""
    h = scipy.linalg.hadamard(rot.dim).astype(np.float64)
    if rot.random_signs:
        signs = np.random.default_rng(rot.seed).integers(0, 2, rot.dim) * 2.0 - 1.0
    else:
        signs = np.ones(rot.dim)
    return h * signs[None, :] / math.sqrt(rot.dim)


def rotate(x: np.ndarray, rot: RotationSpec, axis: int = -1, inverse: bool = False) -> np.ndarray:
    """Apply ``R v`` (or ``R.T v``) to every length-``dim`` run ``v`` along ``axis``.

    With ``R = H D`` the random signs act on the input before mixing; applied
    the other way round they would only flip output signs, which no
    sign-symmetric quantizer can see.
    """
    x = np.asarray(x, dtype=np.float64)
    axis = _norm_axis(axis, x.ndim)
    if x.shape[axis] % rot.dim:
        raise ShapeError(f"rotation dim {rot.dim} does not divide axis length {x.shape[axis]}")
    r = hadamard_matrix(rot)
    # row-vector form: (R v)^T = v^T R^T
    if not inverse:
        r = r.T
    xm = np.moveaxis(x, axis, -1)
    out = (xm.reshape(-1, rot.dim) @ r).reshape(xm.shape)
    return np.moveaxis(out, -1, axis)


# ---------------------------------------------------------------------------
# tensor quantizer
# ---------------------------------------------------------------------------

def _norm_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} out of range for {ndim}-d tensor")
    return axis % ndim


def _to_blocks(x: np.ndarray, g: int, axis: int):
    if x.ndim == 0:
        raise ShapeError("cannot block a scalar")
    axis = _norm_axis(axis, x.ndim)
    n = x.shape[axis]
    if n % g:
        raise ShapeError(f"axis {axis} has length {n}, not divisible by block size {g}")
    xm = np.moveaxis(x, axis, -1)
    return np.ascontiguousarray(xm).reshape(-1, g), xm.shape


def _from_blocks(blocks: np.ndarray, moved_shape, axis: int, ndim: int) -> np.ndarray:
    return np.moveaxis(blocks.reshape(moved_shape), -1, _norm_axis(axis, ndim))


def block_kappa(blocks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Crest factor max|x|/RMS per row; zero-RMS rows get 1. Returns (kappa, zero_mask)."""
    amax = np.max(np.abs(blocks), axis=-1)
    rms = np.sqrt(np.mean(blocks * blocks, axis=-1))
    zero = rms == 0
    with np.errstate(invalid="ignore", divide="ignore"):
        kappa = np.where(zero, 1.0, amax / np.where(zero, 1.0, rms))
    return kappa, zero


def _block_scales(blocks: np.ndarray, spec: FormatSpec, scale_precision):
    q_ref = spec.q_ref
    amax = np.max(np.abs(blocks), axis=-1)
    ideal = amax / q_ref
    zero = amax == 0
    tensor_scale = None
    mode = spec.scale_mode
    if mode is ScaleMode.EXACT:
        scales = cast(ideal, scale_precision)
    elif mode is ScaleMode.UE8M0_ROUND_UP:
        scales = ue8m0_up(np.where(zero, 1.0, cast(ideal, scale_precision)))
    elif mode is ScaleMode.UE8M0_ROUND_DOWN:
        scales = ue8m0_down(np.where(zero, 1.0, amax), q_ref)
    else:
        tensor_scale, block = _e4m3_scales_from_absmax(amax, q_ref)
        scales = cast(block * tensor_scale, scale_precision)
    scales = np.where(zero | ~(scales > 0), MIN_SCALE, scales)
    return scales, ideal, tensor_scale


def quantize_tensor(tensor, spec: FormatSpec | str, axis: int = -1,
                    rotation: RotationSpec | None = None, *,
                    scale_precision: PrecisionKind | str | None = None,
                    symmetric: bool | None = None,
                    keep_codes: bool = False) -> QuantResult:
    """Blockwise quantize-dequantize of ``tensor`` along ``axis``.

    ``scale_precision`` reroutes the scale and the ``x / s`` division through
    BF16/FP16 rounding. ``symmetric`` overrides the INT layout's clipping range.
    The dequantized tensor is returned in the original (unrotated) basis.
    """
    spec = resolve(spec)
    x = np.asarray(tensor, dtype=np.float64)
    _check_finite(x)
    g = spec.block_size
    work = rotate(x, rotation, axis) if rotation is not None else x
    blocks, moved_shape = _to_blocks(work, g, axis)

    scales, ideal, tensor_scale = _block_scales(blocks, spec, scale_precision)
    y = cast(blocks / scales[:, None], scale_precision)
    q, codes = _quantize_scaled(y, spec, symmetric)
    deq_blocks = q * scales[:, None]
    kappa, _ = block_kappa(blocks)

    deq_work = _from_blocks(deq_blocks, moved_shape, axis, x.ndim)
    deq = rotate(deq_work, rotation, axis, inverse=True) if rotation is not None else deq_work
    # measured in the rotated basis: R is orthonormal, and this avoids the
    # rounding of the inverse rotation leaking into exact round trips
    qsnr = measure_qsnr(work, deq_work) if np.any(x) else math.inf
    block_shape = moved_shape[:-1] + (moved_shape[-1] // g,)
    return QuantResult(
        dequantized=deq,
        scales=scales.reshape(block_shape),
        qsnr_db=qsnr,
        ideal_scales=ideal.reshape(block_shape),
        block_kappa=kappa.reshape(block_shape),
        codes=codes.reshape(moved_shape) if keep_codes else None,
        tensor_scale=tensor_scale,
    )


# ---------------------------------------------------------------------------
# linear layer
# ---------------------------------------------------------------------------

SITES = ("x", "w", "dy", "wt", "xt", "dyt")


@dataclass
class SiteReport:
    operand: str
    axis: int
    qsnr_db: float
    mean_kappa: float
    mean_rho: float

    def to_dict(self) -> dict:
        return {"operand": self.operand, "axis": self.axis, "qsnr_db": _json_float(self.qsnr_db),
                "mean_kappa": self.mean_kappa, "mean_rho": self.mean_rho}


@dataclass
class LinearSimReport:
    sites: dict[str, SiteReport]
    outputs: dict[str, float]
    dequantized: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {"sites": {k: v.to_dict() for k, v in self.sites.items()},
                "outputs_qsnr_db": {k: _json_float(v) for k, v in self.outputs.items()}}


def _json_float(v: float):
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")


def linear_layer_sim(x, w, dy, spec: FormatSpec | str, rotation: RotationSpec | None = None, *,
                     rotate_sites=SITES, scale_precision=None) -> LinearSimReport:
    """Quantize the six GEMM operands of a linear layer, each along its reduction axis.

    Shapes: ``x`` (m, k), ``w`` (k, n), ``dy`` (m, n). Products are computed in
    float64 from the dequantized operands and compared with the exact ones.
    """
    spec = resolve(spec)
    x, w, dy = (np.asarray(a, dtype=np.float64) for a in (x, w, dy))
    if x.ndim != 2 or w.ndim != 2 or dy.ndim != 2:
        raise ShapeError("linear_layer_sim expects 2-d x, w and dy")
    m, k = x.shape
    if w.shape[0] != k:
        raise ShapeError(f"x is {x.shape} but w is {w.shape}")
    n = w.shape[1]
    if dy.shape != (m, n):
        raise ShapeError(f"dy must be {(m, n)}, got {dy.shape}")
    unknown = set(rotate_sites) - set(SITES)
    if unknown:
        raise ConfigError(f"unknown sites {sorted(unknown)}; expected a subset of {SITES}")

    # site -> (operand name, array, reduction axis within that array)
    plan = {
        "x": ("X", x, 1), "w": ("W", w, 0),
        "dy": ("dY", dy, 1), "wt": ("W", w, 1),
        "xt": ("X", x, 0), "dyt": ("dY", dy, 0),
    }
    sites, deq = {}, {}
    for site, (name, arr, ax) in plan.items():
        rot = rotation if site in rotate_sites else None
        r = quantize_tensor(arr, spec, axis=ax, rotation=rot, scale_precision=scale_precision)
        deq[site] = r.dequantized
        sites[site] = SiteReport(name, ax, r.qsnr_db, r.mean_kappa, r.mean_rho)

    ref = {"y": x @ w, "dx": dy @ w.T, "dw": x.T @ dy}
    got = {"y": deq["x"] @ deq["w"], "dx": deq["dy"] @ deq["wt"].T, "dw": deq["xt"].T @ deq["dyt"]}
    outputs = {}
    for key in ref:
        outputs[key] = measure_qsnr(ref[key], got[key]) if np.any(ref[key]) else math.inf
    return LinearSimReport(sites=sites, outputs=outputs, dequantized=deq)
