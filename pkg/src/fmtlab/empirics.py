"""Monte-Carlo QSNR, crest-factor statistics and the low-precision scaling experiment."""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError
from .formats import resolve
from .metrics import measure_qsnr
from .precision import PrecisionKind, cast, emulate_precision
from .quant import RotationSpec, _to_blocks, block_kappa, quantize_tensor, rotate

__all__ = [
    "CrestStats", "GaussianCorpus", "McReport", "PrecisionKind", "StabilityResult",
    "crest_factor_stats", "emulate_precision", "measure_qsnr", "mc_qsnr_scatter",
    "resolve_threads", "stability_experiment", "tensor_block_kappa",
]


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get("FMTLAB_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    if threads < 1:
        raise ConfigError(f"threads must be >= 1, got {threads}")
    return threads


# ---------------------------------------------------------------------------
# crest factor
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CrestStats:
    block_size: int  # -1: one block per channel
    min: float
    q1: float
    median: float
    q3: float
    max: float
    mean: float
    count: int
    zero_blocks: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def tensor_block_kappa(tensor, block_size: int, axis: int = -1,
                       rotation: RotationSpec | None = None) -> tuple[np.ndarray, int]:
    """Per-block crest factors and the number of zero-RMS blocks (reported as kappa=1)."""
    x = np.asarray(tensor, dtype=np.float64)
    if rotation is not None:
        x = rotate(x, rotation, axis)
    g = x.shape[axis] if block_size == -1 else block_size
    if g < 1:
        raise ConfigError(f"block size must be positive or -1, got {block_size}")
    blocks, _ = _to_blocks(x, g, axis)
    kappa, zero = block_kappa(blocks)
    return kappa, int(zero.sum())


def _summary(values: np.ndarray, block_size: int, zero_blocks: int) -> CrestStats:
    q = np.percentile(values, [0, 25, 50, 75, 100])
    return CrestStats(block_size, *map(float, q), mean=float(values.mean()),
                      count=int(values.size), zero_blocks=zero_blocks)


def crest_factor_stats(tensors, block_size: int, axis: int = -1,
                       rotation: RotationSpec | None = None) -> CrestStats:
    """Box-plot statistics of crest factors.

    A single array gives statistics over its blocks. A list of arrays is a
    corpus: each tensor contributes its mean block crest factor and the
    statistics are taken across tensors.
    """
    if isinstance(tensors, np.ndarray):
        kappa, zeros = tensor_block_kappa(tensors, block_size, axis, rotation)
        return _summary(kappa, block_size, zeros)
    means, zeros = [], 0
    for t in tensors:
        kappa, z = tensor_block_kappa(t, block_size, axis, rotation)
        means.append(kappa.mean())
        zeros += z
    if not means:
        raise ConfigError("empty corpus")
    return _summary(np.asarray(means), block_size, zeros)


# ---------------------------------------------------------------------------
# Gaussian corpus and Monte-Carlo QSNR
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianCorpus:
    """Seeded i.i.d. N(0, 1) tensors; tensor ``i`` draws from ``default_rng([seed, i])``.

    With ``outlier_magnitude > 0`` one element in every run of ``outlier_block``
    elements along the last axis is replaced by ``+-outlier_magnitude`` times the
    unit RMS.
    """

    n_tensors: int = 512
    shape: tuple[int, ...] = (64, 4096)
    seed: int = 0
    outlier_magnitude: float = 0.0
    outlier_block: int = 32

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        if self.n_tensors < 1 or any(s < 1 for s in self.shape):
            raise ConfigError("corpus needs at least one tensor of non-empty shape")

    def tensor(self, index: int) -> np.ndarray:
        rng = np.random.default_rng([self.seed, index])
        x = rng.standard_normal(self.shape)
        if self.outlier_magnitude > 0:
            g = self.outlier_block
            if self.shape[-1] % g:
                raise ConfigError(f"outlier block {g} does not divide last axis {self.shape[-1]}")
            runs = x.reshape(-1, g)
            pos = rng.integers(0, g, runs.shape[0])
            sign = rng.integers(0, 2, runs.shape[0]) * 2.0 - 1.0
            runs[np.arange(runs.shape[0]), pos] = sign * self.outlier_magnitude
        return x

    def __iter__(self):
        return (self.tensor(i) for i in range(self.n_tensors))

    def to_dict(self) -> dict:
        return {"n_tensors": self.n_tensors, "shape": list(self.shape), "seed": self.seed,
                "outlier_magnitude": self.outlier_magnitude, "outlier_block": self.outlier_block}


@dataclass
class McReport:
    format_a: str
    format_b: str
    kappa: np.ndarray  # mean block crest factor per tensor (format_a blocking)
    qsnr_a: np.ndarray
    qsnr_b: np.ndarray
    rho_a: np.ndarray
    rho_b: np.ndarray

    @property
    def n(self) -> int:
        return len(self.kappa)

    @property
    def mean_a(self) -> float:
        return float(np.mean(self.qsnr_a))

    @property
    def mean_b(self) -> float:
        return float(np.mean(self.qsnr_b))

    @property
    def win_rate_a(self) -> float:
        return int(np.sum(self.qsnr_a > self.qsnr_b)) / self.n

    @property
    def win_rate_b(self) -> float:
        return int(np.sum(self.qsnr_b > self.qsnr_a)) / self.n

    @property
    def tie_rate(self) -> float:
        return int(np.sum(self.qsnr_a == self.qsnr_b)) / self.n

    def summary(self) -> dict:
        return {
            "format_a": self.format_a, "format_b": self.format_b, "tensors": self.n,
            "mean_qsnr_a": self.mean_a, "mean_qsnr_b": self.mean_b,
            "win_rate_a": self.win_rate_a, "win_rate_b": self.win_rate_b, "tie_rate": self.tie_rate,
            "mean_kappa": float(np.mean(self.kappa)),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tensor_id", "kappa", f"qsnr_{self.format_a}", f"qsnr_{self.format_b}"])
        for i, (k, a, b) in enumerate(zip(self.kappa, self.qsnr_a, self.qsnr_b)):
            w.writerow([i, repr(float(k)), repr(float(a)), repr(float(b))])
        return buf.getvalue()


def _mc_one(args):
    corpus, index, spec_a, spec_b, rotation, axis = args
    x = corpus.tensor(index)
    ra = quantize_tensor(x, spec_a, axis, rotation)
    rb = quantize_tensor(x, spec_b, axis, rotation)
    return ra.mean_kappa, ra.qsnr_db, rb.qsnr_db, ra.mean_rho, rb.mean_rho


def mc_qsnr_scatter(format_pair, corpus: GaussianCorpus | None = None,
                    rotation: RotationSpec | None = None, axis: int = -1,
                    threads: int | None = None) -> McReport:
    """Quantize every corpus tensor under both formats and record (kappa, QSNR) pairs.

    QSNR is tensor-wise; kappa is the tensor mean of block crest factors.
    Results do not depend on ``threads``.
    """
    corpus = corpus or GaussianCorpus()
    name_a, name_b = format_pair
    spec_a, spec_b = resolve(name_a), resolve(name_b)
    jobs = [(corpus, i, spec_a, spec_b, rotation, axis) for i in range(corpus.n_tensors)]
    threads = resolve_threads(threads)
    if threads == 1:
        rows = [_mc_one(j) for j in jobs]
    else:
        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(_mc_one, jobs))
    cols = np.asarray(rows, dtype=np.float64).T
    return McReport(spec_a.name, spec_b.name, *cols)


# ---------------------------------------------------------------------------
# low-precision scaling experiment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StabilityResult:
    precision: str
    n: int
    seed: int
    ratio: float  # fraction of elements with |round(D / (D/127))| == 128
    count_pos: int
    count_neg: int
    codes_at_qmin: int  # -128 codes after the downstream clip
    symmetric_clip: bool

    def to_dict(self) -> dict:
        return asdict(self)


def stability_experiment(n: int = 4096, kind: PrecisionKind | str = PrecisionKind.BF16,
                         seed: int = 0, symmetric_clip: bool = False) -> StabilityResult:
    """Scale a standard-normal matrix to 127 with every step in ``kind`` arithmetic.

    ``D`` is drawn in float32 and rounded to ``kind``; ``S = D / 127`` and
    ``D / S`` are each rounded to ``kind`` before the final integer rounding.
    Ideally every element lands on +-127; the ratio counts those that reach
    magnitude 128. The downstream clip is [-127, 127] when ``symmetric_clip``,
    else [-128, 127].
    """
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    kind = PrecisionKind.parse(kind)
    rng = np.random.default_rng(seed)
    d = cast(rng.standard_normal((n, n), dtype=np.float32), kind)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = cast(d / 127.0, kind)
        r = np.rint(cast(d / s, kind))
    pos = int(np.count_nonzero(r == 128))
    neg = int(np.count_nonzero(r == -128))
    q_min = -127 if symmetric_clip else -128
    finite = np.isfinite(r)
    codes = np.clip(r[finite], q_min, 127)
    at_qmin = int(np.count_nonzero(codes == -128))
    return StabilityResult(kind.value, n, seed, (pos + neg) / (n * n), pos, neg, at_qmin, symmetric_clip)


def inf_safe(v: float):
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")
