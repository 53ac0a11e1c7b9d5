"""``fmtlab`` command line.

Every command emits a JSON envelope ``{tool, version, command, config,
result, duration_s}``. ``config.argv`` is the canonical argument list; running
it again reproduces ``result`` byte for byte. CSV outputs start with a
``# fmtlab`` comment line carrying the same config.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import empirics, hwcost, theory
from .errors import ConfigError, DataError
from .formats import FORMAT_PAIRS, available_formats, lookup_format
from .quant import RotationSpec, linear_layer_sim, quantize_tensor
from .tensorio import read_dtype, read_tensor, write_tensor

EXIT_OK, EXIT_DATA, EXIT_CONFIG = 0, 1, 2


# ---------------------------------------------------------------------------
# argument helpers
# ---------------------------------------------------------------------------

def _shape(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(p) for p in text.lower().replace(",", "x").split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}; use e.g. 64x4096") from None
    if not dims or any(d < 1 for d in dims):
        raise argparse.ArgumentTypeError(f"bad shape {text!r}")
    return dims


def _pair(text: str) -> tuple[str, str]:
    parts = text.split(":")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"bad pair {text!r}; use INT:FP, e.g. MXINT8:MXFP8")
    return parts[0], parts[1]


def _pairs(text: str) -> list[tuple[str, str]]:
    if text == "all":
        return [tuple(p) for p in FORMAT_PAIRS]
    return [_pair(t) for t in text.split(",")]


def _grid(text: str) -> list[float]:
    parts = [float(p) for p in text.split(":")]
    if len(parts) == 1:
        return parts
    if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}; use start:stop:step")
    start, stop, step = parts
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 12) for i in range(n)]


def _bracket(text: str) -> tuple[float, float]:
    lo, hi = (float(p) for p in text.split(":"))
    return lo, hi


def _rotation(args) -> RotationSpec | None:
    if not getattr(args, "rotate", False):
        return None
    return RotationSpec(args.rotate_dim, args.seed)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else ("-inf" if v < 0 else "nan"))
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2)


# ---------------------------------------------------------------------------
# commands: each returns the result payload
# ---------------------------------------------------------------------------

def cmd_formats(args):
    return {"formats": [lookup_format(n).to_dict() for n in available_formats()]}


def cmd_quantize(args):
    x = read_tensor(args.input)
    res = quantize_tensor(x, args.format, args.axis, _rotation(args),
                          scale_precision=args.scale_precision,
                          symmetric=False if args.asymmetric else None)
    if args.out:
        write_tensor(res.dequantized, args.out, args.dtype or read_dtype(args.input))
    return {
        "format": args.format, "shape": list(x.shape), "axis": args.axis,
        "blocks": int(res.scales.size), "qsnr_db": res.qsnr_db,
        "mean_kappa": res.mean_kappa, "mean_rho": res.mean_rho,
        "tensor_scale": res.tensor_scale,
    }


def cmd_linear_sim(args):
    if args.x:
        x, w, dy = read_tensor(args.x), read_tensor(args.w), read_tensor(args.dy)
    else:
        m, k, n = args.dims
        rng = np.random.default_rng(args.seed)
        x, w, dy = rng.standard_normal((m, k)), rng.standard_normal((k, n)), rng.standard_normal((m, n))
    sites = tuple(args.rotate_sites.split(",")) if args.rotate_sites else ("x", "w", "dy", "wt", "xt", "dyt")
    rep = linear_layer_sim(x, w, dy, args.format, _rotation(args), rotate_sites=sites,
                           scale_precision=args.scale_precision)
    return rep.to_dict()


def cmd_qsnr_theory(args):
    spec = lookup_format(args.format)
    rho = spec.rho_model if args.rho is None else args.rho
    rows = []
    for k in args.kappa:
        model = theory.GaussianQsnrModel(k, spec, rho, allow_kappa_beyond_bound=args.allow_beyond)
        row = {"kappa": k, "qsnr_db": model.qsnr_db()}
        if not spec.is_int:
            t = theory.noise_terms(spec.element, k, rho if spec.scale_mode.is_ue8m0 else 1.0)
            row.update(alpha_m=t.alpha_m, beta=t.beta, w_norm=t.w_norm, p_sub=t.p_sub)
        rows.append(row)
    return {"format": spec.name, "rho": rho, "block_size": spec.block_size, "points": rows}


def _csv_header(command: str, config: dict) -> str:
    return f"# fmtlab {__version__} {command} config={json.dumps(_jsonable(config), sort_keys=True)}\n"


def cmd_qsnr_curve(args):
    rows = theory.qsnr_curve(args.pairs, args.kappa, args.rho)
    if args.out:
        lines = [_csv_header("qsnr-curve", args._config), "kappa,format,qsnr_db\n"]
        lines += [f"{r['kappa']!r},{r['format']},{r['qsnr_db']!r}\n" for r in rows]
        Path(args.out).write_text("".join(lines))
        return {"rows": len(rows), "out": args.out, "formats": sorted({r["format"] for r in rows})}
    return {"rows": rows}


def cmd_crossover(args):
    out = []
    for a, b in args.pairs:
        res = theory.format_crossover(a, b, args.rho, args.bracket)
        out.append({"pair": f"{a}:{b}", **res.to_dict()})
    return {"rho": args.rho, "crossovers": out}


def cmd_mc_qsnr(args):
    corpus = empirics.GaussianCorpus(args.tensors, args.shape, args.seed, args.outlier_magnitude)
    rep = empirics.mc_qsnr_scatter(args.pair, corpus, _rotation(args), threads=args.threads)
    if args.out:
        Path(args.out).write_text(_csv_header("mc-qsnr", args._config) + rep.to_csv())
    return {**rep.summary(), "corpus": corpus.to_dict()}


def cmd_crest(args):
    tensors = [read_tensor(p) for p in args.input]
    stats = empirics.crest_factor_stats(tensors[0] if len(tensors) == 1 else tensors,
                                        args.block, args.axis, _rotation(args))
    return stats.to_dict()


def cmd_stability(args):
    return empirics.stability_experiment(args.n, args.precision, args.seed, args.symmetric_clip).to_dict()


def _cells(args):
    return hwcost.CellFactors.load(args.cells) if args.cells else hwcost.CellFactors.default()


def cmd_hwcost(args):
    config = hwcost.MacConfig.for_format(args.format, args.psum_bit_width)
    rep = hwcost.format_cost(config, _cells(args))
    return {"format": args.format, "config": config.to_dict(), **rep.to_dict()}


def cmd_hwcost_mixed(args):
    rep = hwcost.mixed_format_cost(args.scheme, _cells(args))
    return {"scheme": hwcost.ReuseScheme.parse(args.scheme).value, **rep.to_dict()}


def cmd_gen_corpus(args):
    corpus = empirics.GaussianCorpus(args.tensors, args.shape, args.seed, args.outlier_magnitude)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for i in range(corpus.n_tensors):
        path = out / f"tensor_{i:05d}.ftnsr"
        write_tensor(corpus.tensor(i), path, args.dtype)
        files.append(path.name)
    return {"dir": str(out), "files": files, "corpus": corpus.to_dict(), "dtype": args.dtype}


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_rotation(p, default_dim=32):
    p.add_argument("--rotate", action="store_true", help="apply a random Hadamard rotation first")
    p.add_argument("--rotate-dim", type=int, default=default_dim)
    p.add_argument("--seed", type=int, default=0)


def _add_out(p, help="write the JSON envelope here instead of stdout"):
    p.add_argument("--out", help=help)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fmtlab", description="Block quantization format lab")
    ap.add_argument("--version", action="version", version=f"fmtlab {__version__}")
    ap.add_argument("--threads", type=int, default=None, help="worker threads (env FMTLAB_THREADS)")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("formats", help="list registered formats")
    p.add_argument("--json", action="store_true", help="(default) JSON output")
    _add_out(p)
    p.set_defaults(func=cmd_formats)

    p = sub.add_parser("quantize", help="quantize-dequantize an FTNSR1 tensor")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--format", required=True)
    p.add_argument("--axis", type=int, default=-1)
    p.add_argument("--out", help="dequantized tensor (FTNSR1)")
    p.add_argument("--dtype", choices=["f32", "f16", "bf16"], help="output dtype (default: input's)")
    p.add_argument("--report", help="JSON report path")
    p.add_argument("--scale-precision", choices=["bf16", "fp16", "fp32"])
    p.add_argument("--asymmetric", action="store_true", help="INT range [-2^(b-1), 2^(b-1)-1]")
    _add_rotation(p)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("linear-sim", help="six-site linear layer simulation")
    p.add_argument("--format", required=True)
    p.add_argument("--x")
    p.add_argument("--w")
    p.add_argument("--dy")
    p.add_argument("--dims", type=_shape, default=(128, 256, 128), help="m x k x n for Gaussian operands")
    p.add_argument("--rotate-sites", help="comma list of x,w,dy,wt,xt,dyt (default all)")
    p.add_argument("--scale-precision", choices=["bf16", "fp16", "fp32"])
    _add_rotation(p)
    _add_out(p)
    p.set_defaults(func=cmd_linear_sim)

    p = sub.add_parser("qsnr-theory", help="closed-form QSNR for a format")
    p.add_argument("--format", required=True)
    p.add_argument("--kappa", type=float, nargs="+", required=True)
    p.add_argument("--rho", type=float)
    p.add_argument("--allow-beyond", action="store_true", help="allow kappa > sqrt(block size)")
    _add_out(p)
    p.set_defaults(func=cmd_qsnr_theory)

    p = sub.add_parser("qsnr-curve", help="theoretical QSNR over a kappa grid (CSV)")
    p.add_argument("--pairs", type=_pairs, default=_pairs("all"))
    p.add_argument("--kappa", type=_grid, default=_grid("1:16:0.05"))
    p.add_argument("--rho", type=float, default=theory.DEFAULT_RHO)
    p.add_argument("--out", help="CSV path (columns kappa,format,qsnr_db)")
    p.add_argument("--report", help="JSON envelope path (default stdout)")
    p.set_defaults(func=cmd_qsnr_curve)

    p = sub.add_parser("crossover", help="crest factor where INT and FP QSNR meet")
    p.add_argument("--pair", dest="pairs", type=_pairs, default=_pairs("all"))
    p.add_argument("--rho", type=float, default=theory.DEFAULT_RHO)
    p.add_argument("--bracket", type=_bracket, default=(1.0, 16.0))
    _add_out(p)
    p.set_defaults(func=cmd_crossover)

    p = sub.add_parser("mc-qsnr", help="Monte-Carlo QSNR scatter on a Gaussian corpus")
    p.add_argument("--pair", type=_pair, default=("MXINT8", "MXFP8"))
    p.add_argument("--tensors", type=int, default=512)
    p.add_argument("--shape", type=_shape, default=(64, 4096))
    p.add_argument("--outlier-magnitude", type=float, default=0.0)
    p.add_argument("--out", help="CSV path (columns tensor_id,kappa,qsnr_<A>,qsnr_<B>)")
    p.add_argument("--report", help="JSON envelope path (default stdout)")
    _add_rotation(p)
    p.set_defaults(func=cmd_mc_qsnr)

    p = sub.add_parser("crest", help="crest factor statistics of FTNSR1 tensors")
    p.add_argument("--in", dest="input", nargs="+", required=True)
    p.add_argument("--block", type=int, default=32, help="block size, -1 for per-channel")
    p.add_argument("--axis", type=int, default=-1)
    _add_rotation(p)
    _add_out(p)
    p.set_defaults(func=cmd_crest)

    p = sub.add_parser("stability", help="low-precision scaling experiment")
    p.add_argument("--precision", required=True, choices=["bf16", "fp16", "fp32"])
    p.add_argument("--n", type=int, default=4096)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--symmetric-clip", action="store_true")
    _add_out(p)
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("hwcost", help="MAC array area/energy for one format")
    p.add_argument("--format", required=True)
    p.add_argument("--cells", help="cells.json: {gate: {area, energy}, toggle_rate}")
    p.add_argument("--psum-bit-width", type=int, default=hwcost.PSUM_BIT_WIDTH)
    _add_out(p)
    p.set_defaults(func=cmd_hwcost)

    p = sub.add_parser("hwcost-mixed", help="8-bit + 4-bit reuse scheme cost")
    p.add_argument("--scheme", required=True, choices=[s.value for s in hwcost.ReuseScheme])
    p.add_argument("--cells")
    _add_out(p)
    p.set_defaults(func=cmd_hwcost_mixed)

    p = sub.add_parser("gen-corpus", help="write a seeded Gaussian corpus as FTNSR1 files")
    p.add_argument("--tensors", type=int, default=8)
    p.add_argument("--shape", type=_shape, default=(64, 4096))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--outlier-magnitude", type=float, default=0.0)
    p.add_argument("--dtype", choices=["f32", "f16", "bf16"], default="f32")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--report", help="JSON envelope path (default stdout)")
    p.set_defaults(func=cmd_gen_corpus)
    return ap


def _resolved_config(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func",) and not k.startswith("_")}
    return _jsonable(cfg)


# commands whose --out is a data file; their envelope goes to --report
_DATA_OUT = frozenset({"quantize", "qsnr-curve", "mc-qsnr", "gen-corpus"})


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    config = _resolved_config(args)
    config["argv"] = list(argv)
    args._config = config
    if args.command == "mc-qsnr":
        args.threads = empirics.resolve_threads(args.threads)

    t0 = time.perf_counter()
    try:
        result = args.func(args)
    except ConfigError as exc:
        print(f"fmtlab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"fmtlab: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    envelope = {
        "tool": "fmtlab",
        "version": __version__,
        "command": args.command,
        "config": config,
        "result": result,
        "duration_s": time.perf_counter() - t0,
    }
    text = _dumps(envelope) + "\n"
    dest = args.report if args.command in _DATA_OUT else args.out
    if dest:
        Path(dest).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def result_bytes(envelope: dict) -> str:
    """Canonical serialization of an envelope's payload, for replay comparisons."""
    return json.dumps(envelope["result"], sort_keys=True)


def main(argv: list[str] | None = None) -> int:
    return run(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
