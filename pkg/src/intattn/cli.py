"""Benchmark and utility command line.

Subcommands:

    breakdown      per-stage latency and throughput rows
    fidelity       error metrics of the integer and quant-only pipelines
                   against the exact reference, plus the P-format ablation
    sweep          (b, c) hyperparameter grid of integer-pipeline fidelity
    gen-tensor     write a seeded random tensor in the binary format
    compare-files  fidelity metrics between two tensor files

Rows are emitted as CSV (header row naming every field, '#' comment lines
first) or as a JSON array of flat objects.  Inputs are standard normal
from numpy's seeded default generator (PCG64), so runs reproduce across
machines.  Throughput counts only the two GEMMs: 4*L^2*d ops over total
time.  INTATTN_THREADS provides the default for --threads.
"""

import argparse
import csv
import dataclasses
import io
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .fidelity import compare
from .gemm import MAX_SEQ_LEN
from .pipeline import (
    AttentionConfig,
    int_attention,
    quant_only_attention,
    reference_attention_timed,
    _stable_softmax,
    _quantize_probs,
)
from .softmax import PFormat
from . import tensor_io

PIPELINES = ("int", "quant_only", "reference")
DEFAULT_LENGTHS = [256, 512, 1024, 2048]

FLOP_FACTOR = 4  # two GEMMs, multiply+add per MAC


@dataclass
class BenchSpec:
    """One benchmark request; validated before any run starts."""

    pipelines: list = field(default_factory=lambda: list(PIPELINES))
    lengths: list = field(default_factory=lambda: list(DEFAULT_LENGTHS))
    d: int = 128
    seeds: list = field(default_factory=lambda: [0])
    threads: int = 1
    b: int = 5
    c: float = 6.6
    p_format: PFormat = PFormat.UINT8X255
    b_grid: list | None = None
    c_grid: list | None = None
    out: str | None = None
    format: str = "csv"
    warmup: int = 3
    iters: int = 10

    def validate(self):
        if not self.lengths:
            raise ValueError("lengths must be non-empty")
        for n in self.lengths:
            if not 1 <= n <= MAX_SEQ_LEN:
                raise ValueError(f"length {n} outside [1, {MAX_SEQ_LEN}]")
        if self.d < 1:
            raise ValueError("dim must be >= 1")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        for p in self.pipelines:
            if p not in PIPELINES:
                raise ValueError(f"unknown pipeline {p!r}")
        if self.format not in ("csv", "json"):
            raise ValueError(f"unknown format {self.format!r}")
        if self.warmup < 0 or self.iters < 1:
            raise ValueError("warmup must be >= 0 and iters >= 1")
        return self


def gen_inputs(length, dim, seed):
    """Seeded standard-normal q, k, v (float32)."""
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((length, dim), dtype=np.float32)
    k = rng.standard_normal((length, dim), dtype=np.float32)
    v = rng.standard_normal((length, dim), dtype=np.float32)
    return q, k, v


def _run_pipeline(name, q, k, v, spec, b=None, c=None):
    cfg = AttentionConfig(
        b=spec.b if b is None else b,
        c=spec.c if c is None else c,
        p_format=spec.p_format,
        threads=spec.threads,
    )
    if name == "int":
        return int_attention(q, k, v, cfg, warmup=spec.warmup, iters=spec.iters)
    if name == "quant_only":
        return quant_only_attention(q, k, v, cfg, warmup=spec.warmup, iters=spec.iters)
    return reference_attention_timed(
        q, k, v, threads=spec.threads, warmup=spec.warmup, iters=spec.iters
    )


def run_breakdown(spec, failures=None):
    """One row per (pipeline, length, seed) with stage times and shares.

    Per-configuration errors abort only that row: they are appended to
    ``failures`` when a list is given, otherwise raised.
    """
    spec.validate()
    rows = []
    for length in spec.lengths:
        for seed in spec.seeds:
            q, k, v = gen_inputs(length, spec.d, seed)
            for name in spec.pipelines:
                try:
                    _, t = _run_pipeline(name, q, k, v, spec)
                except Exception as e:  # noqa: BLE001
                    if failures is None:
                        raise
                    failures.append(f"breakdown pipeline={name} L={length} seed={seed}: {e}")
                    continue
                stage_ns = t.stage_ns()
                stage_sum = sum(stage_ns.values())
                row = {
                    "pipeline": name,
                    "length": length,
                    "dim": spec.d,
                    "seed": seed,
                    "threads": spec.threads,
                    "warmup": spec.warmup,
                    "iters": spec.iters,
                }
                for stage, ns in stage_ns.items():
                    row[f"{stage}_ns"] = ns
                row["total_ns"] = t.total_ns
                for stage, ns in stage_ns.items():
                    row[f"{stage}_share"] = ns / stage_sum
                row["gflops"] = (
                    FLOP_FACTOR * length * length * spec.d / (t.total_ns * 1e-9) / 1e9
                )
                rows.append(row)
    return rows


def run_fidelity(spec, failures=None):
    """Fidelity of each pipeline against the exact reference, plus the
    uint8-vs-int8 probability quantization ablation against exact P."""
    spec.validate()
    rows = []
    fast = dataclasses.replace(spec, warmup=0, iters=1)
    for length in spec.lengths:
        for seed in spec.seeds:
            base = {
                "length": length,
                "dim": spec.d,
                "seed": seed,
                "b": spec.b,
                "c": spec.c,
            }

            def emit(comparison, report):
                rows.append(
                    dict(
                        base,
                        comparison=comparison,
                        cos_sim=report.cos_sim,
                        rel_l1=report.rel_l1,
                        rmse=report.rmse,
                    )
                )

            try:
                q, k, v = gen_inputs(length, spec.d, seed)
                ref, _ = reference_attention_timed(q, k, v, threads=spec.threads)
                for name in spec.pipelines:
                    if name == "reference":
                        emit("reference_vs_reference", compare(ref, ref))
                        continue
                    o, _ = _run_pipeline(name, q, k, v, fast)
                    emit(f"{name}_vs_reference", compare(o, ref))

                # probability-format ablation: quantize exact P both ways
                a = (q.astype(np.float64) @ k.astype(np.float64).T) / np.sqrt(spec.d)
                p_exact = _stable_softmax(a)
                p_u8 = _quantize_probs(p_exact, PFormat.UINT8X255)
                p_i8 = _quantize_probs(p_exact, PFormat.INT8X127)
                emit("p_uint8x255_vs_exact",
                     compare(p_u8.astype(np.float64) / 255, p_exact))
                emit("p_int8x127_vs_exact",
                     compare(p_i8.astype(np.float64) / 127, p_exact))
            except Exception as e:  # noqa: BLE001
                if failures is None:
                    raise
                failures.append(f"fidelity L={length} seed={seed}: {e}")
    return rows


def run_sweep(spec, failures=None):
    """Mean integer-pipeline cosine similarity per (b, c) grid cell."""
    spec.validate()
    b_grid = spec.b_grid or [spec.b]
    c_grid = spec.c_grid or [spec.c]
    if not b_grid or not c_grid:
        raise ValueError("b and c grids must be non-empty")
    rows = []
    for b in b_grid:
        for c in c_grid:
            sims = []
            try:
                for length in spec.lengths:
                    for seed in spec.seeds:
                        q, k, v = gen_inputs(length, spec.d, seed)
                        ref, _ = reference_attention_timed(q, k, v, threads=spec.threads)
                        cfg = AttentionConfig(b=b, c=c, threads=spec.threads)
                        o, _ = int_attention(q, k, v, cfg)
                        sims.append(compare(o, ref).cos_sim)
            except Exception as e:  # noqa: BLE001
                if failures is None:
                    raise
                failures.append(f"sweep b={b} c={c}: {e}")
                continue
            rows.append(
                {
                    "b": b,
                    "c": c,
                    "dim": spec.d,
                    "lengths": "x".join(str(n) for n in spec.lengths),
                    "n_runs": len(sims),
                    "mean_cos_sim": float(np.mean(sims)),
                }
            )
    return rows


def _format_value(v):
    if isinstance(v, float):
        return repr(v)  # shortest round-trip form
    return str(v)


def write_rows(rows, fmt, out, comments=()):
    """Serialize rows to CSV or JSON; ``out`` of None or '-' means stdout."""
    if fmt == "json":
        text = json.dumps(rows, indent=2) + "\n"
    else:
        buf = io.StringIO()
        for line in comments:
            buf.write(f"# {line}\n")
        if rows:
            writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            for row in rows:
                writer.writerow({k: _format_value(v) for k, v in row.items()})
        text = buf.getvalue()
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(out, "w") as f:
            f.write(text)


def _int_list(s):
    return [int(x) for x in s.split(",") if x]


def _float_list(s):
    return [float(x) for x in s.split(",") if x]


def _pipeline_list(s):
    return [x.strip() for x in s.split(",") if x.strip()]


def _default_threads():
    env = os.environ.get("INTATTN_THREADS")
    if env is None:
        return 1
    try:
        return int(env)
    except ValueError:
        raise SystemExit(f"INTATTN_THREADS must be an integer, got {env!r}")


def _add_common(p, lengths_default):
    p.add_argument("--len", dest="lengths", type=_int_list,
                   default=list(lengths_default),
                   help="comma-separated sequence lengths "
                        f"(default {','.join(str(n) for n in lengths_default)})")
    p.add_argument("--dim", type=int, default=128, help="head dimension (default 128)")
    p.add_argument("--seeds", type=_int_list, default=[0],
                   help="comma-separated RNG seeds (default 0)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default INTATTN_THREADS or 1)")
    p.add_argument("--p-format", choices=["uint8", "int8"], default="uint8",
                   help="probability matrix format (default uint8, scale 255)")
    p.add_argument("--out", default=None, help="output path (default stdout)")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--warmup", type=int, default=3,
                   help="discarded warmup iterations per measurement (default 3)")
    p.add_argument("--iters", type=int, default=10,
                   help="measured iterations per configuration; medians are "
                        "reported (default 10)")


def _spec_from_args(args, pipelines=None, b=None, c=None, b_grid=None, c_grid=None):
    return BenchSpec(
        pipelines=pipelines if pipelines is not None else list(PIPELINES),
        lengths=args.lengths,
        d=args.dim,
        seeds=args.seeds,
        threads=args.threads if args.threads is not None else _default_threads(),
        b=b if b is not None else 5,
        c=c if c is not None else 6.6,
        p_format=PFormat.UINT8X255 if args.p_format == "uint8" else PFormat.INT8X127,
        b_grid=b_grid,
        c_grid=c_grid,
        out=args.out,
        format=args.format,
        warmup=args.warmup,
        iters=args.iters,
    ).validate()


def build_parser():
    parser = argparse.ArgumentParser(
        prog="intattn",
        description="Integer attention pipeline benchmarks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("breakdown", help="per-stage latency breakdown")
    _add_common(p, DEFAULT_LENGTHS)
    p.add_argument("--pipelines", type=_pipeline_list,
                   default=list(PIPELINES),
                   help="comma-separated subset of int,quant_only,reference")
    p.add_argument("--b", type=int, default=5, help="LUT bits (default 5)")
    p.add_argument("--c", type=float, default=6.6, help="clip bound (default 6.6)")

    p = sub.add_parser("fidelity", help="pipeline error metrics vs reference")
    _add_common(p, [256, 512])
    p.add_argument("--pipelines", type=_pipeline_list,
                   default=["int", "quant_only"],
                   help="comma-separated subset of int,quant_only,reference")
    p.add_argument("--b", type=int, default=5)
    p.add_argument("--c", type=float, default=6.6)

    p = sub.add_parser("sweep", help="(b, c) fidelity grid for the int pipeline")
    _add_common(p, [256])
    p.add_argument("--b", type=_int_list, default=[2, 3, 4, 5, 6],
                   help="comma-separated LUT bit grid (default 2,3,4,5,6)")
    p.add_argument("--c", type=_float_list, default=[4.4, 5.5, 6.6, 7.7, 8.8],
                   help="comma-separated clip bound grid "
                        "(default 4.4,5.5,6.6,7.7,8.8)")

    p = sub.add_parser("gen-tensor", help="write a seeded random tensor file")
    p.add_argument("--len", dest="rows", type=int, required=True, help="rows")
    p.add_argument("--dim", dest="cols", type=int, required=True, help="cols")
    p.add_argument("--kind", choices=["real32", "int8", "uint8", "int32"],
                   default="real32")
    p.add_argument("--seeds", type=_int_list, default=[0],
                   help="seed (first value used)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("compare-files", help="fidelity metrics between two tensors")
    p.add_argument("file_a")
    p.add_argument("file_b", help="reference tensor")
    p.add_argument("--out", default=None)
    p.add_argument("--format", choices=["csv", "json"], default="csv")

    return parser


def _cmd_gen_tensor(args):
    if args.rows < 1 or args.cols < 1:
        raise ValueError("--len and --dim must be >= 1")
    rng = np.random.default_rng(args.seeds[0])
    shape = (args.rows, args.cols)
    if args.kind == "real32":
        m = rng.standard_normal(shape, dtype=np.float32)
    elif args.kind == "int8":
        m = rng.integers(-127, 128, shape).astype(np.int8)
    elif args.kind == "uint8":
        m = rng.integers(0, 256, shape).astype(np.uint8)
    else:
        m = rng.integers(-(1 << 20), 1 << 20, shape).astype(np.int32)
    tensor_io.save_tensor(m, args.out)
    return 0


def _cmd_compare_files(args):
    a = tensor_io.load_tensor(args.file_a).astype(np.float64)
    b = tensor_io.load_tensor(args.file_b).astype(np.float64)
    r = compare(a, b)
    rows = [{
        "file_a": args.file_a,
        "file_b": args.file_b,
        "cos_sim": r.cos_sim,
        "rel_l1": r.rel_l1,
        "rmse": r.rmse,
    }]
    write_rows(rows, args.format, args.out)
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "gen-tensor":
            return _cmd_gen_tensor(args)
        if args.command == "compare-files":
            return _cmd_compare_files(args)

        if args.command == "breakdown":
            spec = _spec_from_args(args, pipelines=args.pipelines, b=args.b, c=args.c)
            runner, comments = run_breakdown, [
                "stage shares are relative to the stage-time sum",
                f"gflops counts the two GEMMs only: {FLOP_FACTOR}*L^2*d ops / total_ns",
            ]
        elif args.command == "fidelity":
            spec = _spec_from_args(args, pipelines=args.pipelines, b=args.b, c=args.c)
            runner, comments = run_fidelity, [
                "cos_sim is the mean per-row cosine similarity",
            ]
        else:
            spec = _spec_from_args(args, b_grid=args.b, c_grid=args.c)
            runner, comments = run_sweep, [
                "mean_cos_sim: int pipeline vs exact reference, averaged "
                "over lengths and seeds",
            ]
    except ValueError as e:
        parser.error(str(e))  # exits with code 2

    failures = []
    rows = runner(spec, failures=failures)
    if rows:
        write_rows(rows, spec.format, spec.out, comments)
    if failures:
        for f in failures:
            print(f"FAILED {f}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
