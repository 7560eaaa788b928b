"""End-to-end attention pipelines and per-stage timing.

Three pipelines over the same (q, k, v) inputs:

    int_attention        INT8 GEMMs joined by the integer softmax path;
                         no real-valued tensor between the logit GEMM
                         output and the value GEMM input.
    quant_only_attention INT8 GEMMs, but the probability path takes the
                         conventional dequantize -> float32 safe softmax
                         -> requantize detour.
    reference_attention  exact real attention, float64 accumulation.

Stage timings use a monotonic clock around each stage; callers may
request warmup iterations plus several measured iterations, in which case
the per-stage medians are reported.  All pipelines are deterministic:
bit-identical outputs for any thread count and across repeated runs.
"""

import math
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from . import softmax as _sm
from .gemm import MAX_SEQ_LEN, gemm_pv, gemm_qk, matmul_int8
from .quantize import (
    PER_COL_GROUP,
    PER_ROW_GROUP,
    PER_TENSOR,
    QuantGranularity,
    quantize_symmetric,
)
from .softmax import (
    PFormat,
    build_lut,
    compute_c_int,
    index_softmax,
    index_softmax_grouped,
)

try:  # BLAS thread cap is best-effort; absence must not break the library
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    threadpool_limits = None


@dataclass(frozen=True)
class AttentionConfig:
    """Pipeline knobs; (b, c) default to the recommended (5, 6.6)."""

    b: int = 5
    c: float = 6.6
    p_format: PFormat = PFormat.UINT8X255
    granularity: QuantGranularity = field(default_factory=QuantGranularity.per_tensor)
    threads: int = 1
    mask: np.ndarray | None = None


@dataclass(frozen=True)
class StageTimings:
    """Wall-clock nanoseconds per stage; zero for stages a pipeline skips."""

    quantize_ns: int
    qk_gemm_ns: int
    softmax_path_ns: int
    pv_gemm_ns: int
    dequantize_ns: int
    total_ns: int

    STAGES = ("quantize", "qk_gemm", "softmax_path", "pv_gemm", "dequantize")

    def stage_ns(self):
        return {
            "quantize": self.quantize_ns,
            "qk_gemm": self.qk_gemm_ns,
            "softmax_path": self.softmax_path_ns,
            "pv_gemm": self.pv_gemm_ns,
            "dequantize": self.dequantize_ns,
        }


def _check_inputs(q, k, v):
    q = np.ascontiguousarray(q, dtype=np.float32)
    k = np.ascontiguousarray(k, dtype=np.float32)
    v = np.ascontiguousarray(v, dtype=np.float32)
    if q.ndim != 2 or q.shape != k.shape or q.shape != v.shape:
        raise ValueError(
            f"q, k, v must share one L x d shape, got {q.shape}, {k.shape}, {v.shape}"
        )
    if q.shape[0] > MAX_SEQ_LEN:
        raise ValueError(f"sequence length exceeds {MAX_SEQ_LEN}")
    return q, k, v


def _check_mask(mask, n):
    if mask is None:
        return None
    mask = np.asarray(mask)
    if mask.shape != (n, n):
        raise ValueError(f"mask must be {n}x{n}, got {mask.shape}")
    return mask.astype(bool)


def _k_granularity(cfg):
    g = cfg.granularity
    if g.kind == PER_TENSOR:
        return g
    if g.kind == PER_ROW_GROUP:
        return g  # keys grouped along rows; one scale per key group
    raise ValueError(
        "pipelines support per-tensor or per-row-group key quantization; "
        "per-column groups mix feature dimensions inside one dot product "
        f"and have no single logit scale (got {g.kind})"
    )


def _stable_softmax(a, mask=None):
    """Numerically stable softmax over rows; fully masked rows map to 0."""
    if mask is not None:
        a = np.where(mask, a.dtype.type(-np.inf), a)
    m = a.max(axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, a.dtype.type(0))
    e = np.exp(a - m)
    s = e.sum(axis=1, keepdims=True)
    return e / np.where(s == 0, a.dtype.type(1), s)


def _quantize_probs(p, p_format):
    """Requantize probabilities in [0, 1] onto the fixed 8-bit grid.

    round-half-away realized as floor(p*scale + 0.5); p <= 1 guarantees
    the result fits without clamping.
    """
    scale = p.dtype.type(p_format.value)
    q = (p * scale + p.dtype.type(0.5)).astype(np.uint8)
    if p_format is PFormat.INT8X127:
        q = q.view(np.int8)
    return q


class _StageClock:
    def __init__(self):
        self.ns = {}

    def stage(self, name):
        return _StageSpan(self, name)


class _StageSpan:
    def __init__(self, clock, name):
        self.clock = clock
        self.name = name

    def __enter__(self):
        self.t0 = time.perf_counter_ns()

    def __exit__(self, *exc):
        self.clock.ns[self.name] = time.perf_counter_ns() - self.t0
        return False


def _run_measured(once, warmup, iters):
    """Run ``once`` warmup+iters times; median per stage and of totals."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    for _ in range(warmup):
        once(_StageClock())
    out = None
    samples = []
    totals = []
    for _ in range(iters):
        clock = _StageClock()
        t0 = time.perf_counter_ns()
        out = once(clock)
        totals.append(time.perf_counter_ns() - t0)
        samples.append(clock.ns)
    med = {
        name: int(statistics.median(s[name] for s in samples))
        for name in StageTimings.STAGES
    }
    timings = StageTimings(
        quantize_ns=med["quantize"],
        qk_gemm_ns=med["qk_gemm"],
        softmax_path_ns=med["softmax_path"],
        pv_gemm_ns=med["pv_gemm"],
        dequantize_ns=med["dequantize"],
        total_ns=int(statistics.median(totals)),
    )
    return out, timings


def _blas_limit(threads):
    if threadpool_limits is None:
        import contextlib

        return contextlib.nullcontext()
    return threadpool_limits(limits=max(1, int(threads)))


def int_attention(q, k, v, cfg=None, warmup=0, iters=1):
    """Fully integer attention; returns (output, stage timings).

    The output is ``(s_v / denom) * (P_hat @ V_hat)`` dequantized to
    float32, with denom 255 (uint8 probabilities) or 127 (signed
    ablation format).
    """
    cfg = cfg or AttentionConfig()
    q, k, v = _check_inputs(q, k, v)
    n, d = q.shape
    mask = _check_mask(cfg.mask, n)
    k_gran = _k_granularity(cfg)

    def once(clock):
        with clock.stage("quantize"):
            qh = quantize_symmetric(q)
            kh = quantize_symmetric(k, k_gran)
            vh = quantize_symmetric(v)
        if k_gran.kind == PER_TENSOR:
            with clock.stage("qk_gemm"):
                lm = gemm_qk(qh, kh)
            with clock.stage("softmax_path"):
                lut = build_lut(cfg.b, cfg.c)
                ci = compute_c_int(cfg.c, d, qh.scales[0], kh.scales[0])
                prob = index_softmax(
                    lm, ci, lut, mask=mask, p_format=cfg.p_format, threads=cfg.threads
                )
        else:
            with clock.stage("qk_gemm"):
                logits = matmul_int8(qh.values, kh.values)
            with clock.stage("softmax_path"):
                lut = build_lut(cfg.b, cfg.c)
                s_q = float(qh.scales[0])
                alphas = [s_q * float(sk) / math.sqrt(d) for sk in kh.scales]
                groups = np.repeat(np.arange(len(alphas)), k_gran.group_size)
                prob = index_softmax_grouped(
                    logits,
                    groups,
                    alphas,
                    cfg.c,
                    lut,
                    mask=mask,
                    p_format=cfg.p_format,
                    threads=cfg.threads,
                )
        with clock.stage("pv_gemm"):
            _sm._note("pv_in", prob.values)
            acc = gemm_pv(prob.values, vh)
        with clock.stage("dequantize"):
            out_scale = np.float32(float(vh.scales[0]) / prob.denom_scale)
            out = acc.astype(np.float32) * out_scale
        return out

    with _blas_limit(cfg.threads):
        return _run_measured(once, warmup, iters)


def quant_only_attention(q, k, v, cfg=None, warmup=0, iters=1):
    """Conventional quantized attention: INT8 GEMMs with the
    dequantize -> float32 softmax -> requantize probability path."""
    cfg = cfg or AttentionConfig()
    q, k, v = _check_inputs(q, k, v)
    n, d = q.shape
    mask = _check_mask(cfg.mask, n)
    k_gran = _k_granularity(cfg)

    def once(clock):
        with clock.stage("quantize"):
            qh = quantize_symmetric(q)
            kh = quantize_symmetric(k, k_gran)
            vh = quantize_symmetric(v)
        with clock.stage("qk_gemm"):
            logits = matmul_int8(qh.values, kh.values)
        with clock.stage("softmax_path"):
            s_q = float(qh.scales[0])
            if k_gran.kind == PER_TENSOR:
                alpha = np.float32(s_q * float(kh.scales[0]) / math.sqrt(d))
                real = logits.astype(np.float32) * alpha
            else:
                col_alpha = np.repeat(
                    kh.scales.astype(np.float64) * (s_q / math.sqrt(d)),
                    k_gran.group_size,
                ).astype(np.float32)
                real = logits.astype(np.float32) * col_alpha[None, :]
            p = _stable_softmax(real, mask)
            phat = _quantize_probs(p, cfg.p_format)
        with clock.stage("pv_gemm"):
            acc = gemm_pv(phat, vh)
        with clock.stage("dequantize"):
            out_scale = np.float32(float(vh.scales[0]) / cfg.p_format.value)
            out = acc.astype(np.float32) * out_scale
        return out

    with _blas_limit(cfg.threads):
        return _run_measured(once, warmup, iters)


def reference_attention(q, k, v, mask=None):
    """Exact scaled-dot-product attention, float64 inside, float32 out."""
    o, _ = reference_attention_timed(q, k, v, mask=mask)
    return o


def reference_attention_timed(q, k, v, mask=None, threads=1, warmup=0, iters=1):
    """reference_attention plus stage timings (quantize/dequantize are 0)."""
    q, k, v = _check_inputs(q, k, v)
    n, d = q.shape
    mask = _check_mask(mask, n)
    inv_sqrt_d = 1.0 / math.sqrt(d)

    def once(clock):
        with clock.stage("quantize"):
            q64 = q.astype(np.float64)
            k64 = k.astype(np.float64)
            v64 = v.astype(np.float64)
        with clock.stage("qk_gemm"):
            a = (q64 @ k64.T) * inv_sqrt_d
        with clock.stage("softmax_path"):
            p = _stable_softmax(a, mask)
        with clock.stage("pv_gemm"):
            o = p @ v64
        with clock.stage("dequantize"):
            out = o.astype(np.float32)
        return out

    with _blas_limit(threads):
        return _run_measured(once, warmup, iters)
