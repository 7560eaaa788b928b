"""Integer-domain softmax replacement (IndexSoftmax).

The operator consumes raw int32 attention logits and produces an 8-bit
probability matrix without any floating-point work on the runtime path:

    delta  = rowmax(A) - A                  (distances from the row max)
    delta' = min(delta, c_int)              (sparsity-aware clipping)
    idx    = round(delta' * (2^b-1)/c_int)  (linear map onto the table)
    e      = lut[idx]                       (8-bit exponential surrogate)
    p      = round(255 * e / rowsum(e))     (integer normalization)

``c_int = round(c / alpha)`` aligns the continuous clip bound c with the
integer logit scale alpha = s_q*s_k/sqrt(d); elements at or beyond the
clip distance land on the table's final entry, which is exactly zero, so
clipped positions contribute nothing to the row sum.

The hot path is a fused row-parallel kernel: the index map is expanded
into a per-call lookup table over [0, c_int) and the normalization uses a
per-row table over the (at most 2^b) distinct surrogate values, so the
per-element work is two gathers and an add.  All arithmetic is exact
integer math; every rounding is round-half-away realized as
``(2n + d) // (2d)``.  Results are bit-identical for any thread count.
"""

import contextlib
import math
import os
from dataclasses import dataclass
from enum import Enum

# The always-available threading layer keeps row-parallel runs portable and
# quiet; integer kernels are bit-identical under any layer, so users may
# still override via the environment.
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

import numba
import numpy as np
from numba import njit, prange

from .gemm import MAX_SEQ_LEN, LogitMatrix
from .rounding import round_half_away

# Above this the expanded index table is not worth its memory; the kernel
# falls back to dividing per element (identical results).
_INDEX_TABLE_CAP = 1 << 22

# c_int beyond any observable effect (int32 logit distances never exceed
# 2^33); capping keeps the widened index arithmetic inside int64.
_C_INT_CAP = 1 << 52


class PFormat(Enum):
    """Output format of the probability matrix: the enum value is the
    fixed denominator scale."""

    UINT8X255 = 255
    INT8X127 = 127


@dataclass(frozen=True)
class ExpLut:
    """2^b-entry uint8 table approximating 255*exp(-x) over [0, c].

    entries[0] == 255, entries[-1] == 0, non-increasing throughout.
    """

    b: int
    c: float
    entries: np.ndarray


@dataclass(frozen=True)
class ClipThreshold:
    """Integer image of the continuous clip bound: max(1, round(c/alpha))."""

    c_int: int


@dataclass(frozen=True)
class ProbMatrix:
    """8-bit attention probabilities with their fixed denominator scale
    (255 for uint8 output, 127 for the signed ablation format)."""

    values: np.ndarray
    denom_scale: int


def build_lut(b, c):
    """Build the exponential lookup table for resolution b and bound c.

    entries[i] = round(255 * exp(-c * i / (2^b - 1))) for i < 2^b - 1,
    and the final entry is forced to zero so clipped elements vanish.
    """
    if not isinstance(b, int) or not 2 <= b <= 8:
        raise ValueError(f"b must be an int in [2, 8], got {b!r}")
    if not (math.isfinite(c) and c > 0):
        raise ValueError(f"c must be positive and finite, got {c!r}")
    n = 1 << b
    i = np.arange(n, dtype=np.float64)
    entries = round_half_away(255.0 * np.exp(-c * i / (n - 1))).astype(np.uint8)
    entries[n - 1] = 0
    return ExpLut(b=b, c=float(c), entries=entries)


def _c_int_from_alpha(c, alpha):
    ci = int(round_half_away(float(c) / float(alpha)))
    return max(1, min(ci, _C_INT_CAP))


def compute_c_int(c, d, s_q, s_k):
    """Clipping threshold in logit units: max(1, round(c*sqrt(d)/(s_q*s_k))).

    Computed as round(c/alpha) with alpha = s_q*s_k/sqrt(d), exactly the
    expression the grouped variant uses per group, so the single-group
    case is bit-identical.
    """
    for name, v in (("c", c), ("d", d), ("s_q", s_q), ("s_k", s_k)):
        if not (math.isfinite(float(v)) and float(v) > 0):
            raise ValueError(f"{name} must be positive and finite, got {v!r}")
    alpha = float(s_q) * float(s_k) / math.sqrt(d)
    return ClipThreshold(c_int=_c_int_from_alpha(c, alpha))


def _index_table(c_int, n_entries):
    """idx for every distance in [0, c_int): round(delta*(2^b-1)/c_int)."""
    k = n_entries - 1
    delta = np.arange(c_int, dtype=np.int64)
    return ((2 * delta * k + c_int) // (2 * c_int)).astype(np.uint8)


@njit(cache=True, parallel=True)
def _idxsoftmax_rows(values, c_int, use_tab, itab, lut, scale_x2, out):
    rows, cols = values.shape
    nlut = lut.shape[0]
    last = nlut - 1
    k = np.int64(last)
    for i in prange(rows):
        row = values[i]
        m = row[0]
        for j in range(1, cols):
            if row[j] > m:
                m = row[j]
        m64 = np.int64(m)
        s = np.uint32(0)
        orow = out[i]
        for j in range(cols):
            delta = m64 - np.int64(row[j])
            if delta >= c_int:
                idx = last
            elif use_tab:
                idx = np.int64(itab[delta])
            else:
                idx = (2 * delta * k + c_int) // (2 * c_int)
            orow[j] = np.uint8(idx)
            s += np.uint32(lut[idx])
        # normalize via the per-row table over the <= 2^b surrogate values
        two_s = np.uint32(2) * s
        rowtab = np.empty(nlut, np.uint8)
        for t in range(nlut):
            rowtab[t] = np.uint8((np.uint32(scale_x2) * np.uint32(lut[t]) + s) // two_s)
        for j in range(cols):
            orow[j] = rowtab[orow[j]]


@njit(cache=True, parallel=True)
def _idxsoftmax_rows_masked(values, c_int, use_tab, itab, lut, scale_x2, mask, out):
    rows, cols = values.shape
    nlut = lut.shape[0]
    last = nlut - 1
    k = np.int64(last)
    for i in prange(rows):
        row = values[i]
        mrow = mask[i]
        m = np.int64(0)
        seen = False
        for j in range(cols):
            if mrow[j] == 0 and (not seen or np.int64(row[j]) > m):
                m = np.int64(row[j])
                seen = True
        orow = out[i]
        if not seen:  # fully masked row: no attention mass anywhere
            for j in range(cols):
                orow[j] = 0
            continue
        s = np.uint32(0)
        for j in range(cols):
            if mrow[j] != 0:
                idx = np.int64(last)  # lut[last] == 0: masked adds nothing
            else:
                delta = m - np.int64(row[j])
                if delta >= c_int:
                    idx = last
                elif use_tab:
                    idx = np.int64(itab[delta])
                else:
                    idx = (2 * delta * k + c_int) // (2 * c_int)
            orow[j] = np.uint8(idx)
            s += np.uint32(lut[idx])
        two_s = np.uint32(2) * s
        rowtab = np.empty(nlut, np.uint8)
        for t in range(nlut):
            rowtab[t] = np.uint8((np.uint32(scale_x2) * np.uint32(lut[t]) + s) // two_s)
        for j in range(cols):
            orow[j] = rowtab[orow[j]]


# Optional dataflow audit used by the integer-path test hook: when a sink
# list is installed, operators record the dtype of every tensor that flows
# through the softmax stage.
_audit_sink = None


@contextlib.contextmanager
def dataflow_audit(sink):
    """Route (tag, dtype) records for softmax-stage tensors into ``sink``."""
    global _audit_sink
    prev = _audit_sink
    _audit_sink = sink
    try:
        yield sink
    finally:
        _audit_sink = prev


def _note(tag, array):
    if _audit_sink is not None:
        _audit_sink.append((tag, np.asarray(array).dtype))


def _check_lut(lut):
    if not isinstance(lut, ExpLut):
        raise TypeError("lut must be an ExpLut")
    if lut.entries[0] != 255 or lut.entries[-1] != 0:
        raise ValueError("lookup table endpoints must be 255 and 0")


def _logit_values(logits):
    values = logits.values if isinstance(logits, LogitMatrix) else np.asarray(logits)
    if values.dtype != np.int32 or values.ndim != 2:
        raise ValueError("logits must be an int32 matrix")
    if values.shape[0] != values.shape[1]:
        raise ValueError(f"logits must be square, got {values.shape}")
    if values.shape[0] > MAX_SEQ_LEN:
        raise ValueError(f"sequence length exceeds {MAX_SEQ_LEN}")
    return np.ascontiguousarray(values)


def _prep_mask(mask, shape):
    mask = np.ascontiguousarray(mask)
    if mask.shape != shape:
        raise ValueError(f"mask shape {mask.shape} does not match logits {shape}")
    return mask.astype(np.uint8)


@contextlib.contextmanager
def _numba_threads(threads):
    prev = numba.get_num_threads()
    numba.set_num_threads(max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS)))
    try:
        yield
    finally:
        numba.set_num_threads(prev)


def index_softmax(logits, c_int, lut, mask=None, p_format=PFormat.UINT8X255, threads=1):
    """Integer softmax surrogate; returns the 8-bit probability matrix.

    ``mask``, when given, is a boolean L x L array marking positions to
    exclude: they are ignored by the row max and receive probability 0.
    A fully masked row comes back all zero.
    """
    values = _logit_values(logits)
    _check_lut(lut)
    ci = c_int.c_int if isinstance(c_int, ClipThreshold) else int(c_int)
    if ci < 1:
        raise ValueError("c_int must be >= 1")
    ci = min(ci, _C_INT_CAP)

    _note("logits", values)
    use_tab = ci <= _INDEX_TABLE_CAP
    itab = _index_table(ci, lut.entries.shape[0]) if use_tab else np.empty(0, np.uint8)
    _note("index_table", itab)
    _note("lut", lut.entries)

    scale = p_format.value
    out = np.empty(values.shape, np.uint8)
    with _numba_threads(threads):
        if mask is None:
            _idxsoftmax_rows(values, ci, use_tab, itab, lut.entries, 2 * scale, out)
        else:
            m8 = _prep_mask(mask, values.shape)
            _note("mask", m8)
            _idxsoftmax_rows_masked(
                values, ci, use_tab, itab, lut.entries, 2 * scale, m8, out
            )
    if p_format is PFormat.INT8X127:
        out = out.view(np.int8)
    _note("prob", out)
    return ProbMatrix(values=out, denom_scale=scale)


def _normalize_surrogates(e, scale):
    """Integer row normalization: round(scale * e / rowsum(e)) per element,
    via (2*scale*e + s) // (2*s) in 32-bit unsigned arithmetic."""
    s = e.sum(axis=1, dtype=np.uint32)
    num = e.astype(np.uint32) * np.uint32(2 * scale) + s[:, None]
    den = np.maximum(2 * s, np.uint32(1))[:, None]
    return (num // den).astype(np.uint8)


def index_softmax_grouped(
    logits,
    group_of_column,
    alphas,
    c,
    lut,
    mask=None,
    p_format=PFormat.UINT8X255,
    common_max=False,
    threads=1,
):
    """Grouped-quantization variant: clipping is group-specific.

    Columns are partitioned by ``group_of_column`` (an int array of length
    L); group g has logit scale ``alphas[g]`` and clip threshold
    ``max(1, round(c / alphas[g]))``.  The lookup table and the row
    normalization are shared across groups.

    By default distances are taken against each group's own row max,
    reading the integer logits literally.  ``common_max=True`` instead
    rescales every group onto the finest group's fixed-point grid
    (rounding in float64) and subtracts one common row max; this mode is
    diagnostic, not part of the integer runtime path.

    With a single group the default mode is bit-identical to
    ``index_softmax``.
    """
    values = _logit_values(logits)
    _check_lut(lut)
    n = values.shape[0]
    groups = np.asarray(group_of_column)
    if groups.shape != (n,):
        raise ValueError(f"group_of_column must have shape ({n},)")
    groups = groups.astype(np.int64)
    alphas = [float(a) for a in alphas]
    if len(alphas) == 0:
        raise ValueError("alphas must be non-empty")
    for g, a in enumerate(alphas):
        if not (math.isfinite(a) and a > 0):
            raise ValueError(f"alpha for group {g} must be positive, got {a!r}")
    if groups.min() < 0 or groups.max() >= len(alphas):
        raise ValueError("every column must map to a group in [0, len(alphas))")

    nlut = lut.entries.shape[0]
    k = np.int64(nlut - 1)
    m8 = _prep_mask(mask, values.shape).astype(bool) if mask is not None else None
    e = np.zeros(values.shape, np.uint8)
    scale = p_format.value

    if common_max:
        alpha_star = min(alphas)
        ratio = np.array([a / alpha_star for a in alphas], dtype=np.float64)
        rescaled = round_half_away(values.astype(np.float64) * ratio[groups][None, :])
        if np.abs(rescaled).max() >= float(1 << 62):
            raise ValueError("group scale ratios too large to rescale exactly")
        rescaled = rescaled.astype(np.int64)
        c_int = np.int64(_c_int_from_alpha(c, alpha_star))
        work = np.where(m8, np.int64(-(1 << 62)), rescaled) if m8 is not None else rescaled
        m = work.max(axis=1)
        delta = np.maximum(m[:, None] - rescaled, 0)
        dp = np.minimum(delta, c_int)
        idx = (2 * dp * k + c_int) // (2 * c_int)
        e = lut.entries[idx]
    else:
        for g, alpha in enumerate(alphas):
            cols = np.flatnonzero(groups == g)
            if cols.size == 0:
                continue
            sub = values[:, cols].astype(np.int64)
            c_int = np.int64(_c_int_from_alpha(c, alpha))
            if m8 is not None:
                msub = m8[:, cols]
                work = np.where(msub, np.int64(-(1 << 62)), sub)
                m = work.max(axis=1)
            else:
                m = sub.max(axis=1)
            delta = np.maximum(m[:, None] - sub, 0)
            dp = np.minimum(delta, c_int)
            idx = (2 * dp * k + c_int) // (2 * c_int)
            e[:, cols] = lut.entries[idx]

    if m8 is not None:
        e[m8] = 0
    _note("surrogates", e)
    out = _normalize_surrogates(e, scale)
    if p_format is PFormat.INT8X127:
        out = out.view(np.int8)
    _note("prob", out)
    return ProbMatrix(values=out, denom_scale=scale)
