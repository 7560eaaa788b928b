"""Integer matrix products for the two heavy attention GEMMs.

Results are exact int32 accumulations of int8 (and uint8*int8) products.
The kernels delegate to BLAS in float32 or float64: every product and
every partial sum is an integer whose magnitude stays below the mantissa
bound (2**24 for float32, 2**53 for float64), so floating accumulation in
any order, with or without FMA, reproduces exact integer arithmetic.  The
dtype is chosen per call from the proven bound; the test suite checks the
kernels bit-exactly against an independent 64-bit integer triple loop.

Because accumulation is exact, results are bit-identical for every BLAS
thread count and blocking strategy.
"""

from dataclasses import dataclass
import math

import numpy as np
from threadpoolctl import threadpool_limits

from .quantize import PER_TENSOR, QuantizedMatrix

# Accumulator bounds from the element ranges: |q| <= 127 on the int8 side,
# p <= 255 on the uint8 side.
MAX_HEAD_DIM = 131070  # d * 127 * 127 fits int32
MAX_SEQ_LEN = 65536  # L * 255 * 127 fits int32

_F32_MANTISSA = 2**24
_F53_MANTISSA = 2**53


@dataclass(frozen=True)
class LogitMatrix:
    """Raw integer attention logits and the scale mapping them to reals.

    ``values[i, j]`` is the exact int32 dot product of query row i and key
    row j; ``alpha = s_q * s_k / sqrt(d)`` rescales them to the real logit
    range.
    """

    values: np.ndarray
    alpha: float


def _exact_int_matmul(a, b, max_prod):
    """a @ b on integer arrays via exact floating accumulation.

    ``max_prod`` bounds |a[i,k] * b[k,j]|; with k_dim terms the whole
    accumulation stays below the chosen float mantissa bound, hence exact.
    """
    k_dim = a.shape[1]
    bound = k_dim * max_prod
    if bound < _F32_MANTISSA:
        f = np.float32
    elif bound < _F53_MANTISSA:
        f = np.float64
    else:  # unreachable under the enforced shape caps
        raise ValueError(f"accumulation bound {bound} exceeds exact float range")
    return (a.astype(f) @ b.astype(f)).astype(np.int32)


def _limits(threads):
    if threads is None:
        import contextlib

        return contextlib.nullcontext()
    return threadpool_limits(limits=int(threads))


def matmul_int8(a_values, b_t_values, threads=None):
    """Exact int32 product of two int8 matrices, right operand pre-transposed.

    Computes ``a @ b_t.T`` where both are stored row-major L x d; this is
    the raw logit product, shared by the per-tensor and grouped paths.
    """
    if a_values.dtype != np.int8 or b_t_values.dtype != np.int8:
        raise ValueError("matmul_int8 expects int8 operands")
    if a_values.shape[1] != b_t_values.shape[1]:
        raise ValueError(
            f"inner dimensions differ: {a_values.shape} vs {b_t_values.shape}"
        )
    if a_values.shape[1] > MAX_HEAD_DIM:
        raise ValueError(f"head dimension exceeds accumulator bound {MAX_HEAD_DIM}")
    with _limits(threads):
        return _exact_int_matmul(a_values, b_t_values.T, 127 * 127)


def gemm_qk(qhat, khat, threads=None):
    """Logit GEMM: exact Q_hat @ K_hat^T plus alpha = s_q*s_k/sqrt(d).

    Both operands are per-tensor quantized L x d matrices; K is taken in
    its natural L x d layout (row per key), i.e. already transposed for
    the product.  Grouped scales go through the grouped softmax instead.
    """
    for name, m in (("qhat", qhat), ("khat", khat)):
        if not isinstance(m, QuantizedMatrix):
            raise TypeError(f"{name} must be a QuantizedMatrix")
        if m.granularity.kind != PER_TENSOR:
            raise ValueError(
                "gemm_qk requires per-tensor scales; use matmul_int8 plus "
                "index_softmax_grouped for grouped quantization"
            )
    values = matmul_int8(qhat.values, khat.values, threads=threads)
    d = qhat.values.shape[1]
    alpha = float(qhat.scales[0]) * float(khat.scales[0]) / math.sqrt(d)
    return LogitMatrix(values=values, alpha=alpha)


def gemm_pv(phat, vhat, threads=None):
    """Value GEMM: exact int32 product of the 8-bit probability matrix
    with the quantized values.

    ``phat`` is the L x L probability matrix, uint8 in the default
    pipeline or int8 (values in [0, 127]) in the signed ablation mode.
    The output carries no scale; the pipeline owns s_v / prob_scale.
    """
    values = vhat.values if isinstance(vhat, QuantizedMatrix) else vhat
    if phat.dtype == np.uint8:
        max_prod = 255 * 127
    elif phat.dtype == np.int8:
        max_prod = 127 * 127
    else:
        raise ValueError(f"phat must be uint8 or int8, got {phat.dtype}")
    if values.dtype != np.int8:
        raise ValueError("vhat must hold int8 values")
    if phat.ndim != 2 or phat.shape[0] != phat.shape[1]:
        raise ValueError(f"phat must be square, got {phat.shape}")
    if phat.shape[1] != values.shape[0]:
        raise ValueError(f"dimension mismatch: {phat.shape} @ {values.shape}")
    if phat.shape[1] > MAX_SEQ_LEN:
        raise ValueError(f"sequence length exceeds accumulator bound {MAX_SEQ_LEN}")
    with _limits(threads):
        return _exact_int_matmul(phat, values, max_prod)


def gemm_real(a, b_transposed, threads=None):
    """Real float32 GEMM ``a @ b_transposed.T`` for reference paths."""
    a = np.ascontiguousarray(a, dtype=np.float32)
    b_transposed = np.ascontiguousarray(b_transposed, dtype=np.float32)
    if a.shape[1] != b_transposed.shape[1]:
        raise ValueError(f"inner dimensions differ: {a.shape} vs {b_transposed.shape}")
    with _limits(threads):
        return a @ b_transposed.T
