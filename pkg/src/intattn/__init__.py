"""intattn: a fully integer INT8 attention pipeline for CPUs.

INT8-quantized QK^T and PV matrix products joined by an integer-domain
softmax surrogate (clipping + 8-bit exponential lookup table + integer
normalization), alongside exact and mixed-precision reference pipelines
and fidelity/latency benchmarking.
"""

from .fidelity import FidelityReport, compare
from .gemm import (
    MAX_HEAD_DIM,
    MAX_SEQ_LEN,
    LogitMatrix,
    gemm_pv,
    gemm_qk,
    gemm_real,
    matmul_int8,
)
from .pipeline import (
    AttentionConfig,
    StageTimings,
    int_attention,
    quant_only_attention,
    reference_attention,
    reference_attention_timed,
)
from .quantize import (
    QuantGranularity,
    QuantizedMatrix,
    dequantize,
    quantize_symmetric,
)
from .rounding import round_half_away
from .softmax import (
    ClipThreshold,
    ExpLut,
    PFormat,
    ProbMatrix,
    build_lut,
    compute_c_int,
    dataflow_audit,
    index_softmax,
    index_softmax_grouped,
)
from .tensor_io import (
    ElementKindMismatchError,
    MalformedHeaderError,
    TensorIOError,
    TruncatedPayloadError,
    load_tensor,
    save_tensor,
)

__version__ = "0.1.0"

__all__ = [
    "AttentionConfig",
    "ClipThreshold",
    "ElementKindMismatchError",
    "ExpLut",
    "FidelityReport",
    "LogitMatrix",
    "MalformedHeaderError",
    "MAX_HEAD_DIM",
    "MAX_SEQ_LEN",
    "PFormat",
    "ProbMatrix",
    "QuantGranularity",
    "QuantizedMatrix",
    "StageTimings",
    "TensorIOError",
    "TruncatedPayloadError",
    "build_lut",
    "compare",
    "compute_c_int",
    "dataflow_audit",
    "dequantize",
    "gemm_pv",
    "gemm_qk",
    "gemm_real",
    "index_softmax",
    "index_softmax_grouped",
    "int_attention",
    "load_tensor",
    "matmul_int8",
    "quant_only_attention",
    "quantize_symmetric",
    "reference_attention",
    "reference_attention_timed",
    "round_half_away",
    "save_tensor",
]
