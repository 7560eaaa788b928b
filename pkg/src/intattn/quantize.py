"""Symmetric INT8 quantization of real matrices.

Per tensor or per group of consecutive rows/columns:

    scale(g) = max(eps, max|X_g|) / 127
    values   = clamp(round_half_away(X / scale), -127, 127)

Zero point is fixed at 0 and the clamp is symmetric at -127 (never -128),
so every int8*int8 product fits in 15 bits.  The eps floor (1e-12) lets
an all-zero tensor quantize without dividing by zero.
"""

from dataclasses import dataclass

import numpy as np

from .rounding import round_half_away

EPS = 1e-12

PER_TENSOR = "per_tensor"
PER_ROW_GROUP = "per_row_group"
PER_COL_GROUP = "per_col_group"


@dataclass(frozen=True)
class QuantGranularity:
    """Scale granularity: one scale for the whole tensor, or one per group
    of ``group_size`` consecutive rows or columns."""

    kind: str = PER_TENSOR
    group_size: int | None = None

    @classmethod
    def per_tensor(cls):
        return cls(PER_TENSOR, None)

    @classmethod
    def per_row_group(cls, group_size):
        return cls(PER_ROW_GROUP, int(group_size))

    @classmethod
    def per_col_group(cls, group_size):
        return cls(PER_COL_GROUP, int(group_size))

    def num_groups(self, shape):
        rows, cols = shape
        if self.kind == PER_TENSOR:
            return 1
        if self.group_size is None or self.group_size < 1:
            raise ValueError("group_size must be >= 1")
        dim = rows if self.kind == PER_ROW_GROUP else cols
        if dim % self.group_size != 0:
            raise ValueError(
                f"group_size {self.group_size} does not divide dimension {dim}"
            )
        return dim // self.group_size


@dataclass(frozen=True)
class QuantizedMatrix:
    """int8 values plus the positive scale(s) that dequantize them.

    The dequantization model is ``X ~ scale(g) * values`` within group g.
    ``scales`` has length 1 for per-tensor granularity, else one entry per
    group in storage order.
    """

    values: np.ndarray
    scales: np.ndarray
    granularity: QuantGranularity

    @property
    def shape(self):
        return self.values.shape

    def scale_grid(self):
        """Scales broadcast to the full matrix shape."""
        rows, cols = self.values.shape
        g = self.granularity
        if g.kind == PER_TENSOR:
            return np.broadcast_to(self.scales.reshape(1, 1), (rows, cols))
        if g.kind == PER_ROW_GROUP:
            return np.broadcast_to(
                np.repeat(self.scales, g.group_size).reshape(rows, 1), (rows, cols)
            )
        return np.broadcast_to(
            np.repeat(self.scales, g.group_size).reshape(1, cols), (rows, cols)
        )


def _group_maxabs(x, granularity):
    """Max |x| per group, in storage order."""
    if granularity.kind == PER_TENSOR:
        return np.array([np.abs(x).max()], dtype=np.float32)
    gs = granularity.group_size
    if granularity.kind == PER_ROW_GROUP:
        blocks = np.abs(x).reshape(x.shape[0] // gs, gs, x.shape[1])
        return blocks.max(axis=(1, 2)).astype(np.float32)
    blocks = np.abs(x).reshape(x.shape[0], x.shape[1] // gs, gs)
    return blocks.max(axis=(0, 2)).astype(np.float32)


def quantize_symmetric(x, granularity=QuantGranularity.per_tensor()):
    """Quantize a real matrix to int8 with symmetric per-group scales."""
    x = np.ascontiguousarray(x, dtype=np.float32)
    if x.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={x.ndim}")
    if not np.isfinite(x).all():
        raise ValueError("input contains non-finite elements")
    granularity.num_groups(x.shape)

    scales = np.maximum(_group_maxabs(x, granularity), np.float32(EPS)) / np.float32(127)
    if granularity.kind == PER_TENSOR:
        grid = scales[0]
    elif granularity.kind == PER_ROW_GROUP:
        grid = np.repeat(scales, granularity.group_size)[:, None]
    else:
        grid = np.repeat(scales, granularity.group_size)[None, :]

    q = round_half_away(x / grid)
    values = np.clip(q, -127, 127).astype(np.int8)
    return QuantizedMatrix(values=values, scales=scales, granularity=granularity)


def dequantize(q):
    """Map int8 values back to real: scale(g) * value, elementwise."""
    return (q.values.astype(np.float32) * q.scale_grid()).astype(np.float32)
