"""Error metrics between attention outputs or probability matrices.

Cosine similarity is averaged per row (rows are the semantic unit of an
attention map); relative L1 and RMSE are taken over the flattened
tensors.  All accumulation is double precision.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FidelityReport:
    cos_sim: float
    rel_l1: float
    rmse: float


def compare(a, b_ref):
    """Compare ``a`` against the reference ``b_ref``.

    Zero rows: a pair of zero rows counts as cosine 1, a single zero row
    as 0.  An all-zero reference has no relative L1 and raises.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b_ref, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError("compare expects 2-D matrices")
    abs_b_sum = np.abs(b).sum()
    if abs_b_sum == 0:
        raise ValueError("reference is all zero; relative L1 is undefined")

    dots = np.einsum("ij,ij->i", a, b)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    both_zero = (na == 0) & (nb == 0)
    either_zero = (na == 0) | (nb == 0)
    denom = np.where(either_zero, 1.0, na * nb)
    cos_rows = np.where(both_zero, 1.0, np.where(either_zero, 0.0, dots / denom))

    diff = a - b
    return FidelityReport(
        cos_sim=float(cos_rows.mean()),
        rel_l1=float(np.abs(diff).sum() / abs_b_sum),
        rmse=float(np.sqrt(np.mean(diff * diff))),
    )
