"""Project-wide rounding rule.

Every round-to-nearest in this codebase rounds halves away from zero, so
that all kernels, oracles, and file formats are bit-reproducible against
each other.  Integer-only code paths realize the same rule with the exact
formula ``(2*n + d) // (2*d)`` for nonnegative ``n`` and positive ``d``.
"""

import numpy as np


def round_half_away(x):
    """Round to nearest integer, halves away from zero.

    Works elementwise on arrays and on scalars; returns a floating value
    of the input's dtype (callers cast).  Ties are decided on the binary
    floating-point value of ``|x| + 0.5``, the same convention the test
    oracles use.
    """
    x = np.asarray(x)
    return np.copysign(np.floor(np.abs(x) + 0.5), x)
