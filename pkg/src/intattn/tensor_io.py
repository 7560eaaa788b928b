"""Dense 2-D tensors and their binary file format.

Matrices are plain C-contiguous 2-D ``numpy.ndarray`` objects in one of
four element kinds: float32, int8, uint8, int32.  They are treated as
immutable after construction and may be shared freely across threads.

File format ("ITNS"), little-endian throughout:

    bytes 0-3    magic ``ITNS``
    byte  4      element kind: 0=real32, 1=int8, 2=uint8, 3=int32
    bytes 5-7    reserved, must be zero
    bytes 8-15   rows (u64)
    bytes 16-23  cols (u64)
    then         rows*cols elements, row-major, native width

Element (i, j) lives at payload offset ``i*cols + j``.
"""

import struct

import numpy as np

MAGIC = b"ITNS"
HEADER_SIZE = 24

KIND_CODES = {
    np.dtype(np.float32): 0,
    np.dtype(np.int8): 1,
    np.dtype(np.uint8): 2,
    np.dtype(np.int32): 3,
}
DTYPES_BY_CODE = {code: dt for dt, code in KIND_CODES.items()}


class TensorIOError(Exception):
    """Base class for tensor file errors."""


class MalformedHeaderError(TensorIOError):
    """Bad magic, unknown element kind, nonzero reserved bytes, or zero shape."""


class ElementKindMismatchError(TensorIOError):
    """Stored element kind differs from the kind the caller required."""


class TruncatedPayloadError(TensorIOError):
    """Payload size does not match rows*cols elements."""


def check_matrix(m, name="matrix"):
    """Validate the matrix invariants; returns the array unchanged."""
    if not isinstance(m, np.ndarray) or m.ndim != 2:
        raise ValueError(f"{name} must be a 2-D ndarray, got {type(m).__name__}")
    if m.dtype not in KIND_CODES:
        raise ValueError(f"{name} has unsupported dtype {m.dtype}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"{name} must have at least one row and column, got {m.shape}")
    return m


def save_tensor(m, path):
    """Write a matrix so that load_tensor returns it bit-exactly."""
    check_matrix(m)
    rows, cols = m.shape
    header = MAGIC + struct.pack("<B3xQQ", KIND_CODES[m.dtype], rows, cols)
    payload = np.ascontiguousarray(m).astype(m.dtype.newbyteorder("<"), copy=False)
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload.tobytes())


def load_tensor(path, dtype=None):
    """Read a matrix written by save_tensor.

    If ``dtype`` is given, the stored element kind must match it
    (ElementKindMismatchError otherwise).
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < HEADER_SIZE or raw[:4] != MAGIC:
        raise MalformedHeaderError(f"{path}: not an ITNS tensor file")
    code = raw[4]
    if raw[5:8] != b"\x00\x00\x00":
        raise MalformedHeaderError(f"{path}: reserved header bytes are nonzero")
    if code not in DTYPES_BY_CODE:
        raise MalformedHeaderError(f"{path}: unknown element kind code {code}")
    rows, cols = struct.unpack("<QQ", raw[8:24])
    if rows < 1 or cols < 1:
        raise MalformedHeaderError(f"{path}: invalid shape {rows}x{cols}")
    stored = DTYPES_BY_CODE[code]
    if dtype is not None and np.dtype(dtype) != stored:
        raise ElementKindMismatchError(
            f"{path}: stored element kind is {stored}, caller required {np.dtype(dtype)}"
        )
    expected = rows * cols * stored.itemsize
    got = len(raw) - HEADER_SIZE
    if got != expected:
        raise TruncatedPayloadError(
            f"{path}: payload holds {got} bytes, header promises {expected}"
        )
    data = np.frombuffer(raw, dtype=stored.newbyteorder("<"), offset=HEADER_SIZE)
    return data.astype(stored, copy=True).reshape(rows, cols)
