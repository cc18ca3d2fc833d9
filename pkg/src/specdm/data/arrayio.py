"""Reader and writer for the ``.arr`` binary array format.

Layout (all integers little-endian)::

    b"SPDM" | u8 dtype code | u8 ndim | ndim x u32 dims | payload | u32 CRC32(payload)

Dtype codes: 0 = float32, 1 = int32, 2 = uint8. Payload is row-major.
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from ..errors import BadMagicError, ChecksumError, DatasetFormatError, TruncatedFileError

MAGIC = b"SPDM"

DTYPE_CODES = {
    np.dtype("<f4"): 0,
    np.dtype("<i4"): 1,
    np.dtype("u1"): 2,
}
CODE_DTYPES = {code: dt for dt, code in DTYPE_CODES.items()}


def encode_array(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    dt = arr.dtype.newbyteorder("<")
    if dt not in DTYPE_CODES:
        raise DatasetFormatError(f"unsupported dtype {arr.dtype}; expected float32, int32 or uint8")
    if arr.ndim > 255:
        raise DatasetFormatError("too many dimensions")
    payload = np.ascontiguousarray(arr, dtype=dt).tobytes(order="C")
    header = MAGIC + struct.pack("<BB", DTYPE_CODES[dt], arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def decode_array(buf: bytes) -> np.ndarray:
    if len(buf) < 6:
        raise TruncatedFileError("file shorter than header")
    if buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic bytes {buf[:4]!r}")
    code, ndim = struct.unpack_from("<BB", buf, 4)
    if code not in CODE_DTYPES:
        raise DatasetFormatError(f"unknown dtype code {code}")
    off = 6
    if len(buf) < off + 4 * ndim:
        raise TruncatedFileError("file truncated inside dimension block")
    shape = struct.unpack_from(f"<{ndim}I", buf, off)
    off += 4 * ndim
    dt = CODE_DTYPES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    if len(buf) < off + nbytes + 4:
        raise TruncatedFileError(f"expected {nbytes} payload bytes plus checksum, file too short")
    if len(buf) > off + nbytes + 4:
        raise DatasetFormatError("trailing bytes after checksum")
    payload = buf[off:off + nbytes]
    (crc,) = struct.unpack_from("<I", buf, off + nbytes)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ChecksumError("CRC32 mismatch")
    return np.frombuffer(payload, dtype=dt).reshape(shape).copy()


def write_array(path, arr: np.ndarray) -> None:
    Path(path).write_bytes(encode_array(arr))


def read_array(path) -> np.ndarray:
    return decode_array(Path(path).read_bytes())
