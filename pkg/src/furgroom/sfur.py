"""SFUR1 binary strand container.

Layout (little-endian): magic ``b"SFUR"``, uint32 version (1), uint32 strand
count N, uint32 points per strand L, then N*L float32 xyz triples. When bit
31 of the points-per-strand word is set, an N-byte uint8 part-label block
follows the coordinates.
"""

import struct

import numpy as np

MAGIC = b"SFUR"
VERSION = 1
LABEL_FLAG = 1 << 31
_HEADER = struct.Struct("<4sIII")


class SfurError(ValueError):
    pass


def encode_sfur(strands, labels=None):
    strands = np.asarray(strands, dtype="<f4")
    if strands.ndim != 3 or strands.shape[2] != 3:
        raise SfurError("strands must have shape (N, L, 3)")
    n, L, _ = strands.shape
    if L >= LABEL_FLAG:
        raise SfurError("too many points per strand")
    word = L
    tail = b""
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (n,) or labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
            raise SfurError("labels must be N values in [0, 255]")
        word |= LABEL_FLAG
        tail = labels.astype(np.uint8).tobytes()
    return _HEADER.pack(MAGIC, VERSION, n, word) + strands.tobytes() + tail


def decode_sfur(data):
    """Returns ``(strands float32 (N, L, 3), labels uint8 (N,) or None)``."""
    if len(data) < _HEADER.size:
        raise SfurError("truncated header")
    magic, version, n, word = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise SfurError("bad magic")
    if version != VERSION:
        raise SfurError(f"unsupported version {version}")
    has_labels = bool(word & LABEL_FLAG)
    L = word & ~LABEL_FLAG
    body = n * L * 12
    expected = _HEADER.size + body + (n if has_labels else 0)
    if len(data) != expected:
        raise SfurError(f"size mismatch: expected {expected} bytes, got {len(data)}")
    strands = np.frombuffer(data, dtype="<f4", count=n * L * 3, offset=_HEADER.size)
    strands = strands.reshape(n, L, 3).copy()
    labels = None
    if has_labels:
        labels = np.frombuffer(data, dtype=np.uint8, count=n, offset=_HEADER.size + body).copy()
    return strands, labels


def write_sfur(path, strands, labels=None):
    with open(path, "wb") as fh:
        fh.write(encode_sfur(strands, labels))


def read_sfur(path):
    with open(path, "rb") as fh:
        return decode_sfur(fh.read())
