"""Binary snapshots of the OTOC vector and CSV series files."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .propagator import PhiVector

__all__ = ["MAGIC", "VERSION", "save_phi", "load_phi"]

MAGIC = b"OTOCPHI\0"
VERSION = 1
# magic, version, n, tick; all little-endian
_HEADER = struct.Struct("<8sIIQ")


def save_phi(path, phi: PhiVector) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, phi.n, phi.tick))
        fh.write(np.ascontiguousarray(phi.data, dtype="<f8").tobytes())


def load_phi(path) -> PhiVector:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, n, tick = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: not an OTOC vector snapshot")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    body = raw[_HEADER.size:]
    if len(body) != 8 * 2**n:
        raise ValueError(f"{path}: expected {2**n} values for n={n}, found {len(body) // 8}")
    data = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return PhiVector(n, data, tick)
