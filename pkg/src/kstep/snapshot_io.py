"""Framed binary format for configuration snapshots.

Frame layout (little endian)::

    magic        4s   b"KSEX"
    version      u16  1
    topology     u8   0 = ring, 1 = segment
    reserved     u8   0
    size         u64  number of sites L
    origin       i64  lattice coordinate of site 0
    n_runs       u64
    runs         u32[n_runs]   alternating run lengths, starting with empty sites
    crc32        u32  over every preceding byte of the frame

A file is a concatenation of frames.
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import Iterable

import numpy as np

from .engine import RING, SEGMENT, Configuration

MAGIC = b"KSEX"
VERSION = 1
_HEADER = struct.Struct("<4sHBBQqQ")
_CRC = struct.Struct("<I")
_TOPOLOGY = {RING: 0, SEGMENT: 1}


class SnapshotFormatError(ValueError):
    pass


def rle_encode(occ: np.ndarray) -> np.ndarray:
    occ = np.asarray(occ, dtype=np.uint8)
    if occ.size == 0:
        return np.zeros(0, dtype=np.uint32)
    change = np.nonzero(np.diff(occ))[0] + 1
    bounds = np.concatenate(([0], change, [occ.size]))
    runs = np.diff(bounds)
    if occ[0] == 1:
        runs = np.concatenate(([0], runs))
    return runs.astype(np.uint32)


def rle_decode(runs: np.ndarray, size: int) -> np.ndarray:
    values = np.arange(len(runs)) % 2
    occ = np.repeat(values.astype(np.uint8), np.asarray(runs, dtype=np.int64))
    if occ.size != size:
        raise SnapshotFormatError(f"run lengths sum to {occ.size}, header says {size}")
    return occ


def encode(config: Configuration) -> bytes:
    runs = rle_encode(config.occupancy)
    body = _HEADER.pack(MAGIC, VERSION, _TOPOLOGY[config.topology], 0,
                        config.size, config.origin_offset, runs.size) + runs.tobytes()
    return body + _CRC.pack(zlib.crc32(body))


def decode(buf: bytes, offset: int = 0) -> tuple[Configuration, int]:
    """Decode one frame starting at ``offset``; returns (config, next offset)."""
    if len(buf) - offset < _HEADER.size:
        raise SnapshotFormatError("truncated header")
    magic, version, topo, _, size, origin, nruns = _HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise SnapshotFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise SnapshotFormatError(f"unsupported version {version}")
    start = offset + _HEADER.size
    end = start + 4 * nruns
    if len(buf) < end + _CRC.size:
        raise SnapshotFormatError("truncated payload")
    (crc,) = _CRC.unpack_from(buf, end)
    if zlib.crc32(buf[offset:end]) != crc:
        raise SnapshotFormatError("checksum mismatch")
    runs = np.frombuffer(buf, dtype="<u4", count=nruns, offset=start)
    topology = {v: k for k, v in _TOPOLOGY.items()}.get(topo)
    if topology is None:
        raise SnapshotFormatError(f"unknown topology code {topo}")
    return Configuration(rle_decode(runs, size), topology, origin), end + _CRC.size


def write_snapshots(path: str | Path, configs: Iterable[Configuration]) -> None:
    with open(path, "wb") as fh:
        for c in configs:
            fh.write(encode(c))


def read_snapshots(path: str | Path) -> list[Configuration]:
    buf = Path(path).read_bytes()
    out, pos = [], 0
    while pos < len(buf):
        c, pos = decode(buf, pos)
        out.append(c)
    return out
