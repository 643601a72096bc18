"""Reader/writer for the TLSCAL1 calibration container.

Layout (all integers little-endian int32, payload little-endian float32)::

    magic        7 bytes   b"TLSCAL1"
    num_records  int32
    dim          int32     channel width shared by every record
    record*      repeated num_records times:
        group    int32     KV group the record belongs to
        kind     int32     0 = query, 1 = key
        head     int32     query head within the group; -1 for keys
        rows     int32
        payload  rows * dim float32, row-major

See docs/formats.md for the worked byte example.
"""

import struct
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from tlsattn.errors import InputError

MAGIC = b"TLSCAL1"
QUERY, KEY = 0, 1
_HEADER = struct.Struct("<ii")
_RECORD = struct.Struct("<iiii")


@dataclass
class CalibrationGroup:
    queries: dict = field(default_factory=dict)  # head -> (rows, d)
    keys: list = field(default_factory=list)

    def query_list(self):
        return [self.queries[h] for h in sorted(self.queries)]

    def key_matrix(self):
        return np.concatenate(self.keys, axis=0)


def write_calibration(path, groups, dim=None):
    """Write ``groups``: a list of (per-head query matrices, key matrix)."""
    records = []
    for g, (queries, keys) in enumerate(groups):
        for h, q in enumerate(queries):
            records.append((g, QUERY, h, np.asarray(q)))
        records.append((g, KEY, -1, np.asarray(keys)))
    if dim is None:
        dim = records[0][3].shape[1] if records else 0
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(len(records), dim))
        for g, kind, h, mat in records:
            if mat.ndim != 2 or mat.shape[1] != dim:
                raise InputError(f"record for group {g} has shape {mat.shape}, dim {dim}")
            fh.write(_RECORD.pack(g, kind, h, mat.shape[0]))
            fh.write(np.ascontiguousarray(mat, dtype="<f4").tobytes())


def read_calibration(path):
    """Return (dim, {group: CalibrationGroup})."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(MAGIC)] != MAGIC:
        raise InputError(f"{path}: not a TLSCAL1 file")
    off = len(MAGIC)
    if len(data) < off + _HEADER.size:
        raise InputError(f"{path}: truncated header")
    count, dim = _HEADER.unpack_from(data, off)
    if count < 0 or dim < 1:
        raise InputError(f"{path}: bad header (records {count}, dim {dim})")
    off += _HEADER.size
    groups = defaultdict(CalibrationGroup)
    for i in range(count):
        if len(data) < off + _RECORD.size:
            raise InputError(f"{path}: truncated at record {i}")
        g, kind, h, rows = _RECORD.unpack_from(data, off)
        off += _RECORD.size
        nbytes = rows * dim * 4
        if rows < 0 or len(data) < off + nbytes:
            raise InputError(f"{path}: truncated payload in record {i}")
        mat = np.frombuffer(data, dtype="<f4", count=rows * dim, offset=off).reshape(rows, dim)
        off += nbytes
        if kind == QUERY:
            groups[g].queries[h] = mat.astype(np.float64)
        elif kind == KEY:
            groups[g].keys.append(mat.astype(np.float64))
        else:
            raise InputError(f"{path}: record {i} has unknown kind {kind}")
    if off != len(data):
        raise InputError(f"{path}: {len(data) - off} trailing bytes")
    if not groups:
        raise InputError(f"{path}: empty calibration set")
    for g, grp in groups.items():
        if not grp.queries or not grp.keys:
            raise InputError(f"{path}: group {g} needs both query and key records")
    return dim, dict(groups)
