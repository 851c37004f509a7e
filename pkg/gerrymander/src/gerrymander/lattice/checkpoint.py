"""
Column-boundary checkpoints for panel runs.

File layout (little endian):
    magic b"GMCK", u16 version
    header: prime u64, side u16, width u16, columns u16, column u16, cell u16,
            capacity u32, unblocked rows u64, blocked rows u64, run code u8, scalar u8
    body:   arena as u64 (rows x capacity), then sap_total as u64
    trailer: sha256 of everything before it
"""

import hashlib
import os
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from gerrymander.errors import CheckpointMismatch
from gerrymander.lattice.transfer import CountTable, PanelRun

MAGIC = b"GMCK"
VERSION = 2
_PREAMBLE = struct.Struct("<4sH")
_HEADER = struct.Struct("<QHHHHHIQQBB")
_RUN_CODES = {"panel_12": 1, "panel_34": 2}


def _header_for(run: PanelRun, table: CountTable) -> bytes:
    return _HEADER.pack(run.prime, run.side, run.width, run.columns, table.column, table.cell,
                        run.capacity, table.unblocked_rows, len(table.arena) - table.unblocked_rows,
                        _RUN_CODES[run.name], int(run.scalar))


def encode(table: CountTable, run: PanelRun) -> bytes:
    if table.kink != table.width or table.cell != 0:
        raise CheckpointMismatch("checkpoints are only taken at column boundaries")
    payload = (_PREAMBLE.pack(MAGIC, VERSION) + _header_for(run, table)
               + table.arena.astype("<u8").tobytes() + table.sap_total.astype("<u8").tobytes())
    return payload + hashlib.sha256(payload).digest()


def decode(blob: bytes, run: PanelRun) -> CountTable:
    """Rebuild the count table of `run` from checkpoint bytes, refusing foreign files."""
    if len(blob) < _PREAMBLE.size + _HEADER.size + 32:
        raise CheckpointMismatch("checkpoint truncated")
    payload, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointMismatch("checkpoint checksum mismatch")
    magic, version = _PREAMBLE.unpack_from(payload, 0)
    if magic != MAGIC or version != VERSION:
        raise CheckpointMismatch(f"not a version {VERSION} checkpoint")
    (prime, side, width, columns, column, cell, capacity,
     mu, mb, code, scalar) = _HEADER.unpack_from(payload, _PREAMBLE.size)
    if cell != 0:
        raise CheckpointMismatch(f"checkpoint taken inside column {column} at cell {cell}")
    expected = (run.prime, run.side, run.width, run.columns, run.capacity, _RUN_CODES[run.name], int(run.scalar))
    found = (prime, side, width, columns, capacity, code, scalar)
    if found != expected:
        raise CheckpointMismatch(f"checkpoint belongs to another run: {found} != {expected}")
    table = CountTable.empty(width, capacity, prime,
                             forbid_return=run.forbid_return_to_bottom,
                             closure_weight=run.closure_weight,
                             seed_columns=run.seed_columns if run.seed_cycles else 0)
    if (table.unblocked_rows, len(table.arena) - table.unblocked_rows) != (mu, mb):
        raise CheckpointMismatch("checkpoint row counts do not match the signature space")
    body = np.frombuffer(payload, dtype="<u8", offset=_PREAMBLE.size + _HEADER.size)
    if body.size != (mu + mb + 1) * capacity:
        raise CheckpointMismatch("checkpoint body has the wrong size")
    table.arena = body[: (mu + mb) * capacity].reshape(mu + mb, capacity).astype(np.int64)
    table.sap_total = body[(mu + mb) * capacity:].astype(np.int64)
    table.column = column
    return table


class CheckpointStore:
    """One checkpoint file per run fingerprint inside a directory."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def path_for(self, run: PanelRun) -> Path:
        name = run.fingerprint().replace(":", "_").replace("=", "")
        return self.directory / f"{name}.ckpt"

    def save(self, table: CountTable, run: PanelRun) -> Path:
        path = self.path_for(run)
        tmp = path.with_suffix(".tmp")
        with open(tmp, "wb") as f:
            f.write(encode(table, run))
        os.replace(tmp, path)
        return path

    def load(self, run: PanelRun) -> Optional[CountTable]:
        path = self.path_for(run)
        if not path.exists():
            return None
        return decode(path.read_bytes(), run)

    def discard(self, run: PanelRun) -> None:
        path = self.path_for(run)
        if path.exists():
            path.unlink()
