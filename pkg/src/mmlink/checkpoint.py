"""Flat numeric checkpoints: one versioned header line, then little-endian float64 values."""
import json
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = "MMLINK-CKPT"
VERSION = 1
DTYPE = np.dtype('<f8')


def save_checkpoint(path, kind: str, meta: dict, values: np.ndarray):
    """Write a checkpoint of `kind` ('nn' or 'mab') with a JSON descriptor."""
    values = np.ascontiguousarray(values, dtype=DTYPE).ravel()
    header = f"{MAGIC} {VERSION} {kind} {json.dumps(meta, sort_keys=True)}\n"
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'wb') as f:
            f.write(header.encode('utf-8'))
            f.write(values.tobytes())
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from e


def load_checkpoint(path, kind: str = None) -> tuple[dict, np.ndarray]:
    """Read a checkpoint; returns (descriptor, values)."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    end = data.find(b'\n')
    if end < 0:
        raise CheckpointError(f"{path}: missing checkpoint header")
    parts = data[:end].decode('utf-8', errors='replace').split(' ', 3)
    if len(parts) != 4 or parts[0] != MAGIC:
        raise CheckpointError(f"{path}: not an mmlink checkpoint")
    if parts[1] != str(VERSION):
        raise CheckpointError(f"{path}: unsupported checkpoint version {parts[1]}")
    if kind is not None and parts[2] != kind:
        raise CheckpointError(f"{path}: expected a '{kind}' checkpoint, found '{parts[2]}'")
    try:
        meta = json.loads(parts[3])
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: corrupt descriptor ({e})") from e
    body = data[end + 1:]
    if len(body) % DTYPE.itemsize:
        raise CheckpointError(f"{path}: truncated body")
    values = np.frombuffer(body, dtype=DTYPE).astype(float)
    expected = meta.get('size')
    if expected is not None and expected != len(values):
        raise CheckpointError(f"{path}: expected {expected} values, found {len(values)}")
    return meta, values
