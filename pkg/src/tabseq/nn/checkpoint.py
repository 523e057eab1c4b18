"""Checkpoint file format.

A checkpoint is one file: a JSON header line (format tag, version, model
spec, preprocessing-artifact hash, seed, tensor directory) followed by the
raw parameter data as little-endian 32-bit floats, concatenated in header
order.
"""

from __future__ import annotations

import json

import numpy as np

from ..errors import RangeError, ShapeError

FORMAT_TAG = "tabseq-checkpoint"
VERSION = 1


def save_checkpoint(
    path,
    params: dict[str, np.ndarray],
    model_spec: dict,
    vocab_hash: str | None = None,
    seed: int | None = None,
) -> None:
    names = sorted(params)
    header = {
        "format": FORMAT_TAG,
        "version": VERSION,
        "model_spec": model_spec,
        "vocab_hash": vocab_hash,
        "seed": seed,
        "tensors": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        for n in names:
            fh.write(np.ascontiguousarray(params[n], dtype="<f4").tobytes())


def load_checkpoint(path):
    """Returns (header dict, params dict of float64 arrays)."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        blob = fh.read()
    try:
        header = json.loads(header_line)
    except json.JSONDecodeError as exc:
        raise RangeError(f"not a checkpoint file: {exc}") from exc
    if header.get("format") != FORMAT_TAG or header.get("version") != VERSION:
        raise RangeError("unsupported checkpoint format or version")
    params = {}
    offset = 0
    for entry in header["tensors"]:
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = 4 * size
        if offset + nbytes > len(blob):
            raise ShapeError("checkpoint data truncated")
        arr = np.frombuffer(blob, dtype="<f4", count=size, offset=offset)
        params[entry["name"]] = arr.astype(np.float64).reshape(entry["shape"])
        offset += nbytes
    if offset != len(blob):
        raise ShapeError("checkpoint has trailing data")
    return header, params
