"""Binary checkpoints.

Layout::

    b"SRIEM1" | uint32 LE header length | UTF-8 JSON header | float64 LE arrays

The header records dims, variant, loss mode, the vocabulary with its hash and
the name/shape of every array in file order.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct

import numpy as np

from .dataset import Vocabulary
from .errors import IncompatibleCheckpointError
from .model import ModelConfig, ModelParams, check_shapes
from .ndmath import Tensor

MAGIC = b"SRIEM1"
VERSION = 1


def vocab_hash(keys) -> str:
    return hashlib.sha256(json.dumps(list(keys)).encode("utf-8")).hexdigest()


def save_checkpoint(params: ModelParams, path) -> None:
    cfg = params.config
    keys = params.vocab.keys if params.vocab is not None else None
    header = {
        "version": VERSION,
        "d": cfg.d, "l": cfg.l, "n": cfg.n_items,
        "variant": cfg.variant, "loss_mode": cfg.loss_mode, "scale_by": cfg.scale_by,
        "vocab_hash": vocab_hash(keys) if keys is not None else None,
        "vocab": keys,
        "arrays": [{"name": k, "shape": list(t.shape)} for k, t in params.tensors.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for t in params.tensors.values():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path, vocab: Vocabulary | None = None) -> ModelParams:
    """Read a checkpoint; with ``vocab`` given, reject a checkpoint trained on another vocabulary."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(MAGIC)] != MAGIC:
        raise IncompatibleCheckpointError(f"{path}: bad magic, not a checkpoint")
    pos = len(MAGIC)
    if len(raw) < pos + 4:
        raise IncompatibleCheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    try:
        header = json.loads(raw[pos: pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IncompatibleCheckpointError(f"{path}: unreadable header ({exc})") from None
    pos += hlen
    if header.get("version") != VERSION:
        raise IncompatibleCheckpointError(f"{path}: unsupported version {header.get('version')!r}")

    keys = header.get("vocab")
    if keys is not None and vocab_hash(keys) != header.get("vocab_hash"):
        raise IncompatibleCheckpointError(f"{path}: stored vocabulary does not match its hash")
    if vocab is not None and header.get("vocab_hash") != vocab_hash(vocab.keys):
        raise IncompatibleCheckpointError(f"{path}: checkpoint was trained on a different vocabulary")

    try:
        config = ModelConfig(n_items=header["n"], d=header["d"], l=header["l"],
                             variant=header["variant"], loss_mode=header["loss_mode"],
                             scale_by=header.get("scale_by", "sqrt-d"))
    except (KeyError, ValueError) as exc:
        raise IncompatibleCheckpointError(f"{path}: bad header field ({exc})") from None

    tensors = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        nbytes = 8 * int(np.prod(shape))
        if pos + nbytes > len(raw):
            raise IncompatibleCheckpointError(f"{path}: truncated while reading {entry['name']}")
        data = np.frombuffer(raw, dtype="<f8", count=nbytes // 8, offset=pos).reshape(shape)
        tensors[entry["name"]] = Tensor(data.astype(np.float64), requires_grad=True, name=entry["name"])
        pos += nbytes
    if pos != len(raw):
        raise IncompatibleCheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
    params = ModelParams(config, tensors, Vocabulary(keys) if keys is not None else None)
    try:
        check_shapes(params)
    except ValueError as exc:
        raise IncompatibleCheckpointError(f"{path}: {exc}") from None
    if keys is not None and len(keys) != config.n_items:
        raise IncompatibleCheckpointError(f"{path}: vocabulary size {len(keys)} != n={config.n_items}")
    return params
