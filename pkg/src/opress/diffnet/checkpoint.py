"""Checkpoint files.

Layout::

    b"OPCK" | u32 version | u32 header_len | header (UTF-8 JSON)
    | raw little-endian arrays in header["arrays"] order

The header carries the architecture, seed, step, a hash of the training
config, and name/shape/dtype of every stored array (parameters, then the
optional Adam moments). JSON keys are sorted so identical runs produce
identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import CheckpointError, IoFailure
from .adam import AdamState
from .model import Model, build_model

MAGIC = b"OPCK"
VERSION = 1
_PRE = struct.Struct("<4sII")


def config_hash(config: dict | None) -> str:
    if not config:
        return ""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass
class Checkpoint:
    model: Model
    step: int = 0
    epoch: int = 0
    config: dict = field(default_factory=dict)
    adam: AdamState | None = None
    history: list = field(default_factory=list)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    model = ckpt.model
    arrays = [(f"param/{k}", v) for k, v in model.params.items()]
    adam_meta = None
    if ckpt.adam is not None and ckpt.adam.m:
        a = ckpt.adam
        adam_meta = {"lr": a.lr, "beta1": a.beta1, "beta2": a.beta2, "eps": a.eps, "t": a.t}
        arrays += [(f"adam_m/{k}", v) for k, v in a.m.items()]
        arrays += [(f"adam_v/{k}", v) for k, v in a.v.items()]
    header = {
        "format": "opress-checkpoint",
        "architecture": model.arch_dict(),
        "seed": model.seed,
        "step": ckpt.step,
        "epoch": ckpt.epoch,
        "config": ckpt.config,
        "config_hash": config_hash(ckpt.config),
        "adam": adam_meta,
        "history": ckpt.history,
        "arrays": [{"name": n, "shape": list(v.shape), "dtype": v.dtype.name} for n, v in arrays],
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(_PRE.pack(MAGIC, VERSION, len(head)))
            fh.write(head)
            for _, v in arrays:
                fh.write(np.ascontiguousarray(v, dtype=v.dtype.newbyteorder("<")).tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < _PRE.size or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not an opress checkpoint")
    _, version, hlen = _PRE.unpack_from(raw)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[_PRE.size:_PRE.size + hlen].decode("utf-8"))
    arch = header["architecture"]
    model = build_model(arch["depth"], arch["base_channels"], header["seed"],
                        arch["activation"], arch["alpha"], arch["downsample"],
                        arch["head"], arch["dtype"])
    offset = _PRE.size + hlen
    loaded = OrderedDict()
    for entry in header["arrays"]:
        dt = np.dtype(entry["dtype"]).newbyteorder("<")
        count = int(np.prod(entry["shape"], dtype=np.int64))
        if offset + count * dt.itemsize > len(raw):
            raise CheckpointError(f"{path}: truncated array {entry['name']}")
        a = np.frombuffer(raw, dtype=dt, count=count, offset=offset)
        loaded[entry["name"]] = a.reshape(entry["shape"]).astype(dt.newbyteorder("="))
        offset += count * dt.itemsize
    for k in model.params:
        if f"param/{k}" not in loaded:
            raise CheckpointError(f"{path}: missing parameter {k}")
        model.params[k] = loaded[f"param/{k}"]
    adam = None
    if header.get("adam"):
        meta = header["adam"]
        adam = AdamState(meta["lr"], meta["beta1"], meta["beta2"], meta["eps"], meta["t"])
        for k in model.params:
            adam.m[k] = loaded[f"adam_m/{k}"]
            adam.v[k] = loaded[f"adam_v/{k}"]
    return Checkpoint(model, header["step"], header.get("epoch", 0), header.get("config", {}),
                      adam, header.get("history", []))
