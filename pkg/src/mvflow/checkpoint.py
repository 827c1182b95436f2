"""WVCK checkpoint container.

Layout: magic ``WVCK``, little-endian uint64 header length, a JSON header
{format_version, step, stage, config, tensors, optimizer}, then the raw
tensor payloads concatenated in header order. Tensor entries carry
{name, dtype, shape, offset, byte_length} with offsets relative to the
payload start; offsets must be non-overlapping and in-bounds. The header
holds no timestamps, so identical training runs produce identical bytes.

Optimizer state rides along as ``opt.m.<name>`` / ``opt.v.<name>`` tensors
plus the scalar fields of the AdamW recurrence in the header.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .optim import AdamW

MAGIC = b"WVCK"
FORMAT_VERSION = 1
_DTYPES = ("float32", "float64", "int64", "int32", "uint8", "bool")


class CheckpointError(OSError):
    """Malformed or unreadable checkpoint file."""


def _as_array(value) -> np.ndarray:
    data = value.data if isinstance(value, Tensor) else value
    arr = np.ascontiguousarray(data)
    if arr.dtype.name not in _DTYPES:
        raise ValueError(f"unsupported checkpoint dtype {arr.dtype}")
    return arr


def save_checkpoint(path, params: dict, *, step: int, stage: str,
                    config: dict, optimizer: AdamW | None = None) -> None:
    """Write params (name -> Tensor/ndarray) and optional AdamW state."""
    tensors = {name: _as_array(p) for name, p in params.items()}
    header: dict = {"format_version": FORMAT_VERSION, "step": int(step),
                    "stage": stage, "config": config, "optimizer": None}
    if optimizer is not None:
        for name in params:
            tensors[f"opt.m.{name}"] = _as_array(optimizer.m[name])
            tensors[f"opt.v.{name}"] = _as_array(optimizer.v[name])
        header["optimizer"] = {
            "t": optimizer.t, "lr": optimizer.lr,
            "beta1": optimizer.beta1, "beta2": optimizer.beta2,
            "eps": optimizer.eps, "weight_decay": optimizer.weight_decay,
        }
    entries = []
    offset = 0
    for name in sorted(tensors):
        arr = tensors[name]
        entries.append({"name": name, "dtype": arr.dtype.name,
                        "shape": list(arr.shape), "offset": offset,
                        "byte_length": arr.nbytes})
        offset += arr.nbytes
    header["tensors"] = entries
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for entry in entries:
            fh.write(tensors[entry["name"]].tobytes())
    os.replace(tmp, path)


@dataclass
class Checkpoint:
    step: int
    stage: str
    config: dict
    tensors: dict
    header: dict


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 12:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<Q", raw[4:12])
    if 12 + hlen > len(raw):
        raise CheckpointError(f"{path}: header length {hlen} exceeds file")
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format_version")
    payload = raw[12 + hlen:]
    tensors = {}
    spans = []
    for entry in header["tensors"]:
        dtype = entry["dtype"]
        if dtype not in _DTYPES:
            raise CheckpointError(f"{path}: unsupported dtype {dtype!r}")
        shape = tuple(entry["shape"])
        start, nbytes = entry["offset"], entry["byte_length"]
        expect = int(np.prod(shape, dtype=np.int64)) * np.dtype(dtype).itemsize
        if nbytes != expect:
            raise CheckpointError(f"{path}: {entry['name']} byte_length mismatch")
        if start < 0 or start + nbytes > len(payload):
            raise CheckpointError(f"{path}: {entry['name']} payload out of bounds")
        spans.append((start, start + nbytes, entry["name"]))
        arr = np.frombuffer(payload, dtype=dtype, count=int(np.prod(shape, dtype=np.int64)),
                            offset=start).reshape(shape).copy()
        tensors[entry["name"]] = arr
    spans.sort()
    for (_, end, name), (start, _, other) in zip(spans, spans[1:]):
        if start < end:
            raise CheckpointError(f"{path}: tensors {name} and {other} overlap")
    return Checkpoint(step=int(header["step"]), stage=header["stage"],
                      config=header["config"], tensors=tensors, header=header)


def model_params(ckpt: Checkpoint) -> dict:
    """Trainable Tensor dict (optimizer shadow tensors excluded)."""
    return {name: Tensor(arr, requires_grad=True, name=name)
            for name, arr in ckpt.tensors.items() if not name.startswith("opt.")}


def restore_optimizer(ckpt: Checkpoint, params: dict) -> AdamW | None:
    """Rebuild the AdamW instance saved alongside ``params``, if any."""
    meta = ckpt.header.get("optimizer")
    if meta is None:
        return None
    opt = AdamW(params, lr=meta["lr"], betas=(meta["beta1"], meta["beta2"]),
                eps=meta["eps"], weight_decay=meta["weight_decay"])
    opt.t = int(meta["t"])
    for name in params:
        opt.m[name] = ckpt.tensors[f"opt.m.{name}"].copy()
        opt.v[name] = ckpt.tensors[f"opt.v.{name}"].copy()
    return opt


def write_latest(out_dir, filename: str, step: int, stage: str) -> None:
    """Pointer file marking the newest checkpoint in ``out_dir``."""
    doc = {"path": filename, "step": int(step), "stage": stage}
    with open(os.path.join(out_dir, "latest.json"), "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def read_latest(out_dir) -> str:
    with open(os.path.join(out_dir, "latest.json")) as fh:
        return os.path.join(out_dir, json.load(fh)["path"])
