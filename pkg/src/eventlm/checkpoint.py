"""Checkpoint container: named tensors plus a JSON metadata header.

Layout:  magic ``EVLM`` | u32 format version | u64 header length |
header JSON (utf-8) | raw payload.  Each tensor is stored row-major,
little-endian, at a header-recorded offset.  Prune masks are stored in the
header as base64 bitsets; the model config, rng seed, and training step
ride along as metadata.
"""

from __future__ import annotations

import base64
import json
import struct

import numpy as np

from . import __version__
from .errors import DataError
from .model import LmConfig, LmModel

MAGIC = b"EVLM"
FORMAT_VERSION = 1


def _mask_to_b64(mask):
    packed = np.packbits(np.ascontiguousarray(mask).reshape(-1))
    return base64.b64encode(packed.tobytes()).decode("ascii")


def _mask_from_b64(data, shape):
    packed = np.frombuffer(base64.b64decode(data), dtype=np.uint8)
    bits = np.unpackbits(packed)[:int(np.prod(shape))]
    return bits.reshape(shape).astype(bool)


def save_checkpoint(path, model: LmModel, rng_seed=None, training_step=0,
                    extra_meta=None):
    slots = model.param_slots()
    tensors = []
    payload = bytearray()
    for slot in slots:
        arr = np.ascontiguousarray(slot.array)
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        tensors.append({
            "name": slot.name,
            "shape": list(arr.shape),
            "dtype": arr.dtype.newbyteorder("<").str,
            "offset": len(payload),
            "nbytes": len(raw),
        })
        payload.extend(raw)
    masks = {name: {"shape": list(m.mask.shape), "bits": _mask_to_b64(m.mask)}
             for name, m in model.masked_tensors()}
    header = {
        "meta": {
            "code_version": __version__,
            "config": model.config.to_dict(),
            "dtype": model.dtype.str,
            "rng_seed": rng_seed,
            "training_step": int(training_step),
            **(extra_meta or {}),
        },
        "tensors": tensors,
        "masks": masks,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(bytes(payload))
    return path


def read_header(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise DataError(f"{path} is not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        return json.loads(fh.read(hlen).decode("utf-8"))


def load_checkpoint(path):
    """Rebuild the model; returns (model, meta)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise DataError(f"{path} is not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    payload = blob[16 + hlen:]

    meta = header["meta"]
    config = LmConfig(**meta["config"])
    model = LmModel(config, dtype=np.dtype(meta["dtype"]))

    slot_map = {s.name: s for s in model.param_slots()}
    for spec in header["tensors"]:
        if spec["name"] not in slot_map:
            raise DataError(f"unknown tensor {spec['name']} in checkpoint")
        arr = np.frombuffer(payload[spec["offset"]:spec["offset"] + spec["nbytes"]],
                            dtype=np.dtype(spec["dtype"]))
        slot = slot_map[spec["name"]]
        if list(slot.array.shape) != spec["shape"]:
            raise DataError(f"shape mismatch for {spec['name']}")
        slot.array[...] = arr.reshape(spec["shape"])

    mask_map = dict(model.masked_tensors())
    for name, spec in header["masks"].items():
        if name not in mask_map:
            raise DataError(f"unknown masked tensor {name} in checkpoint")
        m = mask_map[name]
        m.mask[...] = _mask_from_b64(spec["bits"], tuple(spec["shape"]))
        m._col_rows = None
        m.apply_mask()
    return model, meta
