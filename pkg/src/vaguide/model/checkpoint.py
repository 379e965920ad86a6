"""Checkpoint format: magic "VACK", version, JSON config header, named
parameter records, CRC32C over the record bytes."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..scangen import ScanChecksumError, ScanFormatError, ScanTruncatedError, crc32c
from .config import ModelConfig
from .guidance import GuidanceModel, SingleFrameModel

CKPT_MAGIC = b"VACK"
CKPT_VERSION = 1


def save_checkpoint(model, path) -> None:
    header = {
        "model_type": "guidance" if isinstance(model, GuidanceModel) else "single_frame",
        "config": model.cfg.to_dict(),
    }
    header_bytes = json.dumps(header).encode("utf-8")
    records = bytearray()
    for name in sorted(model.store.params):
        p = model.store.params[name]
        nb = name.encode("utf-8")
        records += struct.pack("<H", len(nb)) + nb
        records += struct.pack("<I", p.data.ndim)
        records += struct.pack(f"<{p.data.ndim}I", *p.data.shape)
        records += p.data.astype("<f4").tobytes()
    with open(Path(path), "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<H", CKPT_VERSION))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(bytes(records))
        fh.write(struct.pack("<I", crc32c(bytes(records))))


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    if len(raw) < 10 or raw[:4] != CKPT_MAGIC:
        raise ScanFormatError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack("<H", raw[4:6])
    if version != CKPT_VERSION:
        raise ScanFormatError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<I", raw[6:10])
    if len(raw) < 10 + hlen + 4:
        raise ScanTruncatedError(f"{path}: truncated header")
    header = json.loads(raw[10 : 10 + hlen].decode("utf-8"))
    records = raw[10 + hlen : -4]
    (stored_crc,) = struct.unpack("<I", raw[-4:])
    if crc32c(records) != stored_crc:
        raise ScanChecksumError(f"{path}: parameter checksum mismatch")

    cfg = ModelConfig.from_dict(header["config"])
    model = (
        GuidanceModel(cfg) if header["model_type"] == "guidance" else SingleFrameModel(cfg)
    )

    off = 0
    seen = set()
    while off < len(records):
        (nlen,) = struct.unpack_from("<H", records, off)
        off += 2
        name = records[off : off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<I", records, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", records, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(records, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
        if name not in model.store.params:
            raise ScanFormatError(f"{path}: unexpected parameter {name!r}")
        p = model.store.params[name]
        if p.data.shape != tuple(shape):
            raise ScanFormatError(
                f"{path}: parameter {name!r} shape {tuple(shape)} != expected {p.data.shape}"
            )
        p.data = data.astype(p.data.dtype)
        seen.add(name)
    missing = set(model.store.params) - seen
    if missing:
        raise ScanTruncatedError(f"{path}: missing parameters {sorted(missing)[:3]}...")
    return model
