"""Versioned little-endian container for named parameter tensors and optimizer state.

Layout::

    magic "AMCKPT01" | u32 version | u64 step | u32 meta_len | meta (utf-8 JSON)
    u32 count, then per parameter:
        u16 name_len | name | u8 ndim | u32 dims... | u8 flags
        f32 values | [f32 exp_avg | f32 exp_avg_sq]  (flags & 1) | [f32 ema] (flags & 2)
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .nn import Module

MAGIC = b"AMCKPT01"
VERSION = 1


def _f32(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def save_checkpoint(path, model: Module, step: int = 0, meta: dict | None = None) -> None:
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    params = list(model.named_parameters())
    chunks = [MAGIC, struct.pack("<IQI", VERSION, step, len(meta_bytes)), meta_bytes,
              struct.pack("<I", len(params))]
    for name, p in params:
        raw = name.encode("utf-8")
        flags = (1 if p.exp_avg is not None else 0) | (2 if p.ema is not None else 0)
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack(f"<B{p.ndim}I", p.ndim, *p.shape))
        chunks.append(struct.pack("<B", flags))
        chunks.append(_f32(p.data))
        if flags & 1:
            chunks.append(_f32(p.exp_avg))
            chunks.append(_f32(p.exp_avg_sq))
        if flags & 2:
            chunks.append(_f32(p.ema))
    Path(path).write_bytes(b"".join(chunks))


def read_checkpoint(path) -> tuple[dict, dict]:
    """Return (entries, header); entries map name -> dict of arrays."""
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    off = 8
    version, step, meta_len = struct.unpack_from("<IQI", buf, off)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off += struct.calcsize("<IQI")
    meta = json.loads(buf[off:off + meta_len].decode("utf-8"))
    off += meta_len
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    entries = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", buf, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        (flags,) = struct.unpack_from("<B", buf, off)
        off += 1
        size = int(np.prod(shape)) if ndim else 1

        def take():
            nonlocal off
            arr = np.frombuffer(buf, dtype="<f4", count=size, offset=off).reshape(shape)
            off += 4 * size
            return arr.copy()

        entry = {"value": take()}
        if flags & 1:
            entry["exp_avg"] = take()
            entry["exp_avg_sq"] = take()
        if flags & 2:
            entry["ema"] = take()
        entries[name] = entry
    return entries, {"version": version, "step": step, "meta": meta}


def load_checkpoint(path, model: Module, use_ema: bool = False) -> dict:
    entries, header = read_checkpoint(path)
    params = dict(model.named_parameters())
    if set(params) != set(entries):
        missing = sorted(set(params) - set(entries))
        extra = sorted(set(entries) - set(params))
        raise KeyError(f"checkpoint/model mismatch: missing={missing} unexpected={extra}")
    for name, p in params.items():
        e = entries[name]
        src = e["ema"] if use_ema and "ema" in e else e["value"]
        if src.shape != p.shape:
            raise ValueError(f"{name}: checkpoint shape {src.shape} != model shape {p.shape}")
        p.data = src.astype(p.dtype)
        p.exp_avg = e.get("exp_avg")
        p.exp_avg_sq = e.get("exp_avg_sq")
        p.ema = e.get("ema")
    return header
