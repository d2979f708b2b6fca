"""Binary checkpoint container.

Layout (all integers little-endian u32)::

    b"COCG" | version | param_count | flags
    param_count x (name_len | name utf-8 | rank | rank x extent | f32 payload)
    [flags & META]  meta_len | JSON metadata (configs, RNG state, epoch, ...)
    [flags & OPTIM] entry_count | entries encoded like params

Optimizer moments are stored as named tensors (``"m/<param>"``, ...) with
their scalar state in the metadata under ``"optimizer"``.
"""

from __future__ import annotations

import io
import json
import os
import struct
from collections import OrderedDict

import numpy as np

from .errors import LoadError

MAGIC = b"COCG"
VERSION = 1
FLAG_OPTIM = 1
FLAG_META = 2


def _write_entries(f, entries):
    for name, arr in entries.items():
        raw = name.encode("utf-8")
        arr = np.array(arr, dtype="<f4", order="C")  # keeps rank 0, unlike ascontiguousarray
        f.write(struct.pack("<I", len(raw)))
        f.write(raw)
        f.write(struct.pack("<I", arr.ndim))
        if arr.ndim:
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(arr.tobytes())


def dumps(params, meta=None, optimizer=None):
    """Serialize named arrays (and optional metadata / optimizer tensors) to bytes."""
    flags = (FLAG_META if meta is not None else 0) | (FLAG_OPTIM if optimizer else 0)
    f = io.BytesIO()
    f.write(MAGIC)
    f.write(struct.pack("<III", VERSION, len(params), flags))
    _write_entries(f, params)
    if meta is not None:
        raw = json.dumps(meta, sort_keys=True).encode("utf-8")
        f.write(struct.pack("<I", len(raw)))
        f.write(raw)
    if optimizer:
        f.write(struct.pack("<I", len(optimizer)))
        _write_entries(f, optimizer)
    return f.getvalue()


def save(path, params, meta=None, optimizer=None):
    """Write atomically: a partial file never replaces a good one."""
    data = dumps(params, meta, optimizer)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)
    return path


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise LoadError(f"truncated checkpoint while reading {what} at offset {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def _read_entries(r, count, section):
    out = OrderedDict()
    for i in range(count):
        n = r.u32(f"{section} entry {i} name length")
        name = r.take(n, f"{section} entry {i} name").decode("utf-8", errors="replace")
        rank = r.u32(f"rank of {name!r}")
        if rank > 8:
            raise LoadError(f"implausible rank {rank} for {name!r}")
        shape = tuple(struct.unpack(f"<{rank}I", r.take(4 * rank, f"extents of {name!r}"))) if rank else ()
        size = int(np.prod(shape)) if shape else 1
        payload = r.take(4 * size, f"payload of {name!r}")
        out[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
    return out


def loads(data):
    """Parse bytes produced by :func:`dumps` -> (params, meta, optimizer)."""
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise LoadError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise LoadError(f"unsupported checkpoint version {version}")
    count = r.u32("param count")
    flags = r.u32("flags")
    if flags & ~(FLAG_META | FLAG_OPTIM):
        raise LoadError(f"unknown header flags {flags:#x}")
    params = _read_entries(r, count, "param")
    meta = None
    if flags & FLAG_META:
        n = r.u32("metadata length")
        try:
            meta = json.loads(r.take(n, "metadata").decode("utf-8"))
        except ValueError as exc:
            raise LoadError(f"corrupt metadata: {exc}") from None
    optimizer = None
    if flags & FLAG_OPTIM:
        optimizer = _read_entries(r, r.u32("optimizer entry count"), "optimizer")
    if r.pos != len(data):
        raise LoadError(f"{len(data) - r.pos} trailing bytes after offset {r.pos}")
    return params, meta, optimizer


def load(path):
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise LoadError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return loads(data)


def load_into(module, params, prefix=""):
    """Copy arrays named ``prefix + param`` into ``module``; strict on names and shapes."""
    own = module.named_parameters()
    for name, p in own.items():
        key = prefix + name
        if key not in params:
            raise LoadError(f"checkpoint has no tensor {key!r}")
        arr = params[key]
        if arr.shape != p.shape:
            raise LoadError(f"shape mismatch for {key!r}: checkpoint {arr.shape}, model {p.shape}")
    for name, p in own.items():
        p.data = params[prefix + name].astype(p.dtype)
        p.grad = None


def module_arrays(module, prefix=""):
    return OrderedDict((prefix + k, v.data) for k, v in module.named_parameters().items())
