"""``VXCK`` checkpoint files.

Layout (little-endian)::

    b"VXCK" | version u16 | entry count u32
    per entry: name length u16 | name utf-8 | dtype tag u8 | rank u8 | dims u32[rank] | payload

Optimizer moments are stored as ``opt.m/<name>`` and ``opt.v/<name>``,
the step count as ``opt.step``, and free-form JSON metadata as the uint8
entry ``__meta__``.
"""

from __future__ import annotations

import io
import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .optim import ParamStore

MAGIC = b"VXCK"
VERSION = 1
META_KEY = "__meta__"
STEP_KEY = "opt.step"

_DTYPES = {
    0: (torch.float32, "<f4"),
    1: (torch.float64, "<f8"),
    2: (torch.int64, "<i8"),
    3: (torch.uint8, "u1"),
    4: (torch.int32, "<i4"),
}
_TAGS = {tdt: tag for tag, (tdt, _) in _DTYPES.items()}


class FormatError(ValueError):
    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


def _entries(store: ParamStore):
    out = OrderedDict()
    meta = json.dumps(store.meta, sort_keys=True).encode()
    out[META_KEY] = torch.frombuffer(bytearray(meta), dtype=torch.uint8) if meta else torch.zeros(0, dtype=torch.uint8)
    for name, p in store.params.items():
        out[name] = p.detach()
    if store.step:
        out[STEP_KEY] = torch.tensor([store.step], dtype=torch.int64)
        for name in store.params:
            if name in store.exp_avg:
                out["opt.m/" + name] = store.exp_avg[name]
                out["opt.v/" + name] = store.exp_avg_sq[name]
    return out


def dumps(store: ParamStore) -> bytes:
    buf = io.BytesIO()
    entries = _entries(store)
    buf.write(struct.pack("<4sHI", MAGIC, VERSION, len(entries)))
    for name, t in entries.items():
        if t.dtype not in _TAGS:
            raise FormatError(f"unsupported dtype {t.dtype} for {name!r}", name)
        raw_name = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw_name)))
        buf.write(raw_name)
        buf.write(struct.pack("<BB", _TAGS[t.dtype], t.dim()))
        buf.write(struct.pack(f"<{t.dim()}I", *t.shape))
        buf.write(t.contiguous().cpu().numpy().astype(_DTYPES[_TAGS[t.dtype]][1], copy=False).tobytes())
    return buf.getvalue()


def save_checkpoint(store: ParamStore, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(dumps(store))


def loads(raw: bytes) -> ParamStore:
    view = memoryview(raw)
    if len(raw) < 10:
        raise FormatError("truncated header", "header")
    magic, version, count = struct.unpack_from("<4sHI", view, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {bytes(magic)!r}", "magic")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", "version")
    pos = 10
    entries = OrderedDict()
    for _ in range(count):
        try:
            (n,) = struct.unpack_from("<H", view, pos)
            name = bytes(view[pos + 2 : pos + 2 + n]).decode("utf-8")
            pos += 2 + n
            tag, rank = struct.unpack_from("<BB", view, pos)
            pos += 2
            dims = struct.unpack_from(f"<{rank}I", view, pos)
            pos += 4 * rank
        except (struct.error, UnicodeDecodeError) as exc:
            raise FormatError(f"corrupt entry header at byte {pos}: {exc}", "entry") from exc
        if tag not in _DTYPES:
            raise FormatError(f"unknown dtype tag {tag} for {name!r}", name)
        tdt, npdt = _DTYPES[tag]
        size = int(np.prod(dims)) if rank else 1
        nbytes = size * np.dtype(npdt).itemsize
        if pos + nbytes > len(raw):
            raise FormatError(f"payload of {name!r} runs past end of file", name)
        arr = np.frombuffer(raw, dtype=npdt, count=size, offset=pos).reshape(dims).copy()
        pos += nbytes
        entries[name] = torch.from_numpy(arr)
    if pos != len(raw):
        raise FormatError(f"{len(raw) - pos} trailing bytes", "trailer")

    meta_t = entries.pop(META_KEY, None)
    meta = json.loads(bytes(meta_t.numpy()).decode()) if meta_t is not None and meta_t.numel() else {}
    step_t = entries.pop(STEP_KEY, None)
    store = ParamStore(meta=meta)
    for name, t in entries.items():
        if name.startswith("opt.m/"):
            store.exp_avg[name[6:]] = t
        elif name.startswith("opt.v/"):
            store.exp_avg_sq[name[6:]] = t
        else:
            store.params[name] = t
    store.step = int(step_t.item()) if step_t is not None else 0
    return store


def load_checkpoint(path) -> ParamStore:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return loads(path.read_bytes())


@torch.no_grad()
def load_into(module: nn.Module, store: ParamStore, prefix: str = "", strict: bool = True) -> None:
    """Copy stored tensors into ``module``'s parameters, checking every shape."""
    own = OrderedDict((prefix + n, p) for n, p in module.named_parameters())
    for name, p in own.items():
        if name not in store.params:
            if strict:
                raise FormatError(f"checkpoint lacks parameter {name!r}", name)
            continue
        src = store.params[name]
        if tuple(src.shape) != tuple(p.shape):
            raise FormatError(f"parameter {name!r}: checkpoint shape {tuple(src.shape)} != model shape {tuple(p.shape)}", name)
        p.copy_(src.to(p.dtype))
    if strict:
        extra = [n for n in store.params if n.startswith(prefix) and n not in own]
        if extra:
            raise FormatError(f"unexpected parameter {extra[0]!r}", extra[0])
