"""Binary checkpoint format.

Layout (little-endian): magic ``CPNE``, u16 version, u32 config length, the
config block as UTF-8 ``key=value`` lines, then per tensor: u16 name length,
UTF-8 name, u8 rank, u32 per dim, float64 values row-major.
"""

from __future__ import annotations

import struct
from dataclasses import fields
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .network import Model, ModelConfig, Vocab

MAGIC = b"CPNE"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _config_block(model: Model, extra: dict | None) -> bytes:
    items = {f.name: getattr(model.config, f.name) for f in fields(ModelConfig)}
    items["vocab"] = "".join(model.vocab.chars)
    for k, v in (extra or {}).items():
        items[f"meta.{k}"] = v
    return "".join(f"{k}={v}\n" for k, v in items.items()).encode("utf-8")


def checkpoint_bytes(model: Model, extra: dict | None = None) -> bytes:
    block = _config_block(model, extra)
    out = [MAGIC, struct.pack("<HI", VERSION, len(block)), block]
    for name, t in model.params.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(t.data, dtype="<f8")
        out.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def save_checkpoint(path, model: Model, extra: dict | None = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(model, extra))


def _coerce(field_type, text: str):
    if field_type in (bool, "bool"):
        return text == "True"
    if field_type in (int, "int"):
        return int(text)
    if field_type in (float, "float"):
        return float(text)
    return text


def parse_checkpoint(buf: bytes) -> tuple[Model, dict]:
    if buf[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, n = struct.unpack_from("<HI", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 10
    items = {}
    for line in buf[pos:pos + n].decode("utf-8").splitlines():
        k, _, v = line.partition("=")
        items[k] = v
    pos += n
    kwargs = {f.name: _coerce(f.type, items[f.name]) for f in fields(ModelConfig) if f.name in items}
    config = ModelConfig(**kwargs)
    vocab = Vocab(items["vocab"])
    meta = {k[5:]: v for k, v in items.items() if k.startswith("meta.")}
    params = {}
    try:
        while pos < len(buf):
            (ln,) = struct.unpack_from("<H", buf, pos)
            name = buf[pos + 2:pos + 2 + ln].decode("utf-8")
            pos += 2 + ln
            (rank,) = struct.unpack_from("<B", buf, pos)
            shape = struct.unpack_from(f"<{rank}I", buf, pos + 1)
            pos += 1 + 4 * rank
            count = int(np.prod(shape))
            if pos + 8 * count > len(buf):
                raise CheckpointError(f"tensor {name!r} truncated")
            arr = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(shape)
            pos += 8 * count
            params[name] = Tensor(arr.astype(np.float64), requires_grad=True, name=name)
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    return Model(config, vocab, params), meta


def load_checkpoint(path) -> tuple[Model, dict]:
    return parse_checkpoint(Path(path).read_bytes())
