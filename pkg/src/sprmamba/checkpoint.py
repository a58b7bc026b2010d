"""Model checkpoint container.

Layout (little-endian)::

    4 bytes   magic b"SPRM"
    u32       version (1)
    u32       config length, then UTF-8 ``key=value`` lines (model config)
    u32       number of tensors
    per tensor:
      u32     name length, then UTF-8 name
      u32     ndim, then ndim x u64 dims
      f32     values, row-major

Parameters are stored in single precision.  Saving rounds the live model's
parameters to single precision as well, so the saved model and any model
loaded from the file produce bit-identical outputs.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .exceptions import FormatError
from .model import ModelConfig, SPRMamba

MAGIC = b"SPRM"
VERSION = 1


def _config_text(config: ModelConfig) -> str:
    return "".join(f"{k}={v}\n" for k, v in config.to_dict().items())


def _parse_config(text: str) -> ModelConfig:
    types = {f: type(v) for f, v in ModelConfig().to_dict().items()}
    values = {}
    for line in text.splitlines():
        if not line:
            continue
        key, _, value = line.partition("=")
        if key not in types:
            raise FormatError(f"checkpoint config has unknown key {key!r}")
        kind = types[key]
        values[key] = value == "True" if kind is bool else kind(value)
    return ModelConfig.from_dict(values)


def round_to_single(model: SPRMamba) -> None:
    for p in model.parameters():
        p.data = p.data.astype(np.float32).astype(np.float64)


def checkpoint_bytes(model: SPRMamba) -> bytes:
    round_to_single(model)
    config = _config_text(model.config).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(config)), config]
    named = list(model.named_parameters())
    parts.append(struct.pack("<I", len(named)))
    for name, p in named:
        encoded = name.encode()
        parts.append(struct.pack("<I", len(encoded)) + encoded)
        parts.append(struct.pack(f"<I{p.ndim}Q", p.ndim, *p.shape))
        parts.append(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(path, model: SPRMamba) -> Path:
    path = Path(path)
    path.write_bytes(checkpoint_bytes(model))
    return path


class _Reader:
    def __init__(self, raw: bytes, source: str):
        self.raw, self.pos, self.source = raw, 0, source

    def take(self, size: int, what: str) -> bytes:
        if self.pos + size > len(self.raw):
            raise FormatError(f"{self.source}: truncated {what} at offset {self.pos}")
        chunk = self.raw[self.pos : self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt), what))


def load_checkpoint(path) -> SPRMamba:
    source = str(path)
    reader = _Reader(Path(path).read_bytes(), source)
    if reader.take(4, "magic") != MAGIC:
        raise FormatError(f"{source}: bad magic at offset 0")
    version, config_len = reader.unpack("II", "header")
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version} at offset 4")
    try:
        config = _parse_config(reader.take(config_len, "config").decode())
    except (UnicodeDecodeError, ValueError) as exc:
        raise FormatError(f"{source}: unreadable config block at offset 12 ({exc})") from None
    (count,) = reader.unpack("I", "tensor count")
    state = {}
    for _ in range(count):
        (name_len,) = reader.unpack("I", "name length")
        name = reader.take(name_len, "name").decode()
        (ndim,) = reader.unpack("I", "rank")
        shape = reader.unpack(f"{ndim}Q", "shape")
        size = int(np.prod(shape, dtype=np.int64))
        blob = reader.take(4 * size, f"tensor {name!r}")
        state[name] = np.frombuffer(blob, dtype="<f4").reshape(shape).astype(np.float64)
    if reader.pos != len(reader.raw):
        raise FormatError(f"{source}: trailing bytes at offset {reader.pos}")
    model = SPRMamba(config)
    try:
        model.load_state_dict(state)
    except ValueError as exc:
        raise FormatError(f"{source}: {exc}") from None
    model.eval()
    return model
