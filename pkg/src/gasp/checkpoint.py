"""Binary checkpoint container.

Layout (little-endian):

    b"GASP"  u32 version  u32 tensor_count
    per tensor: u32 name_len, name (UTF-8), u32 ndim, ndim x u64 dims, float64 payload
    u32 config_len, config text (UTF-8 ``key=value`` lines)
    u32 rng_len, rng state (UTF-8 JSON, may be empty)

Files are written to a temporary sibling and renamed into place, so a
reader never sees a half-written checkpoint.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from .errors import CheckpointError

MAGIC = b"GASP"
VERSION = 1


@dataclass
class Checkpoint:
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)
    config: Dict[str, str] = field(default_factory=dict)
    rng_state: str = ""


def _config_text(config: Mapping[str, object]) -> str:
    lines = []
    for k, v in config.items():
        k, v = str(k), str(v)
        if "=" in k or "\n" in k or "\n" in v:
            raise CheckpointError(f"config entry {k!r} cannot be stored as key=value text")
        lines.append(f"{k}={v}")
    return "\n".join(lines)


def save_checkpoint(path, tensors: Mapping[str, np.ndarray], config: Mapping[str, object],
                    rng_state: str = "") -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        a = np.asarray(arr, dtype="<f8")  # tobytes() below is C-order; keeps 0-d shapes
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<I", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}Q", *a.shape))
        parts.append(a.tobytes())
    for text in (_config_text(config), rng_state):
        raw = text.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated at byte {len(self.raw)}, needed {self.pos + n}")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def text(self) -> str:
        try:
            return self.take(self.u32()).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"{self.path}: invalid UTF-8 near byte {self.pos}") from None


def load_checkpoint(path) -> Checkpoint:
    """Parse a checkpoint completely before returning anything."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc.strerror}") from exc
    r = _Reader(raw, path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (this build reads {VERSION})")
    tensors = {}
    for _ in range(r.u32()):
        name = r.text()
        ndim = r.u32()
        dims = struct.unpack(f"<{ndim}Q", r.take(8 * ndim))
        count = int(np.prod(dims, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64).reshape(dims)
    config = {}
    for line in r.text().splitlines():
        if line:
            key, _, value = line.partition("=")
            config[key] = value
    rng_state = r.text()
    if r.pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - r.pos} trailing bytes")
    return Checkpoint(tensors, config, rng_state)


def save_function(path, f, extra: Mapping[str, object] = ()) -> None:
    """Store a fitted FunctionRep (model=function) with optional extra config entries."""
    cfg = {
        "model": "function",
        "function.input_dim": f.arch.input_dim,
        "function.hidden_dims": ",".join(str(h) for h in f.arch.hidden_dims),
        "function.output_dim": f.arch.output_dim,
        "function.encoding": "rff" if f.encoding is not None else "none",
    }
    tensors = {"theta": f.theta}
    if f.encoding is not None:
        cfg["function.sigma"] = repr(f.encoding.sigma)
        tensors["encoding.B"] = f.encoding.B
    cfg.update(dict(extra))
    save_checkpoint(path, tensors, cfg)


def load_function(path):
    """Returns (FunctionRep, config dict) from a model=function checkpoint."""
    from .function_rep import FunctionRep, MlpArchitecture
    from .rff import from_matrix

    ck = load_checkpoint(path)
    c = ck.config
    if c.get("model") != "function":
        raise CheckpointError(f"{path}: holds a {c.get('model', 'unknown')!r} model, not a fitted function")
    try:
        arch = MlpArchitecture(int(c["function.input_dim"]),
                               tuple(int(t) for t in c["function.hidden_dims"].split(",") if t),
                               int(c["function.output_dim"]))
        enc = None
        if c["function.encoding"] == "rff":
            enc = from_matrix(ck.tensors["encoding.B"], float(c["function.sigma"]))
        return FunctionRep(arch, ck.tensors["theta"].copy(), enc), c
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: incomplete function description ({exc})") from exc
