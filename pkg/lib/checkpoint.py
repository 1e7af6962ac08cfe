"""Encoder checkpoints: a deterministic binary container and parameter averaging.

Layout (little-endian)::

    magic b"CTCK" | version u16
    config_len u32 | config as sorted-key JSON (utf-8)
    count u32
    per tensor, in SelfCondEncoder.named_parameters() order:
        name_len u32 | name utf-8 | ndim u32 | dims u32 * ndim | float64 row-major

Nothing time- or host-dependent is written, so identical parameters and config
give identical bytes.
"""

import json
import struct
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .config import TrainConfig, config_from_dict, config_to_dict
from .data import ByteReader, CorpusFormatError
from .encoder import SelfCondEncoder

MAGIC = b"CTCK"
VERSION = 1

State = Dict[str, np.ndarray]


def encode_checkpoint(cfg: TrainConfig, named: Sequence[Tuple[str, np.ndarray]]) -> bytes:
    config = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [struct.pack("<4sH", MAGIC, VERSION), struct.pack("<I", len(config)), config]
    parts.append(struct.pack("<I", len(named)))
    for name, values in named:
        ident = name.encode("utf-8")
        arr = np.ascontiguousarray(values, dtype="<f8")
        parts.append(struct.pack("<I", len(ident)) + ident)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode_checkpoint(data: bytes) -> Tuple[TrainConfig, List[Tuple[str, np.ndarray]]]:
    reader = ByteReader(data)
    magic, version = reader.unpack("<4sH", "checkpoint header")
    if magic != MAGIC:
        raise CorpusFormatError(f"not a checkpoint (magic {magic!r})", 0)
    if version != VERSION:
        raise CorpusFormatError(f"unsupported checkpoint version {version}", 4)
    (config_len,) = reader.unpack("<I", "config length")
    at = reader.offset
    try:
        cfg = config_from_dict(json.loads(reader.take(config_len, "config").decode("utf-8")))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CorpusFormatError("checkpoint config is not valid JSON", at)

    (count,) = reader.unpack("<I", "tensor count")
    named = []
    for _ in range(count):
        (name_len,) = reader.unpack("<I", "tensor name length")
        at = reader.offset
        try:
            name = reader.take(name_len, "tensor name").decode("utf-8")
        except UnicodeDecodeError:
            raise CorpusFormatError("tensor name is not valid UTF-8", at)
        (ndim,) = reader.unpack("<I", f"{name} rank")
        shape = reader.unpack(f"<{ndim}I", f"{name} shape") if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        raw = reader.take(8 * size, f"{name} values")
        named.append((name, np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)))
    if reader.offset != len(data):
        raise CorpusFormatError("trailing bytes after last tensor", reader.offset)
    return cfg, named


def save_checkpoint(path: Path, cfg: TrainConfig, model: SelfCondEncoder) -> None:
    """Write the model's parameters and the config that built it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    named = [(name, p.values) for name, p in model.named_parameters()]
    with open(path, "wb") as f:
        f.write(encode_checkpoint(cfg, named))


def load_checkpoint(path: Path) -> Tuple[TrainConfig, SelfCondEncoder]:
    """Rebuild a model from a checkpoint file."""
    with open(path, "rb") as f:
        cfg, named = decode_checkpoint(f.read())
    model = SelfCondEncoder(cfg.encoder, seed=cfg.seed)
    model.load_state_dict(dict(named))
    return cfg, model


def average_parameters(states: Sequence[State]) -> State:
    """Element-wise arithmetic mean of parameter states with identical keys and shapes."""
    if not states:
        raise ValueError("average_parameters needs at least one state")
    keys = set(states[0])
    for state in states[1:]:
        if set(state) != keys:
            raise ValueError("cannot average states with different parameter names")
    return {name: np.mean(np.stack([s[name] for s in states]), axis=0) for name in states[0]}
