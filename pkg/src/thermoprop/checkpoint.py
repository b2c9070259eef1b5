"""Binary checkpoint container.

Layout: magic, format version, UTF-8 header (key = value lines holding the
full configuration, the tokenizer vocabulary, the descriptor slot order, and
the normalization statistics), then named tensor blobs: name, rank,
dimensions, little-endian float32 data.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .chem.tokenize import VOCAB
from .config import EncoderConfig, TrainConfig, dump_config
from .dataset import NormStats
from .featurize import DESCRIPTOR_NAMES

MAGIC = b"TPCK"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def build_header(enc_cfg: EncoderConfig, train_cfg: TrainConfig, stats: NormStats,
                 variant: str, assignment: dict[str, str]) -> str:
    lines = [f"format_version = {FORMAT_VERSION}", f"variant = {variant}"]
    for prop, eq in sorted(assignment.items()):
        lines.append(f"equation.{prop} = {eq}")
    lines.append("[config]")
    lines.append(dump_config(enc_cfg, train_cfg).rstrip())
    lines.append("[vocabulary]")
    lines.append(",".join(f"{tok!r}:{idx}" for tok, idx in VOCAB.items()))
    lines.append("[descriptors]")
    lines.append(",".join(DESCRIPTOR_NAMES))
    lines.append("[normalization]")
    lines.append(stats.to_text().rstrip())
    return "\n".join(lines) + "\n"


def save_checkpoint(path: str | Path, state: dict[str, np.ndarray], header: str) -> None:
    header_bytes = header.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(struct.pack("<I", len(state)))
        for name, arr in state.items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<B", data.ndim))
            for dim in data.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(data.tobytes())


def load_checkpoint(path: str | Path) -> tuple[str, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError("bad magic")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {version}")
    (header_len,) = struct.unpack_from("<Q", raw, 8)
    pos = 16
    header = raw[pos : pos + header_len].decode("utf-8")
    pos += header_len
    (n_tensors,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    state: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        dims = struct.unpack_from(f"<{rank}Q", raw, pos)
        pos += 8 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=pos).reshape(dims)
        pos += 4 * count
        state[name] = arr.astype(np.float32).copy()
    return header, state


def parse_header(header: str) -> dict[str, str]:
    """Flat view of the header's key = value lines (sections flattened)."""
    out: dict[str, str] = {}
    section = ""
    for line in header.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1]
            continue
        if section in ("vocabulary", "descriptors"):
            # literal payload lines; '=' is itself a vocabulary token
            out[section] = line
        elif "=" in line:
            key, val = (s.strip() for s in line.split("=", 1))
            out[f"{section}.{key}" if section else key] = val
        else:
            out[section] = line
    return out
