"""Writer for the engine's dump directory contract (format_version 1).

Implemented against the documented format, not against the engine's code:
the dump directory is the only interface between extractor and engine, so
this side serializes independently and the engine's `validate` command is
the conformance check.

Per-sample binary layout (little-endian):

    magic "FVD1" | T u32 | d u32 | P u32
    hidden  T*d  f32   row-major; row k predicts target k
    targets T    u32   local indices into the manifest's restricted vocab
    probs   T*P  f32   row-major, dense over the restricted vocab
    resid   T    f32   per-row probability mass outside the restricted vocab
    crc32   u32        over everything between magic and crc
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

MAGIC = b"FVD1"
FORMAT_VERSION = 1


@dataclass
class DumpSample:
    id: str
    role: str
    hidden: np.ndarray          # (T, d) float32
    local_targets: np.ndarray   # (T,) uint32
    probs: np.ndarray           # (T, P) float32
    residual: np.ndarray        # (T,) float32
    class_label: str | None = None
    clean: bool | None = None


def encode_sample(s: DumpSample) -> bytes:
    T, d = s.hidden.shape
    P = s.probs.shape[1]
    payload = bytearray()
    payload += struct.pack("<III", T, d, P)
    payload += np.ascontiguousarray(s.hidden, dtype="<f4").tobytes()
    payload += np.ascontiguousarray(s.local_targets, dtype="<u4").tobytes()
    payload += np.ascontiguousarray(s.probs, dtype="<f4").tobytes()
    payload += np.ascontiguousarray(s.residual, dtype="<f4").tobytes()
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    return MAGIC + bytes(payload) + struct.pack("<I", crc)


def write_dump_dir(
    out_dir: str | Path,
    embedding_dim: int,
    restricted_vocab: list[int],
    samples: Iterable[DumpSample],
    global_vocab_size: int | None = None,
) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for idx, s in enumerate(samples):
        blob = encode_sample(s)
        fname = f"{idx:06d}.fvd"
        (out / fname).write_bytes(blob)
        entry = {"id": s.id, "role": s.role, "file": fname, "byte_length": len(blob)}
        if s.class_label is not None:
            entry["class_label"] = s.class_label
        if s.clean is not None:
            entry["clean"] = bool(s.clean)
        entries.append(entry)
    manifest = {
        "format_version": FORMAT_VERSION,
        "embedding_dim": embedding_dim,
        "global_vocab_size": global_vocab_size,
        "restricted_vocab": [int(t) for t in restricted_vocab],
        "samples": entries,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return out
