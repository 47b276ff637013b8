"""On-disk activation-dump format: manifest + one binary tensor file per sample.

This directory layout is the engine's single data contract with whatever
produced the activations. It is versioned and platform-independent (fixed
little-endian, fixed-width integers), and reading is streaming: peak memory
is one record, independent of dataset size.

Per-sample binary layout (little-endian), format_version 1:

    magic   4 bytes         b"FVD1"
    T       uint32          number of target positions
    d       uint32          embedding width
    P       uint32          dataset vocabulary size |V_D|
    hidden  T*d  float32    row-major; row k predicts target k
    targets T    uint32     local V_D indices
    probs   T*P  float32    row-major, dense over V_D
    resid   T    float32    per-row probability mass outside V_D
    crc     uint32          CRC32 of everything between magic and crc

The manifest is a human-readable JSON file naming V_D, the embedding width,
and every sample (id, role, optional class label / clean flag, file name,
byte length).
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .records import RestrictedVocab, SampleRecord, validate_record

FORMAT_VERSION = 1
MAGIC = b"FVD1"
MANIFEST_NAME = "manifest.json"
_HEADER = struct.Struct("<III")  # T, d, P


class DumpError(ValueError):
    """Malformed dump directory, file, or record/manifest inconsistency."""


@dataclass
class SampleEntry:
    id: str
    role: str
    file: str
    byte_length: int
    class_label: str | None = None
    clean: bool | None = None


@dataclass
class Manifest:
    format_version: int
    embedding_dim: int
    restricted_vocab: list[int]
    global_vocab_size: int | None = None
    samples: list[SampleEntry] = field(default_factory=list)

    def vocab(self) -> RestrictedVocab:
        return RestrictedVocab(self.restricted_vocab)

    def to_json(self) -> str:
        def entry(s: SampleEntry) -> dict:
            d = {"id": s.id, "role": s.role, "file": s.file, "byte_length": s.byte_length}
            if s.class_label is not None:
                d["class_label"] = s.class_label
            if s.clean is not None:
                d["clean"] = bool(s.clean)
            return d

        return json.dumps(
            {
                "format_version": self.format_version,
                "embedding_dim": self.embedding_dim,
                "global_vocab_size": self.global_vocab_size,
                "restricted_vocab": self.restricted_vocab,
                "samples": [entry(s) for s in self.samples],
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "Manifest":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise DumpError(f"manifest is not valid JSON: {e}") from None
        version = raw.get("format_version")
        if version != FORMAT_VERSION:
            raise DumpError(f"unsupported dump format_version: {version} (supported: {FORMAT_VERSION})")
        vocab = [int(t) for t in raw["restricted_vocab"]]
        if any(b <= a for a, b in zip(vocab, vocab[1:])):
            raise DumpError("manifest restricted_vocab must be ascending with no duplicates")
        global_size = raw.get("global_vocab_size")
        if global_size is not None and vocab and vocab[-1] >= int(global_size):
            raise DumpError(
                f"restricted_vocab token {vocab[-1]} exceeds declared global vocabulary size {global_size}"
            )
        samples = [
            SampleEntry(
                id=str(s["id"]),
                role=str(s["role"]),
                file=str(s["file"]),
                byte_length=int(s["byte_length"]),
                class_label=s.get("class_label"),
                clean=s.get("clean"),
            )
            for s in raw.get("samples", [])
        ]
        ids = [s.id for s in samples]
        if len(set(ids)) != len(ids):
            raise DumpError("manifest sample ids are not unique")
        return cls(
            format_version=version,
            embedding_dim=int(raw["embedding_dim"]),
            restricted_vocab=vocab,
            global_vocab_size=raw.get("global_vocab_size"),
            samples=samples,
        )


def serialize_record(rec: SampleRecord, vocab: RestrictedVocab) -> bytes:
    """Encode one record in the per-sample binary layout."""
    if rec.vocab != vocab:
        raise DumpError(f"sample {rec.id}: probs are dense over a different vocabulary")
    T, d, P = rec.length, rec.dim, len(vocab)
    payload = bytearray()
    payload += _HEADER.pack(T, d, P)
    payload += np.ascontiguousarray(rec.hidden, dtype="<f4").tobytes()
    payload += vocab.locals_of(rec.targets).astype("<u4").tobytes()
    payload += np.ascontiguousarray(rec.probs, dtype="<f4").tobytes()
    payload += np.ascontiguousarray(rec.residual_mass, dtype="<f4").tobytes()
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    return MAGIC + bytes(payload) + struct.pack("<I", crc)


def record_byte_length(T: int, d: int, P: int) -> int:
    return 4 + 12 + 4 * (T * d) + 4 * T + 4 * (T * P) + 4 * T + 4


def parse_record(data: bytes, vocab: RestrictedVocab, *, entry: SampleEntry) -> SampleRecord:
    """Decode one per-sample binary blob; verifies magic, sizes, and CRC."""
    if len(data) < 4 + _HEADER.size + 4 or data[:4] != MAGIC:
        raise DumpError(f"bad magic in {entry.file} (sample {entry.id})")
    T, d, P = _HEADER.unpack_from(data, 4)
    expected = record_byte_length(T, d, P)
    if len(data) != expected:
        raise DumpError(f"truncated: {entry.id}, expected {expected}, got {len(data)}")
    payload = data[4:-4]
    (crc_stored,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc_stored:
        raise DumpError(f"checksum mismatch: {entry.id}")

    off = _HEADER.size
    hidden = np.frombuffer(payload, dtype="<f4", count=T * d, offset=off).reshape(T, d)
    off += 4 * T * d
    local_targets = np.frombuffer(payload, dtype="<u4", count=T, offset=off)
    off += 4 * T
    probs = np.frombuffer(payload, dtype="<f4", count=T * P, offset=off).reshape(T, P)
    off += 4 * T * P
    residual = np.frombuffer(payload, dtype="<f4", count=T, offset=off)

    if local_targets.size and int(local_targets.max(initial=0)) >= len(vocab):
        raise DumpError(f"target index out of vocabulary range: {entry.id}")
    targets = vocab.tokens[local_targets.astype(np.int64)]
    return SampleRecord(
        id=entry.id,
        role=entry.role,
        vocab=vocab,
        targets=targets,
        hidden=hidden,
        probs=probs,
        residual_mass=residual,
        class_label=entry.class_label,
        clean=entry.clean,
    )


def write_dump(
    dir: str | Path,
    manifest: Manifest,
    records: Iterable[SampleRecord],
) -> Manifest:
    """Write a dump directory; idempotent overwrite.

    `manifest.samples` is rebuilt from the record stream. Every record is
    checked against the manifest (embedding width, vocabulary membership,
    record invariants) before anything is committed; the manifest itself is
    written last, so a failure never leaves a directory with a manifest that
    lies about its contents.
    """
    out = Path(dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab = manifest.vocab()
    if (
        manifest.global_vocab_size is not None
        and len(vocab)
        and vocab.tokens[-1] >= manifest.global_vocab_size
    ):
        raise DumpError(
            f"restricted_vocab token {int(vocab.tokens[-1])} exceeds declared "
            f"global vocabulary size {manifest.global_vocab_size}"
        )
    entries: list[SampleEntry] = []
    seen: set[str] = set()
    blobs: list[tuple[str, bytes]] = []

    for idx, rec in enumerate(records):
        if rec.id in seen:
            raise DumpError(f"duplicate sample id: {rec.id}")
        seen.add(rec.id)
        if rec.dim != manifest.embedding_dim:
            raise DumpError(
                f"record/manifest inconsistency: sample {rec.id} has d={rec.dim}, "
                f"manifest declares d={manifest.embedding_dim}"
            )
        report = validate_record(rec, vocab)
        if not report.ok:
            raise DumpError(f"record/manifest inconsistency: {report}")
        blob = serialize_record(rec, vocab)
        fname = f"{idx:06d}.fvd"
        blobs.append((fname, blob))
        entries.append(
            SampleEntry(
                id=rec.id,
                role=rec.role,
                file=fname,
                byte_length=len(blob),
                class_label=rec.class_label,
                clean=rec.clean,
            )
        )

    for fname, blob in blobs:
        (out / fname).write_bytes(blob)
    completed = Manifest(
        format_version=manifest.format_version,
        embedding_dim=manifest.embedding_dim,
        restricted_vocab=list(manifest.restricted_vocab),
        global_vocab_size=manifest.global_vocab_size,
        samples=entries,
    )
    (out / MANIFEST_NAME).write_text(completed.to_json())
    return completed


def read_manifest(dir: str | Path) -> Manifest:
    path = Path(dir) / MANIFEST_NAME
    if not path.is_file():
        raise FileNotFoundError(f"no {MANIFEST_NAME} in {dir}")
    return Manifest.from_json(path.read_text())


def read_dump(dir: str | Path) -> tuple[Manifest, Iterator[SampleRecord]]:
    """Open a dump directory: (manifest, lazy record stream in manifest order).

    Each yielded record has passed validate_record against V_D; a malformed
    file raises a descriptive DumpError naming the sample when the stream
    reaches it.
    """
    base = Path(dir)
    manifest = read_manifest(base)
    vocab = manifest.vocab()

    def stream() -> Iterator[SampleRecord]:
        for entry in manifest.samples:
            path = base / entry.file
            if not path.is_file():
                raise DumpError(f"missing file for sample {entry.id}: {entry.file}")
            data = path.read_bytes()
            if len(data) != entry.byte_length:
                raise DumpError(f"truncated: {entry.id}, expected {entry.byte_length}, got {len(data)}")
            rec = parse_record(data, vocab, entry=entry)
            report = validate_record(rec, vocab)
            if not report.ok:
                raise DumpError(f"invalid record: {report}")
            yield rec

    return manifest, stream()


def load_records(dir: str | Path) -> tuple[Manifest, list[SampleRecord]]:
    """Eager read_dump, for small dumps and tests."""
    manifest, stream = read_dump(dir)
    return manifest, list(stream)
