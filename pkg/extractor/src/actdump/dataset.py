"""Dataset description files.

One JSON object per line. The target span is always explicit (either token
ids or text for a declared tokenizer); the extractor never guesses which
part of a chat-formatted sequence is the supervised target.

    {"id": "s0", "role": "training", "input_tokens": [5, 9],
     "target_tokens": [3, 3, 7], "class_label": "a", "clean": true}

Text form, resolved through a tokenizer config:

    {"id": "s1", "role": "valuation", "input_text": "the cat",
     "target_text": "sat down"}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

ROLES = ("training", "valuation")


class DatasetError(ValueError):
    pass


@dataclass
class DatasetItem:
    id: str
    role: str
    input_tokens: list[int]
    target_tokens: list[int]
    class_label: str | None = None
    clean: bool | None = None


class WhitespaceVocabTokenizer:
    """Minimal tokenizer: whitespace words mapped through a fixed vocabulary."""

    def __init__(self, vocab: dict[str, int]):
        self.vocab = dict(vocab)

    def encode(self, text: str) -> list[int]:
        out = []
        for word in text.split():
            if word not in self.vocab:
                raise DatasetError(f"word not in tokenizer vocabulary: {word!r}")
            out.append(self.vocab[word])
        return out


def make_tokenizer(config: dict | None):
    if config is None:
        return None
    kind = config.get("type")
    if kind == "whitespace_vocab":
        return WhitespaceVocabTokenizer(config["vocab"])
    raise DatasetError(f"unknown tokenizer type: {kind!r}")


def read_dataset(path: str | Path, tokenizer_config: dict | None = None) -> list[DatasetItem]:
    tokenizer = make_tokenizer(tokenizer_config)
    items: list[DatasetItem] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise DatasetError(f"{path}:{lineno}: not valid JSON: {e}") from None
        item = _parse_item(obj, tokenizer, f"{path}:{lineno}")
        if item.id in seen:
            raise DatasetError(f"{path}:{lineno}: duplicate id {item.id!r}")
        seen.add(item.id)
        items.append(item)
    if not items:
        raise DatasetError(f"empty dataset: {path}")
    return items


def _tokens(obj: dict, kind: str, tokenizer, where: str) -> list[int]:
    if f"{kind}_tokens" in obj:
        return [int(t) for t in obj[f"{kind}_tokens"]]
    if f"{kind}_text" in obj:
        if tokenizer is None:
            raise DatasetError(f"{where}: {kind}_text given but no tokenizer configured")
        return tokenizer.encode(obj[f"{kind}_text"])
    raise DatasetError(f"{where}: needs {kind}_tokens or {kind}_text")


def _parse_item(obj: dict, tokenizer, where: str) -> DatasetItem:
    role = obj.get("role", "training")
    if role not in ROLES:
        raise DatasetError(f"{where}: unknown role {role!r}")
    item = DatasetItem(
        id=str(obj["id"]),
        role=role,
        input_tokens=_tokens(obj, "input", tokenizer, where),
        target_tokens=_tokens(obj, "target", tokenizer, where),
        class_label=obj.get("class_label"),
        clean=obj.get("clean"),
    )
    if not item.target_tokens:
        raise DatasetError(f"{where}: empty target span")
    return item
