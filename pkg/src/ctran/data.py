"""Corpus parsing, label maps and padded batches for joint ID/SF data."""
from __future__ import annotations

import json
import string
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import torch

from .substrate import ConfigError, NEG_INF

PAD_TOKEN = 0
UNK_TOKEN = 1
PAD_TAG = 0
BOS_TAG = 1
UNK_TAG = 2

RESERVED_TOKENS = ("<pad>", "<unk>")
RESERVED_TAGS = ("<pad>", "<bos>", "<unk>")
UNK_INTENT_NAME = "<unk>"

FORMATS = ("jsonl", "tabbed")
PUNCTUATION = frozenset(string.punctuation)


class CorpusError(ValueError):
    """A corpus record is malformed."""


@dataclass(frozen=True)
class Example:
    tokens: tuple[str, ...]
    slots: tuple[str, ...]
    intent: str
    id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "slots", tuple(self.slots))
        if not self.tokens:
            raise CorpusError("example has no tokens")
        if len(self.tokens) != len(self.slots):
            raise CorpusError(
                f"{len(self.tokens)} tokens but {len(self.slots)} slot tags"
            )
        if any(t == "" for t in self.tokens):
            raise CorpusError("empty token string")

    def to_json(self) -> dict:
        rec = {"tokens": list(self.tokens), "slots": list(self.slots), "intent": self.intent}
        if self.id is not None:
            rec["id"] = self.id
        return rec


def _parse_jsonl(path: Path) -> list[Example]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                ex = Example(
                    tokens=rec["tokens"],
                    slots=rec["slots"],
                    intent=rec["intent"],
                    id=str(rec["id"]) if "id" in rec else f"{path.stem}:{len(out)}",
                )
            except (json.JSONDecodeError, KeyError, TypeError, CorpusError) as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from exc
            out.append(ex)
    return out


def _parse_tabbed(path: Path) -> list[Example]:
    out = []
    block: list[tuple[int, str]] = []

    def flush():
        if not block:
            return
        first = block[0][0]
        last_no, last = block[-1]
        head, _, label = last.partition("\t")
        if head != "intent" or not label:
            raise CorpusError(f"{path}:{last_no}: block must end with 'intent<TAB><label>'")
        tokens, slots = [], []
        for no, line in block[:-1]:
            parts = line.split("\t")
            if len(parts) != 2:
                raise CorpusError(f"{path}:{no}: expected 'token<TAB>tag', got {line!r}")
            tokens.append(parts[0])
            slots.append(parts[1])
        try:
            out.append(Example(tokens, slots, label, id=f"{path.stem}:{len(out)}"))
        except CorpusError as exc:
            raise CorpusError(f"{path}:{first}: {exc}") from exc
        block.clear()

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                flush()
            else:
                block.append((lineno, line))
    flush()
    return out


def parse_corpus(path, format: str = "jsonl") -> list[Example]:
    """Read a corpus file.

    ``jsonl``: one ``{"tokens", "slots", "intent"[, "id"]}`` object per line.
    ``tabbed``: blocks of ``token<TAB>tag`` lines closed by an
    ``intent<TAB><label>`` line, blocks separated by blank lines.
    """
    if format not in FORMATS:
        raise ConfigError(f"unknown corpus format {format!r}; expected one of {FORMATS}")
    path = Path(path)
    return _parse_jsonl(path) if format == "jsonl" else _parse_tabbed(path)


def write_jsonl(examples: Iterable[Example], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_json(), ensure_ascii=False) + "\n")


class Vocab:
    """Bidirectional string <-> id map with reserved leading entries."""

    def __init__(self, reserved: Sequence[str], items: Iterable[str] = ()):
        self.reserved = tuple(reserved)
        self.itos: list[str] = list(self.reserved)
        self.stoi: dict[str, int] = {s: i for i, s in enumerate(self.itos)}
        for s in items:
            self.add(s)

    def add(self, s: str) -> int:
        if s not in self.stoi:
            self.stoi[s] = len(self.itos)
            self.itos.append(s)
        return self.stoi[s]

    def get(self, s: str, default: int) -> int:
        return self.stoi.get(s, default)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, s):
        return s in self.stoi

    def __getitem__(self, i: int) -> str:
        return self.itos[i]

    @property
    def labels(self) -> list[str]:
        """Non-reserved entries in id order."""
        return self.itos[len(self.reserved):]


@dataclass
class LabelMaps:
    tokens: Vocab
    slots: Vocab
    intents: Vocab

    @property
    def num_tags(self) -> int:
        return len(self.slots)

    @property
    def num_intents(self) -> int:
        return len(self.intents)

    @property
    def unk_intent(self) -> int:
        # one past the classifier head: never predicted, always scored wrong
        return len(self.intents)

    def intent_name(self, i: int) -> str:
        return self.intents[i] if 0 <= i < len(self.intents) else UNK_INTENT_NAME

    def to_json(self) -> dict:
        return {
            "tokens": self.tokens.labels,
            "slots": self.slots.labels,
            "intents": self.intents.labels,
        }

    @classmethod
    def from_json(cls, d: dict) -> "LabelMaps":
        return cls(
            tokens=Vocab(RESERVED_TOKENS, d["tokens"]),
            slots=Vocab(RESERVED_TAGS, d["slots"]),
            intents=Vocab((), d["intents"]),
        )


def build_label_maps(train: Sequence[Example]) -> LabelMaps:
    """Vocabularies over the training split only, in first-seen order."""
    if not train:
        raise CorpusError("cannot build label maps from an empty training set")
    tokens = Vocab(RESERVED_TOKENS)
    slots = Vocab(RESERVED_TAGS)
    intents = Vocab(())
    for ex in train:
        for t in ex.tokens:
            tokens.add(t)
        for s in ex.slots:
            slots.add(s)
        intents.add(ex.intent)
    return LabelMaps(tokens, slots, intents)


def is_punct(token: str, punctuation=PUNCTUATION) -> bool:
    return all(ch in punctuation for ch in token)


def strip_punctuation(ex: Example, punctuation=PUNCTUATION) -> tuple[Example, list[int]]:
    """Drop punctuation-only tokens tagged ``O``.

    Returns the reduced example and the original indices that were kept.
    Punctuation carrying a slot tag is kept with a warning.
    """
    keep = []
    for i, (tok, tag) in enumerate(zip(ex.tokens, ex.slots)):
        if is_punct(tok, punctuation):
            if tag == "O":
                continue
            warnings.warn(
                f"keeping punctuation token {tok!r} tagged {tag!r} in {ex.id}",
                stacklevel=3,
            )
        keep.append(i)
    if not keep:
        return ex, list(range(len(ex.tokens)))
    reduced = Example(
        [ex.tokens[i] for i in keep], [ex.slots[i] for i in keep], ex.intent, ex.id
    )
    return reduced, keep


@dataclass
class Batch:
    token_ids: torch.Tensor   # [B, L] long
    slot_ids: torch.Tensor    # [B, L] long
    intent_ids: torch.Tensor  # [B] long
    lengths: torch.Tensor     # [B] long
    pad_mask: torch.Tensor    # [B, L] float, 0 or -inf
    ids: list[str | None] = field(default_factory=list)
    kept: list[list[int]] = field(default_factory=list)
    source_lengths: list[int] = field(default_factory=list)

    @property
    def valid(self) -> torch.Tensor:
        """[B, L] bool, True at real token positions."""
        return torch.isfinite(self.pad_mask)

    def __len__(self):
        return self.token_ids.shape[0]


def encode_batch(
    examples: Sequence[Example], maps: LabelMaps, strip_punct: bool = False
) -> Batch:
    if not examples:
        raise CorpusError("cannot encode an empty batch")
    rows, kept = [], []
    source_lengths = [len(ex.tokens) for ex in examples]
    for ex in examples:
        if strip_punct:
            ex, keep = strip_punctuation(ex)
        else:
            keep = list(range(len(ex.tokens)))
        rows.append(ex)
        kept.append(keep)
    B = len(rows)
    L = max(len(ex.tokens) for ex in rows)
    token_ids = torch.full((B, L), PAD_TOKEN, dtype=torch.long)
    slot_ids = torch.full((B, L), PAD_TAG, dtype=torch.long)
    pad_mask = torch.full((B, L), NEG_INF)
    intent_ids = torch.empty(B, dtype=torch.long)
    lengths = torch.empty(B, dtype=torch.long)
    for b, ex in enumerate(rows):
        n = len(ex.tokens)
        lengths[b] = n
        token_ids[b, :n] = torch.tensor([maps.tokens.get(t, UNK_TOKEN) for t in ex.tokens])
        slot_ids[b, :n] = torch.tensor([maps.slots.get(s, UNK_TAG) for s in ex.slots])
        pad_mask[b, :n] = 0.0
        intent_ids[b] = maps.intents.get(ex.intent, maps.unk_intent)
    return Batch(token_ids, slot_ids, intent_ids, lengths, pad_mask,
                 ids=[ex.id for ex in rows], kept=kept, source_lengths=source_lengths)


def decode_row(batch: Batch, b: int, maps: LabelMaps) -> Example:
    n = int(batch.lengths[b])
    return Example(
        [maps.tokens[int(i)] for i in batch.token_ids[b, :n]],
        [maps.slots[int(i)] for i in batch.slot_ids[b, :n]],
        maps.intent_name(int(batch.intent_ids[b])),
        batch.ids[b] if batch.ids else None,
    )


def iter_batches(examples: Sequence[Example], batch_size: int, order=None):
    """Yield consecutive slices of ``examples`` (optionally permuted by ``order``)."""
    idx = list(range(len(examples))) if order is None else list(order)
    for start in range(0, len(idx), batch_size):
        yield [examples[i] for i in idx[start:start + batch_size]]


SPLITS = ("train", "dev", "test")


def find_split(data_dir, split: str) -> tuple[Path, str]:
    data_dir = Path(data_dir)
    for suffix, fmt in ((".jsonl", "jsonl"), (".tsv", "tabbed"), (".txt", "tabbed")):
        p = data_dir / f"{split}{suffix}"
        if p.exists():
            return p, fmt
    raise FileNotFoundError(f"no {split}.jsonl / {split}.tsv in {data_dir}")


def load_splits(data_dir, splits=SPLITS) -> dict[str, list[Example]]:
    return {s: parse_corpus(*find_split(data_dir, s)) for s in splits}
