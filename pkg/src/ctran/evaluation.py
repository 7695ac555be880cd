"""Span F1 for slots, intent accuracy and multi-run aggregation."""
from __future__ import annotations

import statistics
from dataclasses import dataclass
from typing import Mapping, Sequence


class MetricError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class SlotSpan:
    start: int
    end: int  # inclusive
    label: str


def _split_tag(tag: str) -> tuple[str, str]:
    if tag == "O":
        return "O", ""
    prefix, sep, label = tag.partition("-")
    if sep and prefix in ("B", "I"):
        return prefix, label
    # no BIO prefix: a chunk of its own
    return "B", tag


def extract_spans(tags: Sequence[str]) -> set[SlotSpan]:
    """Chunk a BIO sequence conlleval-style.

    A chunk starts at ``B-x``, at ``I-x`` following ``O``, or at ``I-x``
    following a chunk of another type.
    """
    spans = set()
    start, label = None, None
    for i, tag in enumerate(tags):
        prefix, typ = _split_tag(tag)
        continues = prefix == "I" and label == typ
        if start is not None and not continues:
            spans.add(SlotSpan(start, i - 1, label))
            start, label = None, None
        if prefix != "O" and not continues:
            start, label = i, typ
    if start is not None:
        spans.add(SlotSpan(start, len(tags) - 1, label))
    return spans


def spans_to_tags(spans, length: int) -> list[str]:
    tags = ["O"] * length
    for s in spans:
        tags[s.start] = f"B-{s.label}"
        for i in range(s.start + 1, s.end + 1):
            tags[i] = f"I-{s.label}"
    return tags


def slot_f1(gold: Sequence[Sequence[str]], pred: Sequence[Sequence[str]]) -> dict:
    """Micro precision / recall / F1 over exact (start, end, label) matches."""
    if len(gold) != len(pred):
        raise MetricError(f"{len(gold)} gold sequences but {len(pred)} predictions")
    correct = n_gold = n_pred = 0
    for i, (g, p) in enumerate(zip(gold, pred)):
        if len(g) != len(p):
            raise MetricError(f"example {i}: gold has {len(g)} tags, prediction {len(p)}")
        gs, ps = extract_spans(g), extract_spans(p)
        correct += len(gs & ps)
        n_gold += len(gs)
        n_pred += len(ps)
    precision = correct / n_pred if n_pred else 0.0
    recall = correct / n_gold if n_gold else 0.0
    if n_gold == 0 and n_pred == 0:
        precision = recall = 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"precision": precision, "recall": recall, "f1": f1}


def intent_accuracy(gold: Sequence, pred: Sequence) -> float:
    if len(gold) != len(pred):
        raise MetricError(f"{len(gold)} gold intents but {len(pred)} predictions")
    if not gold:
        raise MetricError("intent accuracy of an empty set")
    return sum(g == p for g, p in zip(gold, pred)) / len(gold)


def aggregate_runs(runs: Sequence[Mapping[str, float]]) -> dict[str, float]:
    """Per-metric median across runs (mean of the two middle values for even counts)."""
    if not runs:
        raise MetricError("no runs to aggregate")
    keys = runs[0].keys()
    return {k: statistics.median(r[k] for r in runs) for k in keys}


def metrics_report(per_seed: Sequence[Mapping[str, float]]) -> dict:
    """JSON report: median metrics at top level, plus per-seed and median blocks."""
    med = aggregate_runs(per_seed)
    return {
        "slot_f1": med["slot_f1"],
        "slot_precision": med["slot_precision"],
        "slot_recall": med["slot_recall"],
        "intent_accuracy": med["intent_accuracy"],
        "per_seed": [dict(r) for r in per_seed],
        "median": med,
    }
