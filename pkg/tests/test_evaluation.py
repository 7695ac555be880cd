import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctran.evaluation import (
    MetricError,
    SlotSpan,
    aggregate_runs,
    extract_spans,
    intent_accuracy,
    metrics_report,
    slot_f1,
    spans_to_tags,
)
from ctran.verify import brute_force_span_f1, random_tag_pair


class TestSpans:
    def test_single_chunk(self):
        assert extract_spans(["O", "B-loc", "I-loc", "O"]) == {SlotSpan(1, 2, "loc")}

    def test_adjacent_restarts(self):
        assert extract_spans(["B-a", "B-a"]) == {SlotSpan(0, 0, "a"), SlotSpan(1, 1, "a")}

    def test_orphan_inside_starts_a_chunk(self):
        assert extract_spans(["O", "I-x", "I-x"]) == {SlotSpan(1, 2, "x")}

    def test_type_change_splits(self):
        assert extract_spans(["B-a", "I-b"]) == {SlotSpan(0, 0, "a"), SlotSpan(1, 1, "b")}

    def test_unprefixed_tag_is_its_own_chunk(self):
        assert extract_spans(["city", "city"]) == {SlotSpan(0, 0, "city"), SlotSpan(1, 1, "city")}

    def test_all_outside(self):
        assert extract_spans(["O", "O"]) == set()


class TestSlotF1:
    def test_perfect(self):
        tags = [["B-a", "I-a", "O"], ["O", "B-b"]]
        assert slot_f1(tags, tags)["f1"] == 1.0

    def test_no_exact_match(self):
        out = slot_f1([["B-loc", "I-loc"]], [["B-loc", "O"]])
        assert out == {"precision": 0.0, "recall": 0.0, "f1": 0.0}

    def test_half(self):
        gold = [["B-a", "O", "B-b"]]
        pred = [["B-a", "B-c", "O"]]
        assert slot_f1(gold, pred) == {"precision": 0.5, "recall": 0.5, "f1": 0.5}

    def test_length_mismatch_names_example(self):
        with pytest.raises(MetricError, match="example 1"):
            slot_f1([["O"], ["O", "O"]], [["O"], ["O"]])

    def test_count_mismatch(self):
        with pytest.raises(MetricError):
            slot_f1([["O"]], [])

    def test_unknown_tag_is_an_unmatched_span(self):
        out = slot_f1([["B-a", "O"]], [["B-a", "B-<unk>"]])
        assert out["recall"] == 1.0 and out["precision"] == 0.5


class TestIntentAccuracy:
    def test_examples(self):
        assert intent_accuracy(["a", "b"], ["a", "b"]) == 1.0
        assert intent_accuracy(["a", "b"], ["b", "a"]) == 0.0
        assert intent_accuracy([1, 2, 3, 4], [1, 2, 3, 0]) == 0.75

    def test_mismatch(self):
        with pytest.raises(MetricError):
            intent_accuracy(["a"], ["a", "b"])


class TestAggregation:
    @pytest.mark.parametrize("runs,want", [([0.95], 0.95), ([0.90, 0.95, 0.99], 0.95),
                                           ([0.90, 0.96], 0.93)])
    def test_median(self, runs, want):
        assert aggregate_runs([{"m": r} for r in runs])["m"] == pytest.approx(want, abs=1e-15)

    def test_empty(self):
        with pytest.raises(MetricError):
            aggregate_runs([])

    def test_report_shape(self):
        runs = [{"slot_f1": f, "slot_precision": f, "slot_recall": f, "intent_accuracy": 1.0}
                for f in (0.8, 0.9, 1.0)]
        rep = metrics_report(runs)
        assert set(rep) == {"slot_f1", "slot_precision", "slot_recall", "intent_accuracy",
                            "per_seed", "median"}
        assert rep["slot_f1"] == 0.9 and len(rep["per_seed"]) == 3


bio = st.sampled_from(["O", "B-a", "I-a", "B-b", "I-b"])
sequences = st.lists(st.lists(bio, min_size=1, max_size=6), min_size=1, max_size=5)


@settings(max_examples=150, deadline=None)
@given(sequences, st.randoms())
def test_reordering_symmetry(gold, rnd):
    pred = [list(reversed(g)) for g in gold]
    order = list(range(len(gold)))
    rnd.shuffle(order)
    assert slot_f1(gold, pred) == slot_f1([gold[i] for i in order], [pred[i] for i in order])


@settings(max_examples=150, deadline=None)
@given(st.lists(bio, min_size=1, max_size=10))
def test_render_round_trip_is_idempotent(tags):
    spans = extract_spans(tags)
    rendered = spans_to_tags(spans, len(tags))
    assert extract_spans(rendered) == spans
    assert spans_to_tags(extract_spans(rendered), len(tags)) == rendered


@settings(max_examples=150, deadline=None)
@given(sequences, st.data())
def test_f1_is_harmonic_mean(gold, data):
    pred = [data.draw(st.lists(bio, min_size=len(g), max_size=len(g))) for g in gold]
    out = slot_f1(gold, pred)
    p, r = out["precision"], out["recall"]
    if p + r > 0:
        assert abs(out["f1"] - 2 * p * r / (p + r)) < 1e-12


def test_agrees_with_interval_oracle():
    rng = random.Random(123)
    for _ in range(300):
        gold, pred = random_tag_pair(rng)
        assert slot_f1(gold, pred) == brute_force_span_f1(gold, pred)
