import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctran.data import (
    BOS_TAG,
    PAD_TAG,
    PAD_TOKEN,
    RESERVED_TAGS,
    UNK_TAG,
    UNK_TOKEN,
    CorpusError,
    Example,
    LabelMaps,
    build_label_maps,
    decode_row,
    encode_batch,
    load_splits,
    parse_corpus,
    write_jsonl,
)
from ctran.substrate import ConfigError


def test_jsonl_single_record(tmp_path):
    p = tmp_path / "train.jsonl"
    p.write_text(json.dumps({"tokens": ["to", "boston"], "slots": ["O", "B-toloc"],
                             "intent": "atis_flight"}) + "\n")
    (ex,) = parse_corpus(p)
    assert ex.tokens == ("to", "boston")
    assert ex.slots == ("O", "B-toloc")
    assert ex.intent == "atis_flight"


def test_jsonl_length_mismatch_reports_line(tmp_path):
    p = tmp_path / "bad.jsonl"
    good = {"tokens": ["a"], "slots": ["O"], "intent": "x"}
    bad = {"tokens": ["a", "b"], "slots": ["O"], "intent": "x"}
    p.write_text(json.dumps(good) + "\n" + json.dumps(bad) + "\n")
    with pytest.raises(CorpusError, match=r"bad.jsonl:2"):
        parse_corpus(p)


def test_tabbed_blocks(tmp_path):
    p = tmp_path / "dev.tsv"
    p.write_text("to\tO\nboston\tB-toloc\nintent\tatis_flight\n\n"
                 "play\tO\nqueen\tB-artist\nintent\tmusic\n")
    exs = parse_corpus(p, "tabbed")
    assert [e.intent for e in exs] == ["atis_flight", "music"]
    assert exs[1].slots == ("O", "B-artist")


def test_tabbed_missing_intent_line(tmp_path):
    p = tmp_path / "x.tsv"
    p.write_text("to\tO\nboston\tB-toloc\n")
    with pytest.raises(CorpusError, match=":2"):
        parse_corpus(p, "tabbed")


def test_tabbed_bad_token_line(tmp_path):
    p = tmp_path / "x.tsv"
    p.write_text("to\tO\textra\nintent\ta\n")
    with pytest.raises(CorpusError, match=":1"):
        parse_corpus(p, "tabbed")


def test_unknown_format(tmp_path):
    with pytest.raises(ConfigError):
        parse_corpus(tmp_path / "x", "csv")


def test_example_invariants():
    with pytest.raises(CorpusError):
        Example(["a", ""], ["O", "O"], "x")
    with pytest.raises(CorpusError):
        Example([], [], "x")


def test_toy_label_map_sizes():
    maps = build_label_maps([Example(["a", "b"], ["O", "B-x"], "i")])
    assert maps.slots.labels == ["O", "B-x"]
    assert len(maps.slots) == 2 + len(RESERVED_TAGS)
    assert maps.slots.stoi["<pad>"] == PAD_TAG
    assert maps.slots.stoi["<bos>"] == BOS_TAG
    assert maps.slots.stoi["<unk>"] == UNK_TAG
    assert maps.tokens.stoi["<pad>"] == PAD_TOKEN and maps.tokens.stoi["<unk>"] == UNK_TOKEN


def test_maps_are_bijective(corpus):
    maps = build_label_maps(corpus)
    for vocab in (maps.tokens, maps.slots, maps.intents):
        assert all(vocab.stoi[s] == i for i, s in enumerate(vocab.itos))
        assert len(set(vocab.itos)) == len(vocab.itos)


def test_maps_ignore_dev_content(corpus):
    dev = [Example(["zzz"], ["B-neverseen"], "other")]
    maps = build_label_maps(corpus)
    before = maps.to_json()
    encode_batch(dev, maps)
    assert maps.to_json() == before


def test_unseen_labels_map_to_unknown(maps):
    b = encode_batch([Example(["zzz", "boston"], ["B-neverseen", "B-city"], "other")], maps)
    assert b.token_ids[0, 0] == UNK_TOKEN
    assert b.slot_ids[0, 0] == UNK_TAG
    assert b.intent_ids[0] == maps.unk_intent
    assert maps.intent_name(int(b.intent_ids[0])) == "<unk>"


def test_padding(maps):
    exs = [Example(["play", "songs"], ["O", "O"], "music"),
           Example(["play", "songs", "by", "queen"], ["O", "O", "O", "B-artist"], "music")]
    b = encode_batch(exs, maps)
    assert b.token_ids.shape == (2, 4)
    assert b.pad_mask[0].tolist() == [0, 0, -math.inf, -math.inf]
    assert b.token_ids[0, 2:].tolist() == [PAD_TOKEN] * 2
    assert b.slot_ids[0, 2:].tolist() == [PAD_TAG] * 2
    assert b.lengths.tolist() == [2, 4]


def test_strip_punct_drops_o_tagged(maps):
    ex = Example(["to", "boston", "."], ["O", "B-toloc", "O"], "x")
    b = encode_batch([ex], maps, strip_punct=True)
    assert b.lengths.tolist() == [2]
    assert b.kept == [[0, 1]]
    assert encode_batch([ex], maps).lengths.tolist() == [3]


def test_strip_punct_keeps_tagged_punctuation(maps):
    ex = Example(["at", "5", ":", "30"], ["O", "B-time", "I-time", "I-time"], "x")
    with pytest.warns(UserWarning, match="keeping punctuation"):
        b = encode_batch([ex], maps, strip_punct=True)
    assert b.lengths.tolist() == [4]


def test_empty_batch(maps):
    with pytest.raises(CorpusError):
        encode_batch([], maps)


def test_round_trip(corpus, maps):
    b = encode_batch(corpus, maps)
    for i, ex in enumerate(corpus):
        assert decode_row(b, i, maps) == ex


def test_label_maps_json_round_trip(maps):
    again = LabelMaps.from_json(json.loads(json.dumps(maps.to_json())))
    assert again.tokens.itos == maps.tokens.itos
    assert again.slots.itos == maps.slots.itos
    assert again.intents.itos == maps.intents.itos


word = st.text(alphabet="ab.,!", min_size=1, max_size=3)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(word, st.sampled_from(["O", "B-x", "I-x"])), min_size=1, max_size=8),
       st.booleans())
def test_encode_keeps_tokens_and_slots_aligned(pairs, strip):
    ex = Example([p[0] for p in pairs], [p[1] for p in pairs], "i")
    maps = build_label_maps([ex])
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        b = encode_batch([ex], maps, strip)
    n = int(b.lengths[0])
    assert len(b.kept[0]) == n
    assert bool((b.token_ids[0, :n] != PAD_TOKEN).all())
    assert bool((b.slot_ids[0, :n] != PAD_TAG).all())


def test_write_and_load_splits(tmp_path, corpus):
    for split in ("train", "dev", "test"):
        write_jsonl(corpus[:5], tmp_path / f"{split}.jsonl")
    splits = load_splits(tmp_path)
    assert [len(v) for v in splits.values()] == [5, 5, 5]
    assert splits["dev"][0].tokens == corpus[0].tokens


def test_missing_split(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_splits(tmp_path)
