import io
import json
import os
import random

import pytest

from nerbert.corpus import (
    Document,
    NerRecord,
    load_pretrain_corpus,
    parse_conll,
    parse_json_dataset,
    sample_sentence_pair,
    serialize_conll,
    serialize_json_dataset,
)
from nerbert.decoding import extract_entities
from nerbert.errors import DataError, ParseError

from conftest import TABLE3_WORDS, TABLE3_WORD_TAGS

TABLE3_CONLL = "".join(
    f"{w}\t{t}\n" for w, t in zip(TABLE3_WORDS, TABLE3_WORD_TAGS)
)


def test_parse_single_token_record():
    assert parse_conll(["Peter\tB-Per", ""]) == [NerRecord(["Peter"], ["B-Per"])]


def test_parse_table3_sentence():
    records = parse_conll(TABLE3_CONLL.splitlines())
    assert len(records) == 1
    rec = records[0]
    assert len(rec.words) == 6
    assert rec.words[-1] == "Main" and rec.tags[-1] == "I-Loc"
    spans = extract_entities(rec.tags)
    assert {s.label for s in spans} == {"Per", "Loc"}


def test_parse_sturm_test_file_entity_count():
    path = os.environ.get("NERBERT_STURM_TEST_FILE", "")
    if not path or not os.path.exists(path):
        pytest.skip("published Sturm test file not available offline")
    with open(path, encoding="utf-8") as handle:
        records = parse_conll(handle)
    pers = sum(
        1 for r in records for s in extract_entities(r.tags) if s.label == "pers"
    )
    assert pers == 83


def test_parse_error_reports_line_number():
    with pytest.raises(ParseError, match="line 3"):
        parse_conll(["a\tO", "b\tO", "c d O"])
    with pytest.raises(ParseError, match="line 1"):
        parse_conll(["a\tO\textra"])


def test_parse_error_unknown_tag_syntax():
    with pytest.raises(ParseError, match="Q-Per"):
        parse_conll(["a\tQ-Per"])
    with pytest.raises(ParseError, match="B-"):
        parse_conll(["a\tB-"])


def test_empty_records_skipped_with_warning(caplog):
    with caplog.at_level("WARNING"):
        records = parse_conll(["a\tO", "", "", "", "b\tO", "", ""])
    assert [r.words for r in records] == [["a"], ["b"]]
    assert any("empty record" in m for m in caplog.messages)


def test_json_empty_array():
    assert parse_json_dataset("[]") == []


def test_json_matches_conll_on_table3():
    payload = json.dumps([{"words": TABLE3_WORDS, "tags": TABLE3_WORD_TAGS}])
    assert parse_json_dataset(payload) == parse_conll(TABLE3_CONLL.splitlines())


def test_json_length_mismatch_names_record():
    payload = json.dumps(
        [
            {"words": ["a"], "tags": ["O"]},
            {"words": ["a", "b"], "tags": ["O"]},
        ]
    )
    with pytest.raises(ParseError, match="record 1"):
        parse_json_dataset(payload)


def _random_records(rng, n=50):
    from synth import make_ner_records

    return make_ner_records(rng, n)


def test_conll_round_trip_on_synthetic_corpus():
    records = _random_records(random.Random(3))
    buffer = io.StringIO()
    serialize_conll(records, buffer)
    assert parse_conll(buffer.getvalue().splitlines()) == records


def test_json_round_trip_matches_conll():
    records = _random_records(random.Random(4))
    conll_buf, json_buf = io.StringIO(), io.StringIO()
    serialize_conll(records, conll_buf)
    serialize_json_dataset(records, json_buf)
    assert parse_json_dataset(json_buf.getvalue()) == parse_conll(
        conll_buf.getvalue().splitlines()
    )


def test_load_pretrain_corpus_document_boundaries():
    docs = load_pretrain_corpus(["a b", "c d", "", "e f", "", ""])
    assert len(docs) == 2
    assert docs[0].sentences == [["a", "b"], ["c", "d"]]
    assert docs[1].sentences == [["e", "f"]]


def _pair_corpus():
    return [
        Document("0", [["a0", "x"], ["a1", "x"], ["a2", "x"]]),
        Document("1", [["b0", "y"], ["b1", "y"]]),
        Document("2", [["c0", "z"], ["c1", "z"]]),
    ]


def test_sop_forced_negative_is_flipped_pair():
    corpus = _pair_corpus()
    sent_index = {
        tuple(s): (d.id, i) for d in corpus for i, s in enumerate(d.sentences)
    }
    for seed in range(20):
        first, second, label = sample_sentence_pair(
            corpus, "sop", random.Random(seed), force_label=0
        )
        assert label == 0
        doc_a, i = sent_index[tuple(first)]
        doc_b, j = sent_index[tuple(second)]
        assert doc_a == doc_b and i == j + 1  # flipped consecutive sentences


def test_nsp_forced_negative_uses_different_documents():
    corpus = _pair_corpus()
    doc_of = {tuple(s): d.id for d in corpus for s in d.sentences}
    for seed in range(20):
        first, second, label = sample_sentence_pair(
            corpus, "nsp", random.Random(seed), force_label=0
        )
        assert label == 0
        assert doc_of[tuple(first)] != doc_of[tuple(second)]


def test_pair_invariants_over_random_draws():
    corpus = _pair_corpus()
    rng = random.Random(11)
    position = {
        tuple(s): (d.id, i) for d in corpus for i, s in enumerate(d.sentences)
    }
    for _ in range(500):
        first, second, label = sample_sentence_pair(corpus, "nsp", rng)
        if label == 0:
            assert position[tuple(first)][0] != position[tuple(second)][0]
        else:
            da, i = position[tuple(first)]
            db, j = position[tuple(second)]
            assert da == db and j == i + 1
    for _ in range(500):
        first, second, label = sample_sentence_pair(corpus, "sop", rng)
        da, i = position[tuple(first)]
        db, j = position[tuple(second)]
        assert da == db and abs(i - j) == 1
        assert (j == i + 1) == (label == 1)


def test_pair_label_frequency_close_to_half():
    corpus = _pair_corpus()
    for mode in ("nsp", "sop"):
        rng = random.Random(99)
        ones = sum(
            sample_sentence_pair(corpus, mode, rng)[2] for _ in range(10_000)
        )
        assert abs(ones / 10_000 - 0.5) <= 0.02


def test_pair_sampling_errors_on_tiny_corpus():
    single = [Document("0", [["a", "b"], ["c", "d"]])]
    with pytest.raises(DataError):
        sample_sentence_pair(single, "nsp", random.Random(0))
    short = [Document("0", [["a"]]), Document("1", [["b"]])]
    with pytest.raises(DataError):
        sample_sentence_pair(short, "sop", random.Random(0))
