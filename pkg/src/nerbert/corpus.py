"""Corpus ingestion: NER datasets (CoNLL-like and JSON) and pre-training text.

File formats
------------
CoNLL-like: one ``word<TAB>tag`` pair per line, records separated by blank
lines, UTF-8, ``\\n`` line ends.  Tags are ``O`` or ``B-X``/``I-X``.

JSON: a top-level array of ``{"words": [...], "tags": [...]}`` objects.

Pre-training text: plain UTF-8, one sentence per line (whitespace-delimited
words), a blank line ends the current document.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from typing import Iterable, TextIO

from .errors import DataError, ParseError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Document:
    """A pre-training document: ordered sentences, each a list of words."""

    id: str
    sentences: list[list[str]]


@dataclass(frozen=True)
class NerRecord:
    """One labeled sentence: parallel word and word-level IOB tag lists."""

    words: list[str]
    tags: list[str]

    def __post_init__(self):
        if len(self.words) != len(self.tags):
            raise DataError(
                f"record has {len(self.words)} words but {len(self.tags)} tags"
            )


@dataclass
class DatasetSplit:
    train: list[NerRecord] = field(default_factory=list)
    dev: list[NerRecord] = field(default_factory=list)
    test: list[NerRecord] = field(default_factory=list)


def _check_tag(tag: str, lineno: int) -> None:
    if tag == "O":
        return
    if len(tag) > 2 and tag[1] == "-" and tag[0] in ("B", "I"):
        return
    raise ParseError(f"line {lineno}: unknown tag syntax {tag!r}")


def parse_conll(stream: Iterable[str] | TextIO) -> list[NerRecord]:
    """Parse CoNLL-like ``word<TAB>tag`` lines into records.

    Blank lines separate records.  Zero-word records (runs of blank lines)
    are skipped with a warning; trailing blank lines are tolerated silently.
    Raises :class:`ParseError` with the line number for a wrong field count
    or bad tag syntax.
    """
    records: list[NerRecord] = []
    words: list[str] = []
    tags: list[str] = []
    pending_empty = 0
    after_separator = False

    for lineno, line in enumerate(stream, start=1):
        line = line.rstrip("\n")
        if not line.strip():
            if words:
                records.append(NerRecord(list(words), list(tags)))
                words, tags = [], []
            elif after_separator:
                pending_empty += 1
            after_separator = True
            continue
        if pending_empty:
            logger.warning(
                "skipping %d empty record(s) before line %d", pending_empty, lineno
            )
            pending_empty = 0
        fields = line.split("\t")
        if len(fields) != 2:
            raise ParseError(
                f"line {lineno}: expected 'word<TAB>tag', got {len(fields)} field(s)"
            )
        word, tag = fields
        _check_tag(tag, lineno)
        words.append(word)
        tags.append(tag)
        after_separator = False
    if words:
        records.append(NerRecord(list(words), list(tags)))
    return records


def serialize_conll(records: list[NerRecord], stream: TextIO) -> None:
    """Inverse of :func:`parse_conll`: one tab-separated pair per line."""
    for rec in records:
        for word, tag in zip(rec.words, rec.tags):
            stream.write(f"{word}\t{tag}\n")
        stream.write("\n")


def parse_json_dataset(stream: TextIO | str) -> list[NerRecord]:
    """Parse the JSON form: an array of ``{"words": [...], "tags": [...]}``."""
    raw = stream if isinstance(stream, str) else stream.read()
    data = json.loads(raw)
    if not isinstance(data, list):
        raise ParseError("top-level JSON value must be an array")
    records = []
    for idx, item in enumerate(data):
        if not isinstance(item, dict) or "words" not in item or "tags" not in item:
            raise ParseError(f"record {idx}: expected object with 'words' and 'tags'")
        words, tags = item["words"], item["tags"]
        if len(words) != len(tags):
            raise ParseError(
                f"record {idx}: {len(words)} words but {len(tags)} tags"
            )
        for tag in tags:
            _check_tag(tag, idx)
        if not words:
            logger.warning("skipping empty record %d", idx)
            continue
        records.append(NerRecord(list(words), list(tags)))
    return records


def serialize_json_dataset(records: list[NerRecord], stream: TextIO) -> None:
    json.dump(
        [{"words": r.words, "tags": r.tags} for r in records],
        stream,
        ensure_ascii=False,
        indent=1,
    )


def load_pretrain_corpus(stream: Iterable[str]) -> list[Document]:
    """Read pre-training text: one sentence per line, blank line = new document."""
    docs: list[Document] = []
    sentences: list[list[str]] = []

    def flush() -> None:
        if sentences:
            docs.append(Document(id=str(len(docs)), sentences=list(sentences)))
        sentences.clear()

    for line in stream:
        words = line.split()
        if not words:
            flush()
        else:
            sentences.append(words)
    flush()
    return docs


def sample_sentence_pair(
    corpus: list[Document],
    mode: str,
    rng: random.Random,
    force_label: int | None = None,
) -> tuple[list[str], list[str], int]:
    """Draw a sentence pair for a pairing objective.

    ``mode="nsp"``: label 1 pairs two consecutive sentences of one document,
    label 0 pairs a sentence with one from a different document.
    ``mode="sop"``: the pair is always consecutive; label 0 flips the order.
    Labels are drawn with probability 0.5 unless ``force_label`` pins one.
    """
    if mode not in ("nsp", "sop"):
        raise ValueError(f"unknown pair mode {mode!r}")
    multi = [d for d in corpus if len(d.sentences) >= 2]
    if not multi:
        raise DataError("pair sampling needs a document with at least 2 sentences")
    if mode == "nsp" and len(corpus) < 2:
        raise DataError("nsp needs at least 2 documents")

    label = force_label if force_label is not None else int(rng.random() < 0.5)
    doc = rng.choice(multi)
    i = rng.randrange(len(doc.sentences) - 1)
    first, second = doc.sentences[i], doc.sentences[i + 1]

    if mode == "sop":
        return (first, second, 1) if label == 1 else (second, first, 0)
    if label == 1:
        return first, second, 1
    others = [d for d in corpus if d.id != doc.id]
    other = rng.choice(others)
    return first, rng.choice(other.sentences), 0
