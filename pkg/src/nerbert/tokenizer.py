"""Subword tokenizer: frequency-merge vocabulary, greedy encoding, word map.

Every token keeps a pointer to the word it came from (``word_map``); whole-word
masking and word-level attention both rely on that map.  Non-initial pieces of
a word carry the continuation prefix ``_`` (so "Frankfurt" may encode as
``Frank`` + ``_furt``).  Special tokens count as their own singleton words.

Vocabulary file format: one piece per line, line number = id, specials first
in the fixed order PAD, UNK, CLS, SEP, MASK.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, TextIO

from .corpus import NerRecord
from .errors import DataError

CONTINUATION_PREFIX = "_"
SPECIAL_PIECES = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
PAD, UNK, CLS, SEP, MASK = range(5)


@dataclass(frozen=True)
class Vocabulary:
    """Subword piece inventory with dense ids; ids 0..4 are the specials."""

    pieces: list[str]

    def __post_init__(self):
        if self.pieces[: len(SPECIAL_PIECES)] != SPECIAL_PIECES:
            raise DataError("vocabulary must start with the special pieces")
        if len(set(self.pieces)) != len(self.pieces):
            raise DataError("vocabulary contains duplicate pieces")
        object.__setattr__(
            self, "_ids", {p: i for i, p in enumerate(self.pieces)}
        )
        object.__setattr__(
            self, "_max_piece_len", max(len(p) for p in self.pieces)
        )

    def __len__(self) -> int:
        return len(self.pieces)

    def piece_id(self, piece: str) -> int | None:
        return self._ids.get(piece)

    @property
    def special_ids(self) -> tuple[int, ...]:
        return (PAD, UNK, CLS, SEP, MASK)

    @property
    def content_ids(self) -> list[int]:
        return list(range(len(SPECIAL_PIECES), len(self.pieces)))


@dataclass
class TokenizedText:
    """Token ids plus the token-index -> word-index map.

    ``word_map`` is non-decreasing and surjective onto ``range(n_words)``;
    each word occupies one contiguous run of tokens.  ``special_tokens``
    flags CLS/SEP (their words are singletons).
    """

    token_ids: list[int]
    word_map: list[int]
    n_words: int
    special_tokens: list[bool]

    def __post_init__(self):
        if not (len(self.token_ids) == len(self.word_map) == len(self.special_tokens)):
            raise DataError("tokenized fields must have equal length")
        prev = -1
        for w in self.word_map:
            if w < prev or w > prev + 1:
                raise DataError("word_map must be non-decreasing in unit steps")
            prev = w
        if self.word_map and prev != self.n_words - 1:
            raise DataError("word_map must cover all words")

    def __len__(self) -> int:
        return len(self.token_ids)

    def word_token_counts(self) -> list[int]:
        counts = [0] * self.n_words
        for w in self.word_map:
            counts[w] += 1
        return counts


def _word_symbols(word: str) -> list[str]:
    return [word[0]] + [CONTINUATION_PREFIX + c for c in word[1:]]


def build_vocab(corpus: Iterable[str], target_size: int) -> Vocabulary:
    """Build a vocabulary by iterative frequency-based pair merging.

    Merging happens within word boundaries only.  Ties between equally
    frequent pairs break lexicographically, so identical corpus and size
    always give an identical vocabulary.  The full observed character
    alphabet is always included, even if it exceeds ``target_size``.
    """
    word_freq: Counter[str] = Counter()
    for line in corpus:
        word_freq.update(line.split())
    if not word_freq:
        raise DataError("cannot build a vocabulary from an empty corpus")

    charset = {c for w in word_freq for c in w}
    if target_size < len(charset) + len(SPECIAL_PIECES):
        raise DataError(
            f"target_size {target_size} below character set "
            f"({len(charset)}) plus specials ({len(SPECIAL_PIECES)})"
        )

    words = {w: _word_symbols(w) for w in word_freq}
    alphabet = sorted({s for syms in words.values() for s in syms})
    merged: list[str] = []

    def vocab_size() -> int:
        return len(SPECIAL_PIECES) + len(alphabet) + len(merged)

    while vocab_size() < target_size:
        pair_freq: Counter[tuple[str, str]] = Counter()
        for w, syms in words.items():
            f = word_freq[w]
            for a, b in zip(syms, syms[1:]):
                pair_freq[(a, b)] += f
        if not pair_freq:
            break
        best = max(pair_freq.items(), key=lambda kv: (kv[1], kv[0][0], kv[0][1]))
        (left, right), _ = best
        new_sym = left + right.removeprefix(CONTINUATION_PREFIX)
        merged.append(new_sym)
        for w, syms in words.items():
            out = []
            i = 0
            while i < len(syms):
                if i + 1 < len(syms) and syms[i] == left and syms[i + 1] == right:
                    out.append(new_sym)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            words[w] = out

    return Vocabulary(SPECIAL_PIECES + alphabet + merged)


def save_vocab(vocab: Vocabulary, stream: TextIO) -> None:
    for piece in vocab.pieces:
        stream.write(piece + "\n")


def load_vocab(stream: Iterable[str]) -> Vocabulary:
    return Vocabulary([line.rstrip("\n") for line in stream if line.strip()])


def encode(words: list[str], vocab: Vocabulary, add_specials: bool = False) -> TokenizedText:
    """Encode words by greedy longest-match with per-character UNK fallback."""
    token_ids: list[int] = []
    word_map: list[int] = []
    specials: list[bool] = []

    def push(ids: list[int], special: bool) -> None:
        w = (word_map[-1] + 1) if word_map else 0
        token_ids.extend(ids)
        word_map.extend([w] * len(ids))
        specials.extend([special] * len(ids))

    if add_specials:
        push([CLS], True)
    for word in words:
        ids: list[int] = []
        i = 0
        while i < len(word):
            prefix = "" if i == 0 else CONTINUATION_PREFIX
            limit = min(len(word), i + vocab._max_piece_len)
            pid = None
            for j in range(limit, i, -1):
                pid = vocab.piece_id(prefix + word[i:j])
                if pid is not None:
                    i = j
                    break
            if pid is None:
                pid = UNK
                i += 1
            ids.append(pid)
        push(ids, False)
    if add_specials:
        push([SEP], True)

    n_words = (word_map[-1] + 1) if word_map else 0
    return TokenizedText(token_ids, word_map, n_words, specials)


def decode(tok: TokenizedText, vocab: Vocabulary) -> list[str]:
    """Reassemble words (specials dropped, UNK rendered as its piece)."""
    words: dict[int, str] = {}
    for pid, w, special in zip(tok.token_ids, tok.word_map, tok.special_tokens):
        if special:
            continue
        piece = vocab.pieces[pid]
        words[w] = words.get(w, "") + piece.removeprefix(CONTINUATION_PREFIX)
    return [words[w] for w in sorted(words)]


def align_tags_to_tokens(record: NerRecord, tok: TokenizedText) -> list[str]:
    """Propagate word-level IOB tags to tokens.

    The first token of a word keeps the word's tag; continuation tokens of a
    ``B-X`` word get ``I-X``, continuations of ``I-X``/``O`` words repeat the
    word tag.  Special tokens get ``O``.
    """
    content_words = sum(
        1
        for i, w in enumerate(tok.word_map)
        if not tok.special_tokens[i] and (i == 0 or tok.word_map[i - 1] != w)
    )
    if content_words != len(record.words):
        raise DataError(
            f"tokenized text has {content_words} words, record has {len(record.words)}"
        )

    tags: list[str] = []
    content_idx = -1
    prev_word = -1
    for i, w in enumerate(tok.word_map):
        if tok.special_tokens[i]:
            tags.append("O")
            prev_word = w
            continue
        first = w != prev_word
        if first:
            content_idx += 1
        word_tag = record.tags[content_idx]
        if first:
            tags.append(word_tag)
        elif word_tag.startswith("B-"):
            tags.append("I-" + word_tag[2:])
        else:
            tags.append(word_tag)
        prev_word = w
    return tags
