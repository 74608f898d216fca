"""Masked-sample construction for pre-training (MLM, optionally whole-word).

Selection picks 15% of the eligible units without replacement (tokens, or
whole words when ``wwm`` is on), at least one.  Each selected unit is
corrupted by a single draw: 80% -> MASK, 10% -> a random non-special id,
10% -> kept; under whole-word masking the draw applies to every token of the
word, so a word is never partially masked.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from . import tokenizer as tk
from .errors import DataError
from .tokenizer import TokenizedText, Vocabulary

MASK_RATE = 0.15
MASK_SHARE, RANDOM_SHARE = 0.8, 0.1


@dataclass
class PretrainSample:
    """A masked input with its restoration targets and optional pair label."""

    input_ids: list[int]
    mlm_targets: list[tuple[int, int]]  # (position, original id), ascending
    segment_ids: list[int]
    pair_label: int | None
    word_map: list[int]
    special_tokens: list[bool] = field(repr=False)

    @property
    def n_words(self) -> int:
        return self.word_map[-1] + 1 if self.word_map else 0


def apply_masking(
    tok: TokenizedText, vocab: Vocabulary, wwm: bool, rng: random.Random
) -> PretrainSample:
    """Mask 15% of the eligible units of ``tok``; specials are never touched."""
    eligible_positions = [
        i for i, special in enumerate(tok.special_tokens) if not special
    ]
    if not eligible_positions:
        raise DataError("masking needs at least one non-special token")

    if wwm:
        units: list[list[int]] = []
        by_word: dict[int, list[int]] = {}
        for i in eligible_positions:
            by_word.setdefault(tok.word_map[i], []).append(i)
        units = [by_word[w] for w in sorted(by_word)]
    else:
        units = [[i] for i in eligible_positions]

    count = max(1, round(MASK_RATE * len(units)))
    selected = sorted(rng.sample(range(len(units)), count))

    input_ids = list(tok.token_ids)
    targets: list[tuple[int, int]] = []
    for u in selected:
        r = rng.random()
        replacement = None
        if r < MASK_SHARE:
            replacement = tk.MASK
        elif r < MASK_SHARE + RANDOM_SHARE:
            replacement = rng.choice(vocab.content_ids)
        for pos in units[u]:
            targets.append((pos, tok.token_ids[pos]))
            if replacement is not None:
                input_ids[pos] = replacement

    targets.sort()
    return PretrainSample(
        input_ids=input_ids,
        mlm_targets=targets,
        segment_ids=[0] * len(input_ids),
        pair_label=None,
        word_map=list(tok.word_map),
        special_tokens=list(tok.special_tokens),
    )


def _word_chunks(words: list[str], vocab: Vocabulary) -> list[list[int]]:
    tok = tk.encode(words, vocab, add_specials=False)
    chunks: list[list[int]] = [[] for _ in range(tok.n_words)]
    for pid, w in zip(tok.token_ids, tok.word_map):
        chunks[w].append(pid)
    return chunks


def _assemble(parts: list[tuple[list[list[int]], bool]]) -> TokenizedText:
    """Concatenate word chunks and singleton specials into one TokenizedText."""
    ids: list[int] = []
    word_map: list[int] = []
    specials: list[bool] = []
    word = -1
    for chunks, special in parts:
        for chunk in chunks:
            word += 1
            ids.extend(chunk)
            word_map.extend([word] * len(chunk))
            specials.extend([special] * len(chunk))
    return TokenizedText(ids, word_map, word + 1, specials)


def build_mlm_sample(
    sentence: list[str],
    vocab: Vocabulary,
    wwm: bool,
    rng: random.Random,
    max_seq_len: int,
) -> PretrainSample:
    """Single-sentence MLM sample: [CLS] sentence [SEP], tail-truncated to fit."""
    chunks = _word_chunks(sentence, vocab)
    while chunks and 2 + sum(map(len, chunks)) > max_seq_len:
        chunks.pop()
    if not chunks:
        raise DataError("sentence has no tokens that fit max_seq_len")
    tok = _assemble([([[tk.CLS]], True), (chunks, False), ([[tk.SEP]], True)])
    return apply_masking(tok, vocab, wwm, rng)


def build_pair_sample(
    first: list[str],
    second: list[str],
    pair_label: int,
    vocab: Vocabulary,
    wwm: bool,
    rng: random.Random,
    max_seq_len: int,
) -> PretrainSample:
    """Pair sample: [CLS] A [SEP] B [SEP] with segment ids 0/1 and masking.

    When the pair exceeds ``max_seq_len``, whole words are dropped from the
    tail of whichever sentence currently holds more tokens.
    """
    a = _word_chunks(first, vocab)
    b = _word_chunks(second, vocab)
    while (a or b) and 3 + sum(map(len, a)) + sum(map(len, b)) > max_seq_len:
        longer = a if sum(map(len, a)) >= sum(map(len, b)) else b
        longer.pop()
    if not a or not b:
        raise DataError("sentence pair has no tokens that fit max_seq_len")
    tok = _assemble(
        [
            ([[tk.CLS]], True),
            (a, False),
            ([[tk.SEP]], True),
            (b, False),
            ([[tk.SEP]], True),
        ]
    )
    sample = apply_masking(tok, vocab, wwm, rng)
    boundary = 2 + sum(map(len, a))  # CLS + A + first SEP
    sample.segment_ids = [0] * boundary + [1] * (len(tok.token_ids) - boundary)
    sample.pair_label = pair_label
    return sample
