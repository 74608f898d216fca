"""Turning head outputs into consistent IOB tag sequences.

Viterbi for the CRF heads, threshold/repair decoding for the CSE head, the
entity-fix rule for cleaning up illegal inner tags, and span extraction with
the conlleval-style lenient semantics (a dangling I-X run still opens a span,
matching the behavior of the common entity-level scorers).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch


@dataclass(frozen=True, order=True)
class EntitySpan:
    """One entity occurrence: class label and inclusive token range."""

    label: str
    start: int
    end: int


def is_iob_consistent(tags: list[str]) -> bool:
    """True when no I-X follows anything other than B-X or I-X of the same X."""
    prev = "O"
    for tag in tags:
        if tag.startswith("I-") and prev[2:] != tag[2:]:
            return False
        prev = tag
    return True


def entity_fix(tags: list[str]) -> list[str]:
    """Replace every illegal I-X with the (converted) tag of its predecessor.

    Scans left to right over the already-fixed prefix: an illegal I-X after
    B-Y becomes I-Y, after I-Y becomes I-Y, after O becomes O; an illegal
    I-X at the sequence start becomes B-X.  Consistent input is a fixpoint.
    """
    fixed: list[str] = []
    for i, tag in enumerate(tags):
        if tag.startswith("I-"):
            prev = fixed[i - 1] if i > 0 else None
            legal = prev is not None and prev != "O" and prev[2:] == tag[2:]
            if not legal:
                if prev is None:
                    tag = "B-" + tag[2:]
                elif prev == "O":
                    tag = "O"
                else:
                    tag = "I-" + prev[2:]
        fixed.append(tag)
    return fixed


def extract_entities(tags: list[str]) -> list[EntitySpan]:
    """Spans of maximal B-X (I-X)* runs; a headless I-X run also opens a span."""
    spans: list[EntitySpan] = []
    label: str | None = None
    start = 0
    for i, tag in enumerate(tags):
        if tag.startswith("I-") and label == tag[2:]:
            continue
        if label is not None:
            spans.append(EntitySpan(label, start, i - 1))
            label = None
        if tag != "O":
            label = tag[2:]
            start = i
    if label is not None:
        spans.append(EntitySpan(label, start, len(tags) - 1))
    return spans


def tags_from_spans(spans: list[EntitySpan], length: int) -> list[str]:
    """Render non-overlapping spans to an IOB sequence (everything else O)."""
    tags = ["O"] * length
    for span in spans:
        tags[span.start] = "B-" + span.label
        for i in range(span.start + 1, span.end + 1):
            tags[i] = "I-" + span.label
    return tags


def viterbi_decode(emissions: torch.Tensor, transitions: torch.Tensor) -> list[int]:
    """Highest-scoring class path; ties break toward the lowest class index
    at the earliest differing position."""
    y = emissions.tolist()
    t = transitions.tolist()
    n, gamma = len(y), len(y[0])

    # best[j][c]: best score of a suffix starting at j with class c
    best = y[n - 1][:]
    successor: list[list[int]] = []
    for j in range(n - 2, -1, -1):
        row = [0.0] * gamma
        nxt = [0] * gamma
        for c in range(gamma):
            t_c = t[c]
            best_v, best_c = t_c[0] + best[0], 0
            for c2 in range(1, gamma):
                v = t_c[c2] + best[c2]
                if v > best_v:
                    best_v, best_c = v, c2
            row[c] = y[j][c] + best_v
            nxt[c] = best_c
        best = row
        successor.append(nxt)
    successor.reverse()

    first = max(range(gamma), key=lambda c: (best[c], -c))
    path = [first]
    for nxt in successor:
        path.append(nxt[path[-1]])
    return path


def _argmax_in(values: torch.Tensor, lo: int, hi: int) -> int:
    """Index of the maximum of values[lo..hi] inclusive (first on ties)."""
    return lo + int(torch.argmax(values[lo : hi + 1]))


def cse_decode(out, entities: tuple[str, ...] | None = None) -> list[EntitySpan]:
    """Decode a CSE head output (start/end probabilities + class rows) to spans.

    Positions above 0.5 are start/end markers.  A missing end between two
    starts is inserted at the highest end probability strictly before the
    second start (an unmatched final start closes by the sequence end); the
    mirror rule inserts missing starts.  Each span's class is the argmax over
    entities of the mean class row across the span.  The result is always a
    set of non-overlapping spans, so the rendered tagging is consistent.

    ``entities`` supplies span label names; indices are used when omitted.
    """
    p_start = out.p_start.detach()
    p_end = out.p_end.detach()
    class_probs = out.class_probs.detach()
    n = p_start.shape[0]

    starts = [int(i) for i in range(n) if p_start[i] > 0.5]
    ends = {int(i) for i in range(n) if p_end[i] > 0.5}

    # Ends first: every start must see an end before the next start.
    for idx, s in enumerate(starts):
        stop = starts[idx + 1] - 1 if idx + 1 < len(starts) else n - 1
        if not any(e in ends for e in range(s, stop + 1)):
            ends.add(_argmax_in(p_end, s, stop))
    # Mirror: every end must see a start after the previous end.
    start_set = set(starts)
    ordered_ends = sorted(ends)
    for idx, e in enumerate(ordered_ends):
        lo = ordered_ends[idx - 1] + 1 if idx > 0 else 0
        if not any(s in start_set for s in range(lo, e + 1)):
            start_set.add(_argmax_in(p_start, lo, e))

    spans: list[EntitySpan] = []
    position = 0
    for s in sorted(start_set):
        if s < position:
            continue
        matching = [e for e in ends if e >= s]
        if not matching:
            continue
        e = min(matching)
        mean_probs = class_probs[s : e + 1].mean(dim=0)
        entity = int(torch.argmax(mean_probs[:-1]))  # O column excluded
        label = entities[entity] if entities is not None else str(entity)
        spans.append(EntitySpan(label, s, e))
        position = e + 1
    return spans
