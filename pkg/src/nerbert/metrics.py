"""Entity-wise and token-wise F1 scoring, length-bucketed analysis, reports.

Entity scoring counts a predicted span as a true positive only when class,
start, and end all match a gold span.  Token scoring is micro-averaged over
the non-O tags.  F1 = 2PR/(P+R) with the 0/0 -> 0 convention throughout.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .decoding import extract_entities
from .errors import DataError


@dataclass
class ClassScore:
    precision: float
    recall: float
    f1: float
    tp: int
    pred_count: int
    gold_count: int


@dataclass
class ScoreReport:
    precision: float
    recall: float
    f1: float
    tp: int
    pred_count: int
    gold_count: int
    per_class: dict[str, ClassScore] = field(default_factory=dict)


def _prf(tp: int, pred: int, gold: int) -> tuple[float, float, float]:
    p = tp / pred if pred else 0.0
    r = tp / gold if gold else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def _report(tp: Counter, pred: Counter, gold: Counter) -> ScoreReport:
    total_tp, total_pred, total_gold = sum(tp.values()), sum(pred.values()), sum(gold.values())
    p, r, f1 = _prf(total_tp, total_pred, total_gold)
    per_class = {}
    for cls in sorted(set(pred) | set(gold)):
        cp, cr, cf = _prf(tp[cls], pred[cls], gold[cls])
        per_class[cls] = ClassScore(cp, cr, cf, tp[cls], pred[cls], gold[cls])
    return ScoreReport(p, r, f1, total_tp, total_pred, total_gold, per_class)


def entity_f1(pred: list[list[str]], gold: list[list[str]]) -> ScoreReport:
    """Span-exact micro P/R/F1 with a per-class breakdown."""
    if len(pred) != len(gold):
        raise DataError(f"{len(pred)} predictions vs {len(gold)} gold sequences")
    tp: Counter = Counter()
    pred_count: Counter = Counter()
    gold_count: Counter = Counter()
    for p_tags, g_tags in zip(pred, gold):
        if len(p_tags) != len(g_tags):
            raise DataError("prediction/gold tag sequences differ in length")
        p_spans = extract_entities(p_tags)
        g_spans = set(extract_entities(g_tags))
        for span in p_spans:
            pred_count[span.label] += 1
            if span in g_spans:
                tp[span.label] += 1
        for span in g_spans:
            gold_count[span.label] += 1
    return _report(tp, pred_count, gold_count)


def token_f1(pred: list[list[str]], gold: list[list[str]]) -> ScoreReport:
    """Micro-averaged per-token P/R/F1 over the non-O tags."""
    if len(pred) != len(gold):
        raise DataError(f"{len(pred)} predictions vs {len(gold)} gold sequences")
    tp: Counter = Counter()
    pred_count: Counter = Counter()
    gold_count: Counter = Counter()
    for p_tags, g_tags in zip(pred, gold):
        if len(p_tags) != len(g_tags):
            raise DataError("prediction/gold tag sequences differ in length")
        for p_tag, g_tag in zip(p_tags, g_tags):
            if p_tag != "O":
                pred_count[p_tag] += 1
            if g_tag != "O":
                gold_count[g_tag] += 1
            if p_tag == g_tag and g_tag != "O":
                tp[g_tag] += 1
    return _report(tp, pred_count, gold_count)


def length_buckets(n_samples: int, n_buckets: int = 7) -> list[int]:
    """Bucket sizes: near-equal parts, the first (n mod k) parts one larger."""
    base, extra = divmod(n_samples, n_buckets)
    return [base + (1 if i < extra else 0) for i in range(n_buckets)]


def length_bucketed_f1(
    gold: list[list[str]],
    pred: list[list[str]],
    lengths: list[int],
    n_buckets: int = 7,
) -> list[ScoreReport]:
    """E-F1 per length bucket: samples sorted by token length ascending (stable),
    split into ``n_buckets`` near-equal parts."""
    if len(gold) < n_buckets:
        raise DataError(f"need at least {n_buckets} samples, got {len(gold)}")
    if not (len(gold) == len(pred) == len(lengths)):
        raise DataError("gold, pred, and lengths must align")
    order = sorted(range(len(gold)), key=lambda i: lengths[i])
    reports = []
    cursor = 0
    for size in length_buckets(len(gold), n_buckets):
        part = order[cursor : cursor + size]
        cursor += size
        reports.append(
            entity_f1([pred[i] for i in part], [gold[i] for i in part])
        )
    return reports


def format_report(report: ScoreReport, title: str = "entity scores") -> str:
    """Aligned text table with the overall row and the per-class breakdown."""
    rows = [("class", "precision", "recall", "f1", "gold", "pred")]
    rows.append(
        ("ALL", f"{report.precision:.4f}", f"{report.recall:.4f}",
         f"{report.f1:.4f}", str(report.gold_count), str(report.pred_count))
    )
    for name, cls in report.per_class.items():
        rows.append(
            (name, f"{cls.precision:.4f}", f"{cls.recall:.4f}",
             f"{cls.f1:.4f}", str(cls.gold_count), str(cls.pred_count))
        )
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = [title]
    for r in rows:
        lines.append("  ".join(val.ljust(w) for val, w in zip(r, widths)).rstrip())
    return "\n".join(lines)


def report_lines(report: ScoreReport, prefix: str = "") -> list[str]:
    """Machine-readable ``name=value`` lines, one metric per line."""
    lines = [
        f"{prefix}precision={report.precision:.6f}",
        f"{prefix}recall={report.recall:.6f}",
        f"{prefix}f1={report.f1:.6f}",
        f"{prefix}support={report.gold_count}",
    ]
    for name, cls in report.per_class.items():
        lines.append(f"{prefix}{name}.precision={cls.precision:.6f}")
        lines.append(f"{prefix}{name}.recall={cls.recall:.6f}")
        lines.append(f"{prefix}{name}.f1={cls.f1:.6f}")
        lines.append(f"{prefix}{name}.support={cls.gold_count}")
    return lines
