"""Training loops (pre-train, fine-tune), evaluation, and prediction.

Everything is deterministic given (seed, config, data): sampling uses one
``random.Random(seed)``, model init uses ``torch.manual_seed(seed)``, and the
metric logs are formatted to fixed precision, so repeated runs produce
byte-identical logs and checkpoints.
"""

from __future__ import annotations

import itertools
import logging
import math
import random
from pathlib import Path

import torch

from . import plots
from . import tokenizer as tk
from .checkpoint import (
    architecture_mismatches,
    build_head,
    load_checkpoint,
    save_checkpoint,
)
from .config import RunConfig
from .corpus import (
    NerRecord,
    load_pretrain_corpus,
    parse_conll,
    parse_json_dataset,
    sample_sentence_pair,
)
from .decoding import cse_decode, entity_fix, tags_from_spans, viterbi_decode
from .encoder import Encoder, EncoderConfig
from .errors import ConfigError, DataError
from .heads import (
    CrfHead,
    CseOutput,
    MlmHead,
    PairHead,
    TagScheme,
    cse_loss,
    cse_targets,
    lcrf_nll,
    mlm_loss,
    pair_loss,
    sft_loss,
)
from .masking import build_mlm_sample, build_pair_sample
from .metrics import entity_f1, format_report, length_bucketed_f1, report_lines, token_f1
from .tokenizer import align_tags_to_tokens, encode, load_vocab

logger = logging.getLogger(__name__)


def _require(config: RunConfig, *keys: str) -> None:
    for key in keys:
        if not getattr(config, key):
            raise ConfigError(f"config key {key!r} is required for this command")
        if key in ("corpus", "vocab", "train_file", "dev_file", "test_file", "checkpoint_in"):
            if not Path(getattr(config, key)).exists():
                raise ConfigError(f"{key} path does not exist: {getattr(config, key)}")


def encoder_config_from_run(config: RunConfig, vocab_size: int) -> EncoderConfig:
    return EncoderConfig(
        vocab_size=vocab_size,
        d_model=config.d_model,
        n_heads=config.n_heads,
        n_layers=config.n_layers,
        ffn_dim=config.ffn_dim,
        clip_distance=config.clip_distance,
        window=config.window,
        attention_mode=config.attention_mode,
        max_seq_len=config.max_seq_len,
    )


def linear_warmup_schedule(optimizer, total_steps: int, warmup_fraction: float):
    warmup = max(1, int(round(total_steps * warmup_fraction)))

    def factor(completed: int) -> float:
        step = completed + 1
        if step <= warmup:
            return step / warmup
        if total_steps <= warmup:
            return 1.0
        return max(0.0, (total_steps - step) / (total_steps - warmup))

    return torch.optim.lr_scheduler.LambdaLR(optimizer, factor)


def steps_per_epoch(config: RunConfig) -> int:
    return math.ceil(config.samples_per_epoch / config.batch_size)


def _format_row(row: dict) -> str:
    parts = []
    for key, value in row.items():
        if isinstance(value, float):
            parts.append(f"{key}={value:.6f}")
        else:
            parts.append(f"{key}={value}")
    return " ".join(parts)


def _write_log(path: Path, rows: list[dict]) -> None:
    path.write_text("".join(_format_row(r) + "\n" for r in rows), encoding="utf-8")


def load_records(path: str) -> list[NerRecord]:
    text = Path(path).read_text(encoding="utf-8")
    if path.endswith(".json"):
        return parse_json_dataset(text)
    return parse_conll(text.splitlines())


def scheme_from_records(records: list[NerRecord]) -> TagScheme:
    entities = sorted({t[2:] for rec in records for t in rec.tags if t != "O"})
    if not entities:
        raise DataError("training data contains no entity tags")
    return TagScheme(tuple(entities))


# ---------------------------------------------------------------------------
# pre-training


def run_pretraining(config: RunConfig) -> dict:
    _require(config, "corpus", "vocab", "out_dir")
    docs = load_pretrain_corpus(
        Path(config.corpus).read_text(encoding="utf-8").splitlines()
    )
    if not docs:
        raise DataError(f"pre-training corpus {config.corpus} is empty")
    vocab = load_vocab(Path(config.vocab).read_text(encoding="utf-8").splitlines())

    torch.manual_seed(config.seed)
    encoder = Encoder(encoder_config_from_run(config, len(vocab)))
    heads = torch.nn.ModuleDict({"mlm": MlmHead(config.d_model, len(vocab))})
    pair_mode = config.objective.partition("+")[2]  # "", "nsp", or "sop"
    if pair_mode:
        heads["pair"] = PairHead(config.d_model)

    rng = random.Random(config.seed)
    sentences = [s for d in docs for s in d.sentences]
    per_epoch = steps_per_epoch(config)
    total_steps = config.epochs * per_epoch
    optimizer = torch.optim.AdamW(
        itertools.chain(encoder.parameters(), heads.parameters()),
        lr=config.learning_rate,
        weight_decay=config.weight_decay,
    )
    scheduler = linear_warmup_schedule(optimizer, total_steps, config.warmup_fraction)

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    history: list[dict] = []
    step_count = 0
    for epoch in range(1, config.epochs + 1):
        mlm_sum = acc_sum = pair_sum = 0.0
        seen = 0
        for step in range(per_epoch):
            count = min(config.batch_size, config.samples_per_epoch - step * config.batch_size)
            batch_loss = None
            for _ in range(count):
                if pair_mode:
                    first, second, label = sample_sentence_pair(docs, pair_mode, rng)
                    sample = build_pair_sample(
                        first, second, label, vocab, config.wwm, rng, config.max_seq_len
                    )
                else:
                    sentence = sentences[rng.randrange(len(sentences))]
                    sample = build_mlm_sample(
                        sentence, vocab, config.wwm, rng, config.max_seq_len
                    )
                hidden, _ = encoder(sample.input_ids, sample.word_map, sample.segment_ids)
                loss, accuracy = mlm_loss(hidden, sample.mlm_targets, heads["mlm"])
                mlm_sum += loss.item()
                acc_sum += accuracy
                if pair_mode:
                    p_loss = pair_loss(hidden, sample.pair_label, heads["pair"])
                    pair_sum += p_loss.item()
                    loss = loss + p_loss
                batch_loss = loss if batch_loss is None else batch_loss + loss
                seen += 1
            optimizer.zero_grad()
            (batch_loss / count).backward()
            optimizer.step()
            scheduler.step()
            step_count += 1
        row = {"epoch": epoch, "mlm_loss": mlm_sum / seen, "mlm_acc": acc_sum / seen}
        if pair_mode:
            row[f"{pair_mode}_loss"] = pair_sum / seen
        history.append(row)
        logger.info(_format_row(row))

    save_checkpoint(str(config.checkpoint_out()), encoder)
    _write_log(config.metrics_log(), history)
    plots.save_training_curves(history, str(out_dir / "curves.png"), title="pre-training")
    return {
        "history": history,
        "checkpoint": str(config.checkpoint_out()),
        "optimizer_steps": step_count,
    }


# ---------------------------------------------------------------------------
# fine-tuning


def _head_sample_loss(
    kind: str, head, hidden: torch.Tensor, token_tags: list[str], transitions=None
):
    if kind == "sft":
        return sft_loss(hidden, token_tags, head)
    if kind == "cse":
        start, end, classes = cse_targets(token_tags, head.scheme)
        return cse_loss(head(hidden), start, end, classes)
    # CRF flavors: special tokens are excluded from the path.  The transition
    # matrix is built once per batch so every sample shares one graph node.
    if transitions is None:
        transitions = head.transitions()
    emissions = head(hidden)[1:-1]
    path = head.scheme.class_ids(token_tags[1:-1])
    return lcrf_nll(emissions, transitions, path)


def predict_token_tags(
    encoder: Encoder,
    head,
    kind: str,
    tok: tk.TokenizedText,
    apply_fix: bool = False,
) -> list[str]:
    """Decode one encoded sequence to token-level IOB tags (specials get O)."""
    scheme: TagScheme = head.scheme
    with torch.no_grad():
        hidden, _ = encoder(tok.token_ids, tok.word_map)
        n = len(tok.token_ids)
        if kind == "sft":
            classes = head(hidden)[1 : n - 1].argmax(dim=-1).tolist()
            inner = [scheme.tag_of(c) for c in classes]
        elif kind == "cse":
            out = head(hidden)
            inner_out = CseOutput(
                out.start_logits[1 : n - 1],
                out.end_logits[1 : n - 1],
                out.class_logits[1 : n - 1],
            )
            spans = cse_decode(inner_out, scheme.entities)
            inner = tags_from_spans(spans, n - 2)
        else:
            emissions = head(hidden)[1 : n - 1]
            path = viterbi_decode(emissions, head.transitions())
            inner = [scheme.tag_of(c) for c in path]
    tags = ["O"] + inner + ["O"]
    if apply_fix:
        tags = entity_fix(tags)
    return tags


def evaluate_records(
    encoder: Encoder,
    head,
    kind: str,
    vocab: tk.Vocabulary,
    records: list[NerRecord],
    apply_fix: bool,
) -> tuple[list[list[str]], list[list[str]], list[int]]:
    """Token-level (gold, predicted, length) triples for a labeled dataset."""
    golds, preds, lengths = [], [], []
    for record in records:
        tok = encode(record.words, vocab, add_specials=True)
        golds.append(align_tags_to_tokens(record, tok))
        preds.append(predict_token_tags(encoder, head, kind, tok, apply_fix))
        lengths.append(len(tok))
    return golds, preds, lengths


def run_finetuning(config: RunConfig) -> dict:
    _require(config, "vocab", "train_file", "dev_file", "checkpoint_in", "out_dir")
    vocab = load_vocab(Path(config.vocab).read_text(encoding="utf-8").splitlines())
    train = load_records(config.train_file)
    dev = load_records(config.dev_file)
    scheme = scheme_from_records(train)

    encoder, _, meta = load_checkpoint(config.checkpoint_in)
    expected = encoder_config_from_run(config, len(vocab)).to_dict()
    mismatches = architecture_mismatches(expected, meta["encoder_config"])
    if mismatches:
        raise ConfigError(
            "checkpoint architecture differs from config in: " + ", ".join(mismatches)
        )

    torch.manual_seed(config.seed)
    head = build_head(
        config.head, config.d_model, scheme, fixed_penalty=config.crf_fixed_penalty
    )
    if config.crf_freeze_penalties and isinstance(head, CrfHead) and head.transition_mode == "ner":
        head.penalty_factor.requires_grad_(False)
        head.penalty_absolute.requires_grad_(False)

    rng = random.Random(config.seed)
    per_epoch = steps_per_epoch(config)
    total_steps = config.epochs * per_epoch
    trainable = [
        p
        for p in itertools.chain(encoder.parameters(), head.parameters())
        if p.requires_grad
    ]
    optimizer = torch.optim.AdamW(
        trainable, lr=config.learning_rate, weight_decay=config.weight_decay
    )
    scheduler = linear_warmup_schedule(optimizer, total_steps, config.warmup_fraction)

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    history: list[dict] = []
    # primary: dev E-F1 with entity-fix (headline metric); unfixed F1 breaks
    # ties, earliest epoch wins beyond that
    best = {"key": (-1.0, -1.0), "epoch": 0, "encoder": None, "head": None}
    step_count = 0
    for epoch in range(1, config.epochs + 1):
        loss_sum = 0.0
        seen = 0
        for step in range(per_epoch):
            count = min(config.batch_size, config.samples_per_epoch - step * config.batch_size)
            batch_loss = None
            transitions = head.transitions() if isinstance(head, CrfHead) else None
            for _ in range(count):
                record = train[rng.randrange(len(train))]
                tok = encode(record.words, vocab, add_specials=True)
                token_tags = align_tags_to_tokens(record, tok)
                hidden, _ = encoder(tok.token_ids, tok.word_map)
                loss = _head_sample_loss(
                    config.head, head, hidden, token_tags, transitions
                )
                loss_sum += loss.item()
                batch_loss = loss if batch_loss is None else batch_loss + loss
                seen += 1
            optimizer.zero_grad()
            (batch_loss / count).backward()
            optimizer.step()
            scheduler.step()
            step_count += 1

        golds, raw_preds, _ = evaluate_records(encoder, head, config.head, vocab, dev, False)
        raw_f1 = entity_f1(raw_preds, golds).f1
        fixed_f1 = entity_f1([entity_fix(p) for p in raw_preds], golds).f1
        row = {
            "epoch": epoch,
            "loss": loss_sum / seen,
            "dev_f1": raw_f1,
            "dev_f1_fixed": fixed_f1,
        }
        history.append(row)
        logger.info(_format_row(row))
        if (fixed_f1, raw_f1) > best["key"]:
            best = {
                "key": (fixed_f1, raw_f1),
                "epoch": epoch,
                "encoder": {k: v.clone() for k, v in encoder.state_dict().items()},
                "head": {k: v.clone() for k, v in head.state_dict().items()},
            }

    encoder.load_state_dict(best["encoder"])
    head.load_state_dict(best["head"])
    save_checkpoint(str(config.checkpoint_out()), encoder, head, config.head)
    _write_log(config.metrics_log(), history)
    plots.save_training_curves(
        history, str(out_dir / "curves.png"), title=f"fine-tuning ({config.head})"
    )
    return {
        "history": history,
        "checkpoint": str(config.checkpoint_out()),
        "best_epoch": best["epoch"],
        "best_dev_f1": best["key"][0],
        "best_dev_f1_raw": best["key"][1],
        "optimizer_steps": step_count,
        "encoder": encoder,
        "head": head,
        "scheme": scheme,
    }


# ---------------------------------------------------------------------------
# evaluation and prediction


def run_evaluation(
    config: RunConfig,
    buckets: bool = False,
    oracle: bool = False,
    compare_fix: bool = True,
) -> dict:
    _require(config, "vocab", "test_file", "out_dir")
    vocab = load_vocab(Path(config.vocab).read_text(encoding="utf-8").splitlines())
    try:
        records = load_records(config.test_file)
    except DataError as exc:
        raise DataError(
            f"{exc} (evaluation needs labeled input; for raw text use the predict command)"
        ) from exc

    toks = [encode(r.words, vocab, add_specials=True) for r in records]
    golds = [align_tags_to_tokens(r, t) for r, t in zip(records, toks)]
    lengths = [len(t) for t in toks]
    if oracle:
        raw_preds = [list(g) for g in golds]
        head_kind = "oracle"
    else:
        _require(config, "checkpoint_in")
        encoder, head, meta = load_checkpoint(config.checkpoint_in)
        if head is None:
            raise ConfigError("checkpoint has no fine-tuning head; run finetune first")
        head_kind = meta["head"]["kind"]
        raw_preds = [
            predict_token_tags(encoder, head, head_kind, tok) for tok in toks
        ]

    fixed_preds = [entity_fix(p) for p in raw_preds]
    preds = fixed_preds if config.entity_fix else raw_preds
    entity_report = entity_f1(preds, golds)
    fixed_report = entity_f1(fixed_preds, golds)
    token_report = token_f1(preds, golds)

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tables = [
        format_report(entity_report, f"entity scores ({head_kind}, entity_fix={config.entity_fix})"),
        format_report(token_report, "token scores"),
    ]
    lines = report_lines(entity_report, "entity.") + report_lines(token_report, "token.")
    if compare_fix:
        tables.append(format_report(fixed_report, "entity scores with entity-fix"))
        lines += report_lines(fixed_report, "entity_fixed.")

    result = {
        "entity": entity_report,
        "entity_fixed": fixed_report,
        "token": token_report,
    }
    if buckets:
        bucket_reports = length_bucketed_f1(golds, preds, lengths)
        result["buckets"] = bucket_reports
        for i, rep in enumerate(bucket_reports, start=1):
            lines.append(f"bucket{i}.f1={rep.f1:.6f}")
            lines.append(f"bucket{i}.support={rep.gold_count}")
        plots.save_bucket_figure(
            bucket_reports, str(out_dir / "buckets.png"), title="E-F1 by token length"
        )

    (out_dir / "report.txt").write_text("\n\n".join(tables) + "\n", encoding="utf-8")
    (out_dir / "report.kv").write_text("".join(l + "\n" for l in lines), encoding="utf-8")
    comparison = []
    for record, tok, pred in zip(records, toks, preds):
        word_preds = project_to_words(pred, tok)
        for word, gold_tag, pred_tag in zip(record.words, record.tags, word_preds):
            comparison.append(f"{word}\t{gold_tag}\t{pred_tag}")
        comparison.append("")
    (out_dir / "comparison.tsv").write_text(
        "".join(line + "\n" for line in comparison), encoding="utf-8"
    )
    plots.save_class_figure(
        entity_report, str(out_dir / "per_class.png"), title="per-class F1"
    )
    return result


def project_to_words(token_tags: list[str], tok: tk.TokenizedText) -> list[str]:
    """Word-level tags: each word takes the tag of its first token."""
    tags = []
    prev = -1
    for i, word in enumerate(tok.word_map):
        if not tok.special_tokens[i] and word != prev:
            tags.append(token_tags[i])
        prev = word
    return tags


def run_prediction(
    config: RunConfig,
    input_path: str,
    output_path: str,
    input_format: str = "conll",
) -> dict:
    _require(config, "vocab", "checkpoint_in")
    vocab = load_vocab(Path(config.vocab).read_text(encoding="utf-8").splitlines())
    encoder, head, meta = load_checkpoint(config.checkpoint_in)
    if head is None:
        raise ConfigError("checkpoint has no fine-tuning head; run finetune first")
    head_kind = meta["head"]["kind"]

    text = Path(input_path).read_text(encoding="utf-8")
    if input_format == "conll":
        word_lists = [r.words for r in parse_conll(text.splitlines())]
    elif input_format == "text":
        word_lists = [line.split() for line in text.splitlines() if line.split()]
    else:
        raise ConfigError(f"unknown input format {input_format!r}")

    errors: list[str] = []
    out_lines: list[str] = []
    emitted = 0
    for index, words in enumerate(word_lists):
        tok = encode(words, vocab, add_specials=True)
        try:
            token_tags = predict_token_tags(
                encoder, head, head_kind, tok, apply_fix=config.entity_fix
            )
        except DataError as exc:
            errors.append(f"record {index}: {exc}")
            logger.error("record %d skipped: %s", index, exc)
            continue
        word_tags = project_to_words(token_tags, tok)
        if config.entity_fix or head_kind == "cse":
            word_tags = entity_fix(word_tags)
        for word, tag in zip(words, word_tags):
            out_lines.append(f"{word}\t{tag}")
        out_lines.append("")
        emitted += 1
    Path(output_path).write_text(
        "".join(line + "\n" for line in out_lines), encoding="utf-8"
    )
    return {"records": emitted, "errors": errors, "output": output_path}
