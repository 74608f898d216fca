"""Command-line interface.

Subcommands: build-vocab, pretrain, finetune, evaluate, predict, fix, score.
Flag names mirror config-file keys with a ``--`` prefix and override them.
Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

from .config import RunConfig, build_run_config, finalize, parse_config_file
from .corpus import parse_conll, serialize_conll
from .errors import ConfigError, DataError, NumericError
from .metrics import entity_f1, format_report, length_bucketed_f1, report_lines, token_f1
from .tokenizer import build_vocab, save_vocab


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    for f in fields(RunConfig):
        parser.add_argument(f"--{f.name}", dest=f"cfg_{f.name}", metavar="VALUE")
    parser.add_argument("--checkpoint", dest="cfg_checkpoint_in", metavar="PATH")
    parser.add_argument("--out", dest="cfg_out_dir", metavar="PATH")


def _config_from_args(args: argparse.Namespace, **forced) -> RunConfig:
    file_values = {}
    if args.config:
        if not Path(args.config).exists():
            raise ConfigError(f"config file not found: {args.config}")
        file_values = parse_config_file(args.config)
    overrides = {
        name.removeprefix("cfg_"): value
        for name, value in vars(args).items()
        if name.startswith("cfg_") and value is not None
    }
    overrides.update(forced)
    return build_run_config(file_values, overrides)


def _cmd_build_vocab(args) -> int:
    lines = Path(args.corpus).read_text(encoding="utf-8").splitlines()
    vocab = build_vocab(lines, args.size)
    with open(args.out, "w", encoding="utf-8") as handle:
        save_vocab(vocab, handle)
    print(f"wrote {len(vocab)} pieces to {args.out}")
    return 0


def _cmd_pretrain(args) -> int:
    from .training import run_pretraining

    config = finalize(_config_from_args(args, task="pretrain"))
    result = run_pretraining(config)
    last = result["history"][-1]
    print(
        f"pre-training done: {result['optimizer_steps']} steps, "
        f"final mlm_acc={last['mlm_acc']:.4f}, checkpoint at {result['checkpoint']}"
    )
    return 0


def _cmd_finetune(args) -> int:
    from .training import run_finetuning

    config = finalize(_config_from_args(args, task="finetune"))
    if args.repeats <= 1:
        result = run_finetuning(config)
        print(
            f"fine-tuning done: best dev E-F1 {result['best_dev_f1']:.4f} "
            f"(epoch {result['best_epoch']}), checkpoint at {result['checkpoint']}"
        )
        return 0

    # repeat helper: consecutive seeds, one subdirectory per run
    base_out, base_seed = Path(config.out_dir), config.seed
    scores = []
    for offset in range(args.repeats):
        run_config = replace(config, seed=base_seed + offset,
                             out_dir=str(base_out / f"seed_{base_seed + offset}"))
        result = run_finetuning(run_config)
        scores.append(result["best_dev_f1"])
        print(f"seed {run_config.seed}: best dev E-F1 {result['best_dev_f1']:.4f}")
    mean = sum(scores) / len(scores)
    base_out.mkdir(parents=True, exist_ok=True)
    summary = [f"runs={len(scores)}", f"mean_dev_f1={mean:.6f}"] + [
        f"seed{base_seed + i}.dev_f1={s:.6f}" for i, s in enumerate(scores)
    ]
    (base_out / "summary.kv").write_text(
        "".join(line + "\n" for line in summary), encoding="utf-8"
    )
    print(f"mean best dev E-F1 over {len(scores)} runs: {mean:.4f}")
    return 0


def _cmd_evaluate(args) -> int:
    from .training import run_evaluation

    config = _config_from_args(args)
    result = run_evaluation(
        config, buckets=args.buckets, oracle=args.oracle, compare_fix=not args.no_compare_fix
    )
    print(format_report(result["entity"], "entity scores"))
    print()
    print(format_report(result["token"], "token scores"))
    if "buckets" in result:
        print()
        for i, rep in enumerate(result["buckets"], start=1):
            print(f"bucket{i}.f1={rep.f1:.6f} (n={rep.gold_count})")
    print(f"\nreports written to {config.out_dir}")
    return 0


def _cmd_predict(args) -> int:
    from .training import run_prediction

    config = _config_from_args(args)
    result = run_prediction(config, args.input, args.out_file, input_format=args.format)
    print(f"tagged {result['records']} record(s) -> {result['output']}")
    if result["errors"]:
        for entry in result["errors"]:
            print(f"error: {entry}", file=sys.stderr)
        print(f"{len(result['errors'])} record(s) skipped", file=sys.stderr)
    return 0


def _cmd_fix(args) -> int:
    from .decoding import entity_fix

    records = parse_conll(Path(args.input).read_text(encoding="utf-8").splitlines())
    fixed = [type(r)(r.words, entity_fix(r.tags)) for r in records]
    with open(args.out_file, "w", encoding="utf-8") as handle:
        serialize_conll(fixed, handle)
    print(f"fixed {len(fixed)} record(s) -> {args.out_file}")
    return 0


def _cmd_score(args) -> int:
    from . import plots

    gold = parse_conll(Path(args.gold).read_text(encoding="utf-8").splitlines())
    pred = parse_conll(Path(args.pred).read_text(encoding="utf-8").splitlines())
    if len(gold) != len(pred):
        raise DataError(f"gold has {len(gold)} records, predictions have {len(pred)}")
    gold_tags = [r.tags for r in gold]
    pred_tags = [r.tags for r in pred]
    entity_report = entity_f1(pred_tags, gold_tags)
    token_report = token_f1(pred_tags, gold_tags)
    print(format_report(entity_report, "entity scores"))
    print()
    print(format_report(token_report, "token scores"))
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        tables = [
            format_report(entity_report, "entity scores"),
            format_report(token_report, "token scores"),
        ]
        lines = report_lines(entity_report, "entity.") + report_lines(token_report, "token.")
        if args.buckets:
            lengths = [len(r.words) for r in gold]
            bucket_reports = length_bucketed_f1(gold_tags, pred_tags, lengths)
            for i, rep in enumerate(bucket_reports, start=1):
                lines.append(f"bucket{i}.f1={rep.f1:.6f}")
            plots.save_bucket_figure(
                bucket_reports, str(out_dir / "buckets.png"), title="E-F1 by word length"
            )
        (out_dir / "report.txt").write_text("\n\n".join(tables) + "\n", encoding="utf-8")
        (out_dir / "report.kv").write_text(
            "".join(l + "\n" for l in lines), encoding="utf-8"
        )
        plots.save_class_figure(entity_report, str(out_dir / "per_class.png"))
        print(f"\nreports written to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nerbert", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build-vocab", help="build a subword vocabulary from text")
    p.add_argument("--corpus", required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_vocab)

    p = sub.add_parser("pretrain", help="pre-train an encoder (MLM, optionally NSP/SOP)")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune a pre-trained encoder for NER")
    _add_config_flags(p)
    p.add_argument("--repeats", type=int, default=1,
                   help="run N fine-tunings with consecutive seeds and report the mean")
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("evaluate", help="score a fine-tuned checkpoint on a labeled file")
    _add_config_flags(p)
    p.add_argument("--buckets", action="store_true", help="add the 7-bucket length report")
    p.add_argument("--oracle", action="store_true",
                   help="score the gold tags against themselves (harness self-test)")
    p.add_argument("--no-compare-fix", action="store_true",
                   help="skip the entity-fix comparison column")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("predict", help="tag a raw-text or CoNLL-like file")
    _add_config_flags(p)
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("conll", "text"), default="conll")
    p.add_argument("--out-file", required=True, help="output file (word<TAB>tag lines)")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("fix", help="apply the entity-fix rule to a CoNLL-like file")
    p.add_argument("--input", required=True)
    p.add_argument("--out-file", required=True)
    p.set_defaults(func=_cmd_fix)

    p = sub.add_parser("score", help="standalone metrics between two CoNLL-like files")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out", help="directory for report files and figures")
    p.add_argument("--buckets", action="store_true")
    p.set_defaults(func=_cmd_score)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    import torch

    torch.set_num_threads(1)  # single-core training; avoids intra-op overhead
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args) or 0
    except SystemExit as exc:
        return int(exc.code or 0)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
