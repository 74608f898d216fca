"""Run configuration: flat ``key = value`` files with CLI-flag overrides.

Config files are UTF-8, one ``key = value`` per line, ``#`` starts a comment.
Command-line flags mirror the keys with a ``--`` prefix and win over file
values.  Unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

TASKS = ("pretrain", "finetune")
OBJECTIVES = ("mlm", "mlm+nsp", "mlm+sop")
HEADS = ("sft", "cse", "lcrf", "lcrf_ner")


@dataclass
class RunConfig:
    task: str = ""
    # pre-training
    objective: str = ""
    wwm: bool = False
    # fine-tuning
    head: str = ""
    entity_fix: bool = False
    crf_fixed_penalty: float = 0.0
    crf_freeze_penalties: bool = False
    # schedule (0 = task default)
    epochs: int = 0
    samples_per_epoch: int = 0
    batch_size: int = 0
    learning_rate: float = 0.0
    warmup_fraction: float = 0.1
    weight_decay: float = 0.01
    seed: int = 1
    # architecture
    attention_mode: str = "rel_full"
    d_model: int = 512
    n_heads: int = 8
    n_layers: int = 6
    ffn_dim: int = 0
    clip_distance: int = 16
    window: int = 5
    max_seq_len: int = 320
    vocab_size: int = 8000
    # paths
    corpus: str = ""
    vocab: str = ""
    train_file: str = ""
    dev_file: str = ""
    test_file: str = ""
    checkpoint_in: str = ""
    out_dir: str = ""

    def checkpoint_out(self) -> Path:
        return Path(self.out_dir) / "checkpoint.npz"

    def metrics_log(self) -> Path:
        return Path(self.out_dir) / "metrics.log"


PRETRAIN_DEFAULTS = dict(
    objective="mlm", epochs=500, samples_per_epoch=100_000, batch_size=48,
    learning_rate=1e-4,
)
FINETUNE_DEFAULTS = dict(
    epochs=30, samples_per_epoch=5_000, batch_size=16, learning_rate=5e-5,
)


def _coerce(key: str, raw: str, target_type: type):
    raw = raw.strip()
    if target_type is bool:
        lowered = raw.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"config key {key}: expected a boolean, got {raw!r}")
    try:
        return target_type(raw)
    except ValueError as exc:
        raise ConfigError(f"config key {key}: {exc}") from None


def parse_config_file(path: str | Path) -> dict:
    """Read a flat key=value file into a dict of raw strings."""
    values: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def build_run_config(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Merge file values and CLI overrides into a typed RunConfig."""
    field_types = {f.name: f.type for f in fields(RunConfig)}
    type_map = {"str": str, "int": int, "float": float, "bool": bool}
    config = RunConfig()
    for source in (file_values or {}), (overrides or {}):
        for key, value in source.items():
            if value is None:
                continue
            if key not in field_types:
                raise ConfigError(f"unknown config key {key!r}")
            target = type_map[field_types[key]] if isinstance(field_types[key], str) else field_types[key]
            if isinstance(value, str):
                value = _coerce(key, value, target)
            setattr(config, key, value)
    return config


def finalize(config: RunConfig) -> RunConfig:
    """Fill task defaults and enforce the cross-field invariants."""
    if config.task not in TASKS:
        raise ConfigError(f"task must be one of {TASKS}, got {config.task!r}")
    defaults = PRETRAIN_DEFAULTS if config.task == "pretrain" else FINETUNE_DEFAULTS
    for key, value in defaults.items():
        if not getattr(config, key):
            setattr(config, key, value)

    if config.task == "pretrain":
        if config.head:
            raise ConfigError("head is a fine-tuning option; not valid for pretrain")
        if config.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}")
    else:
        if config.objective:
            raise ConfigError("objective is a pre-training option; not valid for finetune")
        if config.head not in HEADS:
            raise ConfigError(f"head must be one of {HEADS}")

    for key in ("epochs", "samples_per_epoch", "batch_size", "max_seq_len", "d_model",
                "n_heads", "n_layers"):
        if getattr(config, key) <= 0:
            raise ConfigError(f"{key} must be positive")
    if config.learning_rate <= 0:
        raise ConfigError("learning_rate must be positive")
    if not 0 <= config.warmup_fraction < 1:
        raise ConfigError("warmup_fraction must be in [0, 1)")
    return config
