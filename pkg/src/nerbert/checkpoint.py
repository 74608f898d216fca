"""Checkpoint container: a .npz archive of named weight arrays plus metadata.

Layout (documented here and covered by a round-trip test):

* ``meta``: a 0-d string array holding a JSON object with keys
  ``format`` ("nerbert-checkpoint"), ``version`` (1),
  ``encoder_config`` (the EncoderConfig fields), and ``head``
  (null, or ``{"kind": ..., "entities": [...], "transition_mode": ...,
  "fixed_penalty": ...}``).
* ``encoder/<name>``: one array per encoder state entry, torch state-dict
  names, dtypes preserved.
* ``head/<name>``: likewise for the fine-tuning head, when present.

Weights round-trip bit-exactly (arrays are stored verbatim).
"""

from __future__ import annotations

import json

import numpy as np
import torch

from .encoder import Encoder, EncoderConfig
from .errors import ConfigError, DataError
from .heads import CrfHead, CseHead, SftHead, TagScheme

FORMAT_NAME = "nerbert-checkpoint"
HEAD_KINDS = ("sft", "cse", "lcrf", "lcrf_ner")


def _head_meta(head, kind: str) -> dict:
    meta = {"kind": kind, "entities": list(head.scheme.entities)}
    if isinstance(head, CrfHead):
        meta["transition_mode"] = head.transition_mode
        meta["fixed_penalty"] = head.fixed_penalty
    return meta


def save_checkpoint(path: str, encoder: Encoder, head=None, head_kind: str | None = None) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name, tensor in encoder.state_dict().items():
        arrays[f"encoder/{name}"] = tensor.detach().cpu().numpy()
    meta = {
        "format": FORMAT_NAME,
        "version": 1,
        "encoder_config": encoder.config.to_dict(),
        "head": None,
    }
    if head is not None:
        if head_kind not in HEAD_KINDS:
            raise ConfigError(f"head_kind must be one of {HEAD_KINDS}")
        meta["head"] = _head_meta(head, head_kind)
        for name, tensor in head.state_dict().items():
            arrays[f"head/{name}"] = tensor.detach().cpu().numpy()
    arrays["meta"] = np.array(json.dumps(meta))
    np.savez(path, **arrays)


def build_head(kind: str, d_model: int, scheme: TagScheme,
               fixed_penalty: float = 0.0):
    """Construct a fine-tuning head by config name."""
    if kind == "sft":
        return SftHead(d_model, scheme)
    if kind == "cse":
        return CseHead(d_model, scheme)
    if kind == "lcrf":
        mode = "fixed" if fixed_penalty else "plain"
        return CrfHead(d_model, scheme, transition_mode=mode, fixed_penalty=fixed_penalty)
    if kind == "lcrf_ner":
        return CrfHead(d_model, scheme, transition_mode="ner")
    raise ConfigError(f"unknown head kind {kind!r}")


def load_checkpoint(path: str):
    """Returns (encoder, head_or_None, meta dict)."""
    with np.load(path, allow_pickle=False) as data:
        if "meta" not in data:
            raise DataError(f"{path} is not a {FORMAT_NAME} file")
        meta = json.loads(str(data["meta"]))
        if meta.get("format") != FORMAT_NAME:
            raise DataError(f"{path} has unknown format {meta.get('format')!r}")
        arrays = {name: data[name] for name in data.files if name != "meta"}

    config = EncoderConfig(**meta["encoder_config"])
    encoder = Encoder(config)
    encoder.load_state_dict(
        {
            name.removeprefix("encoder/"): torch.from_numpy(arr.copy())
            for name, arr in arrays.items()
            if name.startswith("encoder/")
        }
    )

    head = None
    if meta["head"] is not None:
        info = meta["head"]
        scheme = TagScheme(tuple(info["entities"]))
        head = build_head(
            info["kind"],
            config.d_model,
            scheme,
            fixed_penalty=info.get("fixed_penalty", 0.0) if info.get("transition_mode") == "fixed" else 0.0,
        )
        head.load_state_dict(
            {
                name.removeprefix("head/"): torch.from_numpy(arr.copy())
                for name, arr in arrays.items()
                if name.startswith("head/")
            }
        )
    return encoder, head, meta


def architecture_mismatches(expected: dict, actual: dict) -> list[str]:
    """Names of encoder-config fields whose values differ."""
    return [
        key
        for key in sorted(set(expected) | set(actual))
        if expected.get(key) != actual.get(key)
    ]
