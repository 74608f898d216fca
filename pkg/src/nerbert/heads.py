"""Task heads and losses.

Pre-training: masked-token restoration (MLM) and the binary pair objective
(NSP/SOP) on the CLS vector.  Fine-tuning: token softmax (SFT), class-start-end
(CSE), and linear-chain CRF in three transition flavors:

``plain``  transitions are the raw trainable matrix.
``ner``    transitions are ``(allowed + factor * forbidden) * W - absolute *
           forbidden`` with two extra trainable scalars; at factor=1,
           absolute=0 this is exactly the plain matrix.
``fixed``  forbidden transitions pinned to a constant negative value
           (ablation flavor; reported not to help).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DataError

TRANSITION_MODES = ("plain", "ner", "fixed")


@dataclass(frozen=True)
class TagScheme:
    """Entity inventory with the fixed class order B-X1..B-Xe, I-X1..I-Xe, O."""

    entities: tuple[str, ...]

    def __post_init__(self):
        if not self.entities:
            raise ConfigError("tag scheme needs at least one entity")
        if len(set(self.entities)) != len(self.entities):
            raise ConfigError("duplicate entity names")

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_classes(self) -> int:
        return 2 * len(self.entities) + 1

    @property
    def o_class(self) -> int:
        return 2 * len(self.entities)

    def tags(self) -> list[str]:
        e = self.entities
        return [f"B-{x}" for x in e] + [f"I-{x}" for x in e] + ["O"]

    def class_of(self, tag: str) -> int:
        if tag == "O":
            return self.o_class
        kind, _, name = tag.partition("-")
        if name in self.entities and kind in ("B", "I"):
            base = 0 if kind == "B" else self.n_entities
            return base + self.entities.index(name)
        raise DataError(f"tag {tag!r} not in scheme {self.entities}")

    def class_ids(self, tags: list[str]) -> torch.Tensor:
        return torch.tensor([self.class_of(t) for t in tags], dtype=torch.long)

    def tag_of(self, class_id: int) -> str:
        return self.tags()[class_id]

    def entity_class(self, tag: str) -> int:
        """Class index for the CSE head: entities 0..e-1, O = e."""
        if tag == "O":
            return self.n_entities
        return self.entities.index(tag.partition("-")[2])


def forbidden_matrix(n_entities: int) -> torch.Tensor:
    """0/1 matrix of IOB-forbidden transitions (row = from, column = to).

    Entry (i, j) is 1 exactly when column j is an inner class whose
    predecessor is neither the same inner class nor its begin class.
    """
    if n_entities < 1:
        raise ConfigError("need at least one entity")
    e = n_entities
    gamma = 2 * e + 1
    forbidden = torch.zeros(gamma, gamma)
    for j in range(e, 2 * e):
        for i in range(gamma):
            if i != j and i != j - e:
                forbidden[i, j] = 1.0
    return forbidden


def transition_matrix(
    weights: torch.Tensor,
    forbidden: torch.Tensor,
    penalty_factor: torch.Tensor,
    penalty_absolute: torch.Tensor,
) -> torch.Tensor:
    """Transitions with learned relative/absolute penalties on forbidden entries."""
    allowed = 1.0 - forbidden
    return (allowed + penalty_factor * forbidden) * weights - penalty_absolute * forbidden


class MlmHead(nn.Module):
    def __init__(self, d_model: int, vocab_size: int):
        super().__init__()
        self.proj = nn.Linear(d_model, vocab_size)

    def forward(self, hidden: torch.Tensor) -> torch.Tensor:
        return self.proj(hidden)


def mlm_loss(
    hidden: torch.Tensor, mlm_targets: list[tuple[int, int]], head: MlmHead
) -> tuple[torch.Tensor, float]:
    """Mean cross-entropy over the masked positions, plus argmax accuracy."""
    if not mlm_targets:
        raise DataError("mlm_loss needs at least one target")
    positions = torch.tensor([p for p, _ in mlm_targets], dtype=torch.long)
    originals = torch.tensor([t for _, t in mlm_targets], dtype=torch.long)
    logits = head(hidden[positions])
    loss = F.cross_entropy(logits, originals)
    accuracy = (logits.argmax(dim=-1) == originals).float().mean().item()
    return loss, accuracy


class PairHead(nn.Module):
    def __init__(self, d_model: int):
        super().__init__()
        self.proj = nn.Linear(d_model, 1)

    def forward(self, cls_vector: torch.Tensor) -> torch.Tensor:
        return self.proj(cls_vector).squeeze(-1)


def pair_loss(hidden: torch.Tensor, pair_label: int, head: PairHead) -> torch.Tensor:
    """Binary cross-entropy of the pair label on the CLS-position vector."""
    logit = head(hidden[0])
    target = torch.tensor(float(pair_label), dtype=logit.dtype)
    return F.binary_cross_entropy_with_logits(logit, target)


class SftHead(nn.Module):
    """Token-wise softmax over the IOB classes."""

    def __init__(self, d_model: int, scheme: TagScheme):
        super().__init__()
        self.scheme = scheme
        self.proj = nn.Linear(d_model, scheme.n_classes)

    def forward(self, hidden: torch.Tensor) -> torch.Tensor:
        return self.proj(hidden)


def sft_loss(
    hidden: torch.Tensor,
    token_tags: list[str],
    head: SftHead,
    pad_mask: list[bool] | None = None,
) -> torch.Tensor:
    """Mean cross-entropy over all non-PAD tokens against the scheme classes."""
    if len(token_tags) != hidden.shape[0]:
        raise DataError("token_tags length must match the hidden sequence")
    targets = head.scheme.class_ids(token_tags)
    logits = head(hidden)
    if pad_mask is not None:
        keep = torch.tensor([not p for p in pad_mask])
        logits, targets = logits[keep], targets[keep]
    return F.cross_entropy(logits, targets)


@dataclass
class CseOutput:
    """Per-token start/end logits and class logits over entities + O."""

    start_logits: torch.Tensor  # (n,)
    end_logits: torch.Tensor  # (n,)
    class_logits: torch.Tensor  # (n, e+1)

    @property
    def p_start(self) -> torch.Tensor:
        return torch.sigmoid(self.start_logits)

    @property
    def p_end(self) -> torch.Tensor:
        return torch.sigmoid(self.end_logits)

    @property
    def class_probs(self) -> torch.Tensor:
        return F.softmax(self.class_logits, dim=-1)


class CseHead(nn.Module):
    """Start/end markers via sigmoid plus a class softmax without B/I split."""

    def __init__(self, d_model: int, scheme: TagScheme):
        super().__init__()
        self.scheme = scheme
        self.start = nn.Linear(d_model, 1)
        self.end = nn.Linear(d_model, 1)
        self.classes = nn.Linear(d_model, scheme.n_entities + 1)

    def forward(self, hidden: torch.Tensor) -> CseOutput:
        return CseOutput(
            start_logits=self.start(hidden).squeeze(-1),
            end_logits=self.end(hidden).squeeze(-1),
            class_logits=self.classes(hidden),
        )


def cse_loss(
    out: CseOutput,
    start_targets: torch.Tensor,
    end_targets: torch.Tensor,
    class_targets: torch.Tensor,
) -> torch.Tensor:
    """Summed start/end binary cross-entropies plus mean class cross-entropy."""
    start_targets = start_targets.to(out.start_logits.dtype)
    end_targets = end_targets.to(out.end_logits.dtype)
    j_start = F.binary_cross_entropy_with_logits(
        out.start_logits, start_targets, reduction="sum"
    )
    j_end = F.binary_cross_entropy_with_logits(
        out.end_logits, end_targets, reduction="sum"
    )
    j_class = F.cross_entropy(out.class_logits, class_targets)
    return j_start + j_end + j_class


def cse_targets(
    token_tags: list[str], scheme: TagScheme
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Start/end bits and entity-class ids (O keeps its own class) per token."""
    from .decoding import extract_entities

    n = len(token_tags)
    start = torch.zeros(n)
    end = torch.zeros(n)
    classes = torch.full((n,), scheme.n_entities, dtype=torch.long)
    for span in extract_entities(token_tags):
        start[span.start] = 1.0
        end[span.end] = 1.0
        classes[span.start : span.end + 1] = scheme.entities.index(span.label)
    return start, end, classes


class CrfHead(nn.Module):
    """Emission projection plus trainable transition parameters."""

    def __init__(
        self,
        d_model: int,
        scheme: TagScheme,
        transition_mode: str = "plain",
        fixed_penalty: float = 10.0,
    ):
        super().__init__()
        if transition_mode not in TRANSITION_MODES:
            raise ConfigError(f"unknown transition_mode {transition_mode!r}")
        self.scheme = scheme
        self.transition_mode = transition_mode
        self.fixed_penalty = fixed_penalty
        gamma = scheme.n_classes
        self.proj = nn.Linear(d_model, gamma)
        self.transition_weights = nn.Parameter(torch.randn(gamma, gamma) * 0.02)
        self.register_buffer("forbidden", forbidden_matrix(scheme.n_entities))
        if transition_mode == "ner":
            self.penalty_factor = nn.Parameter(torch.tensor(1.0))
            self.penalty_absolute = nn.Parameter(torch.tensor(0.0))

    def transitions(self) -> torch.Tensor:
        forbidden = self.forbidden.to(self.transition_weights.dtype)
        if self.transition_mode == "plain":
            return self.transition_weights
        if self.transition_mode == "ner":
            return transition_matrix(
                self.transition_weights,
                forbidden,
                self.penalty_factor,
                self.penalty_absolute,
            )
        return (1.0 - forbidden) * self.transition_weights - self.fixed_penalty * forbidden

    def forward(self, hidden: torch.Tensor) -> torch.Tensor:
        return self.proj(hidden)


def crf_log_partition(emissions: torch.Tensor, transitions: torch.Tensor) -> torch.Tensor:
    """Log of the sum over all class paths of exp(path score), forward algorithm."""
    alpha = emissions[0]
    for j in range(1, emissions.shape[0]):
        alpha = emissions[j] + torch.logsumexp(alpha.unsqueeze(1) + transitions, dim=0)
    return torch.logsumexp(alpha, dim=0)


def crf_path_score(
    emissions: torch.Tensor, transitions: torch.Tensor, path: torch.Tensor
) -> torch.Tensor:
    score = emissions[torch.arange(emissions.shape[0]), path].sum()
    if path.shape[0] > 1:
        score = score + transitions[path[:-1], path[1:]].sum()
    return score


def lcrf_nll(
    emissions: torch.Tensor, transitions: torch.Tensor, target_path: torch.Tensor
) -> torch.Tensor:
    """Negative log-likelihood of the target path under the linear-chain CRF."""
    if emissions.shape[0] != target_path.shape[0]:
        raise DataError("target path length must match the emission sequence")
    return crf_log_partition(emissions, transitions) - crf_path_score(
        emissions, transitions, target_path
    )
