"""Transformer encoder with three attention modes.

``abs_full``  full attention, sinusoidal position vectors added to the
              embeddings once before the first layer.
``rel_full``  full attention with trainable clipped-distance embeddings added
              to the keys and values (no absolute positions).
``wwa``       whole-word attention: full relative attention over word-averaged
              vectors (word distances) plus a narrow windowed attention over
              tokens (token distances), both summed onto the residual stream.

All modes share the layer skeleton: attention sublayer -> layer norm ->
feed-forward -> residual -> layer norm.  Forward passes run on a single
sequence (no batch axis); training batches loop over samples and sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DataError, NumericError

ATTENTION_MODES = ("abs_full", "rel_full", "wwa")
INIT_STD = 0.02
LAYER_NORM_EPS = 1e-6


@dataclass
class EncoderConfig:
    vocab_size: int
    d_model: int = 512
    n_heads: int = 8
    n_layers: int = 6
    ffn_dim: int = 0  # 0 -> 4 * d_model
    clip_distance: int = 16
    window: int = 5
    attention_mode: str = "rel_full"
    max_seq_len: int = 320
    n_segments: int = 2

    def __post_init__(self):
        if self.ffn_dim == 0:
            self.ffn_dim = 4 * self.d_model
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if self.attention_mode not in ATTENTION_MODES:
            raise ConfigError(f"unknown attention_mode {self.attention_mode!r}")
        if self.clip_distance < 1:
            raise ConfigError("clip_distance must be >= 1")
        if self.window < 0:
            raise ConfigError("window must be >= 0")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def sinusoidal_pe(position: int, d_model: int) -> torch.Tensor:
    """Fixed position vector: sin at even dims, cos at odd, wavelength 10000^(2k/d)."""
    return sinusoidal_table(position + 1, d_model)[position]


def sinusoidal_table(n: int, d_model: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(n, dtype=dtype).unsqueeze(1)
    k2 = torch.arange(0, d_model, 2, dtype=dtype)
    angles = pos / torch.pow(torch.tensor(10000.0, dtype=dtype), k2 / d_model)
    table = torch.zeros(n, d_model, dtype=dtype)
    table[:, 0::2] = torch.sin(angles)
    table[:, 1::2] = torch.cos(angles[:, : d_model // 2])
    return table


def clipped_distance(j_to: int, j_from: int, clip: int) -> int:
    """Relative offset j_to - j_from saturated to [-clip, clip]."""
    return max(-clip, min(clip, j_to - j_from))


def _distance_index_matrix(n: int, clip: int) -> torch.Tensor:
    """(n, n) long tensor: row i, col j -> clipped (j - i) shifted to 0..2*clip."""
    offsets = torch.arange(n).unsqueeze(0) - torch.arange(n).unsqueeze(1)
    return offsets.clamp(-clip, clip) + clip


class DistanceEmbeddings(nn.Module):
    """Trainable key/value offset embeddings, one row per clipped distance."""

    def __init__(self, clip_distance: int, d_head: int):
        super().__init__()
        self.clip_distance = clip_distance
        rows = 2 * clip_distance + 1
        self.keys = nn.Parameter(torch.randn(rows, d_head) * INIT_STD)
        self.values = nn.Parameter(torch.randn(rows, d_head) * INIT_STD)


class MultiHeadAttention(nn.Module):
    """One attention sublayer; optionally relative (distance) and/or windowed.

    The distance embeddings are shared across heads within the layer.  With a
    window, position i attends to j in [i-window, i+window] only and the
    softmax normalizes over the in-range entries.
    """

    def __init__(
        self,
        d_model: int,
        n_heads: int,
        clip_distance: int | None = None,
        window: int | None = None,
    ):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.window = window
        self.query = nn.Linear(d_model, d_model, bias=False)
        self.key = nn.Linear(d_model, d_model, bias=False)
        self.value = nn.Linear(d_model, d_model, bias=False)
        self.out = nn.Linear(d_model, d_model)
        self.distance = (
            DistanceEmbeddings(clip_distance, self.d_head)
            if clip_distance is not None
            else None
        )

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        n = x.shape[0]
        return x.view(n, self.n_heads, self.d_head).transpose(0, 1)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, int]:
        """Returns (output (n, d_model), attention probs, energy count per head)."""
        q, k, v = self._split(self.query(x)), self._split(self.key(x)), self._split(self.value(x))
        if self.window is None:
            heads, probs, count = self._full(q, k, v, x.shape[0])
        else:
            heads, probs, count = self._windowed(q, k, v, x.shape[0])
        n = x.shape[0]
        merged = heads.transpose(0, 1).reshape(n, -1)
        return self.out(merged), probs, count

    def _full(self, q, k, v, n):
        scores = q @ k.transpose(1, 2)
        if self.distance is not None:
            idx = _distance_index_matrix(n, self.distance.clip_distance)
            by_dist = q @ self.distance.keys.t()  # (h, n, rows)
            scores = scores + by_dist.gather(2, idx.expand(self.n_heads, n, n))
        alphas = F.softmax(scores / math.sqrt(self.d_head), dim=-1)
        out = alphas @ v
        if self.distance is not None:
            rows = self.distance.keys.shape[0]
            mass = torch.zeros(
                self.n_heads, n, rows, dtype=alphas.dtype
            ).scatter_add(2, idx.expand(self.n_heads, n, n), alphas)
            out = out + mass @ self.distance.values
        return out, alphas, n * n

    def _windowed(self, q, k, v, n):
        w = self.window
        width = 2 * w + 1
        pad = (0, 0, w, w)  # pad the sequence axis on both sides
        k_win = F.pad(k, pad).unfold(1, width, 1).permute(0, 1, 3, 2)
        v_win = F.pad(v, pad).unfold(1, width, 1).permute(0, 1, 3, 2)
        scores = (q.unsqueeze(2) * k_win).sum(-1)  # (h, n, width)
        col_dist = torch.arange(-w, w + 1)
        if self.distance is not None:
            col_idx = (col_dist.clamp(-self.distance.clip_distance, self.distance.clip_distance)
                       + self.distance.clip_distance)
            by_dist = q @ self.distance.keys.t()
            scores = scores + by_dist[:, :, col_idx]
        targets = torch.arange(n).unsqueeze(1) + col_dist.unsqueeze(0)
        valid = (targets >= 0) & (targets < n)
        scores = scores.masked_fill(~valid, float("-inf"))
        alphas = F.softmax(scores / math.sqrt(self.d_head), dim=-1)
        out = (alphas.unsqueeze(-1) * v_win).sum(2)
        if self.distance is not None:
            out = out + alphas @ self.distance.values[col_idx]
        return out, alphas, int(valid.sum())


def word_average(x: torch.Tensor, word_map: torch.Tensor) -> torch.Tensor:
    """Mean of each word's token vectors: (n, d) -> (m, d)."""
    m = int(word_map[-1]) + 1
    sums = torch.zeros(m, x.shape[1], dtype=x.dtype).index_add(0, word_map, x)
    counts = torch.bincount(word_map, minlength=m).to(x.dtype)
    return sums / counts.unsqueeze(1)


def word_expand(y_words: torch.Tensor, word_map: torch.Tensor) -> torch.Tensor:
    """Repeat each word vector for its tokens: (m, d) -> (n, d)."""
    return y_words[word_map]


class EncoderLayer(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.mode = config.attention_mode
        if self.mode == "abs_full":
            self.attn = MultiHeadAttention(config.d_model, config.n_heads)
        elif self.mode == "rel_full":
            self.attn = MultiHeadAttention(
                config.d_model, config.n_heads, clip_distance=config.clip_distance
            )
        else:
            self.word_attn = MultiHeadAttention(
                config.d_model, config.n_heads, clip_distance=config.clip_distance
            )
            self.window_attn = MultiHeadAttention(
                config.d_model,
                config.n_heads,
                clip_distance=config.clip_distance,
                window=config.window,
            )
        self.norm_attn = nn.LayerNorm(config.d_model, eps=LAYER_NORM_EPS)
        self.norm_ffn = nn.LayerNorm(config.d_model, eps=LAYER_NORM_EPS)
        self.ffn = nn.Sequential(
            nn.Linear(config.d_model, config.ffn_dim),
            nn.GELU(),
            nn.Linear(config.ffn_dim, config.d_model),
        )

    def forward(self, x: torch.Tensor, word_map: torch.Tensor, trace: "LayerTrace | None"):
        if self.mode == "wwa":
            x_words = word_average(x, word_map)
            y_words, word_probs, word_count = self.word_attn(x_words)
            y_win, win_probs, win_count = self.window_attn(x)
            attn_out = x + word_expand(y_words, word_map) + y_win
            if trace is not None:
                trace.attention_probs = {"word": word_probs, "window": win_probs}
                trace.energy_counts = {"word": word_count, "window": win_count}
                trace.word_sequence = x_words.detach()
        else:
            y, probs, count = self.attn(x)
            attn_out = x + y
            if trace is not None:
                trace.attention_probs = {"full": probs}
                trace.energy_counts = {"full": count}
        h = self.norm_attn(attn_out)
        out = self.norm_ffn(h + self.ffn(h))
        if trace is not None:
            trace.attention_output = attn_out.detach()
            trace.ffn_output = out.detach()
        return out


@dataclass
class LayerTrace:
    layer_input: torch.Tensor | None = None
    attention_output: torch.Tensor | None = None
    ffn_output: torch.Tensor | None = None
    attention_probs: dict = field(default_factory=dict)
    energy_counts: dict = field(default_factory=dict)
    word_sequence: torch.Tensor | None = None


@dataclass
class ActivationTrace:
    layers: list[LayerTrace] = field(default_factory=list)

    def total_energy_count(self) -> int:
        return sum(sum(t.energy_counts.values()) for t in self.layers)


class Encoder(nn.Module):
    """Embeddings plus the encoder stack; forward runs one sequence."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.token_embedding = nn.Embedding(config.vocab_size, config.d_model)
        self.segment_embedding = nn.Embedding(config.n_segments, config.d_model)
        self.layers = nn.ModuleList(
            EncoderLayer(config) for _ in range(config.n_layers)
        )
        self.apply(_init_weights)

    def forward(
        self,
        token_ids,
        word_map,
        segment_ids=None,
        collect_trace: bool = False,
    ) -> tuple[torch.Tensor, ActivationTrace | None]:
        ids = torch.as_tensor(token_ids, dtype=torch.long)
        words = torch.as_tensor(word_map, dtype=torch.long)
        n = ids.shape[0]
        if n > self.config.max_seq_len:
            raise DataError(
                f"sequence length {n} exceeds max_seq_len {self.config.max_seq_len}"
            )
        if segment_ids is None:
            segments = torch.zeros(n, dtype=torch.long)
        else:
            segments = torch.as_tensor(segment_ids, dtype=torch.long)

        x = self.token_embedding(ids) + self.segment_embedding(segments)
        if self.config.attention_mode == "abs_full":
            x = x + sinusoidal_table(n, self.config.d_model, dtype=x.dtype)

        trace = ActivationTrace() if collect_trace else None
        for layer in self.layers:
            layer_trace = LayerTrace(layer_input=x.detach()) if collect_trace else None
            x = layer(x, words, layer_trace)
            if trace is not None:
                trace.layers.append(layer_trace)
        if not torch.isfinite(x).all():
            raise NumericError("non-finite activations in encoder forward")
        return x, trace


def _init_weights(module: nn.Module) -> None:
    if isinstance(module, (nn.Linear, nn.Embedding)):
        nn.init.normal_(module.weight, std=INIT_STD)
        if isinstance(module, nn.Linear) and module.bias is not None:
            nn.init.zeros_(module.bias)


def parameter_gradients(loss: torch.Tensor, model: nn.Module) -> dict[str, torch.Tensor]:
    """Reverse-mode gradients of ``loss`` for every trainable weight, by name.

    Weights that do not influence the loss (e.g. distance-embedding rows for
    offsets never realized in a short sequence) come back as exact zeros.
    """
    named = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    grads = torch.autograd.grad(
        loss, [p for _, p in named], allow_unused=True, retain_graph=True
    )
    return {
        name: (g if g is not None else torch.zeros_like(p))
        for (name, p), g in zip(named, grads)
    }


def attention_energy_count(n_tokens: int, n_words: int, config: EncoderConfig) -> int:
    """Energy values one head computes in one layer under the configured mode."""
    if config.attention_mode != "wwa":
        return n_tokens * n_tokens
    w = config.window
    windowed = sum(
        min(i, w) + min(n_tokens - 1 - i, w) + 1 for i in range(n_tokens)
    )
    return n_words * n_words + windowed


def attention_energy_bound(n_tokens: int, n_words: int, window: int) -> int:
    """Upper bound m^2 + (2w+1)n on the per-head energy count in wwa mode."""
    return n_words * n_words + (2 * window + 1) * n_tokens
