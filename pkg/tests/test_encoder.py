import math
import random

import mpmath
import pytest
import torch

from nerbert.encoder import (
    Encoder,
    EncoderConfig,
    MultiHeadAttention,
    attention_energy_bound,
    attention_energy_count,
    clipped_distance,
    parameter_gradients,
    sinusoidal_pe,
    sinusoidal_table,
    word_average,
    word_expand,
)
from nerbert.errors import DataError

from oracles import finite_difference_gradients, max_relative_error


def naive_attention(x: torch.Tensor, mha: MultiHeadAttention) -> torch.Tensor:
    """Loop-based reimplementation of the attention sublayer (oracle)."""
    n, d_model = x.shape
    h, dh = mha.n_heads, mha.d_head
    outputs = []
    for head in range(h):
        rows = slice(head * dh, (head + 1) * dh)
        wq, wk, wv = mha.query.weight[rows], mha.key.weight[rows], mha.value.weight[rows]
        ys = []
        for i in range(n):
            q = wq @ x[i]
            window = range(n)
            if mha.window is not None:
                window = range(max(0, i - mha.window), min(n - 1, i + mha.window) + 1)
            energies = []
            for j in window:
                k = wk @ x[j]
                if mha.distance is not None:
                    k = k + mha.distance.keys[
                        clipped_distance(j, i, mha.distance.clip_distance)
                        + mha.distance.clip_distance
                    ]
                energies.append((q @ k) / math.sqrt(dh))
            energies = torch.stack(energies)
            alphas = torch.softmax(energies, dim=0)
            y = torch.zeros(dh, dtype=x.dtype)
            for a, j in zip(alphas, window):
                v = wv @ x[j]
                if mha.distance is not None:
                    v = v + mha.distance.values[
                        clipped_distance(j, i, mha.distance.clip_distance)
                        + mha.distance.clip_distance
                    ]
                y = y + a * v
            ys.append(y)
        outputs.append(torch.stack(ys))
    merged = torch.cat(outputs, dim=1)
    return merged @ mha.out.weight.t() + mha.out.bias


# ---------------------------------------------------------------------------
# position encodings


def test_sinusoidal_position_zero():
    assert sinusoidal_pe(0, 4).tolist() == [0.0, 1.0, 0.0, 1.0]


def test_sinusoidal_in_range():
    table = sinusoidal_table(10_001, 8)
    assert table.abs().max().item() <= 1.0


def test_sinusoidal_position_one_two_dims():
    vec = sinusoidal_pe(1, 2)
    assert round(vec[0].item(), 5) == 0.84147
    assert round(vec[1].item(), 5) == 0.54030


def test_clipped_distance_saturates():
    assert clipped_distance(8, 1, 3) == 3
    assert clipped_distance(1, 8, 3) == -3
    assert clipped_distance(3, 1, 3) == 2


def test_clipped_distance_shares_rows_beyond_clip():
    clip = 3
    indices = {
        clipped_distance(j2, j1, clip)
        for j1 in range(20)
        for j2 in range(20)
        if abs(j2 - j1) >= clip
    }
    assert indices == {-clip, clip}


# ---------------------------------------------------------------------------
# attention sublayers


def _relative_mha(d_model=4, n_heads=2, clip=2, window=None, dtype=torch.float64):
    mha = MultiHeadAttention(d_model, n_heads, clip_distance=clip, window=window)
    return mha.to(dtype)


def test_singleton_sequence_attends_to_itself():
    mha = _relative_mha()
    x = torch.randn(1, 4, dtype=torch.float64)
    out, probs, _ = mha(x)
    assert torch.allclose(probs, torch.ones_like(probs))
    assert torch.allclose(out, naive_attention(x, mha), atol=1e-12)


def test_zeroed_distances_reduce_to_vanilla_attention():
    torch.manual_seed(0)
    rel = _relative_mha(d_model=8, n_heads=2, clip=3)
    plain = MultiHeadAttention(8, 2).to(torch.float64)
    plain.load_state_dict(
        {k: v for k, v in rel.state_dict().items() if not k.startswith("distance")}
    )
    with torch.no_grad():
        rel.distance.keys.zero_()
        rel.distance.values.zero_()
    x = torch.randn(5, 8, dtype=torch.float64)
    out_rel, _, _ = rel(x)
    out_plain, _, _ = plain(x)
    assert torch.allclose(out_rel, out_plain, atol=1e-12)


def test_relative_attention_matches_high_precision_oracle():
    """Scalar-by-scalar evaluation with 50-digit arithmetic, n=3, d=2, one head."""
    mha = MultiHeadAttention(2, 1, clip_distance=1).to(torch.float64)
    with torch.no_grad():
        mha.query.weight.copy_(torch.tensor([[0.3, -0.7], [1.1, 0.2]]))
        mha.key.weight.copy_(torch.tensor([[-0.5, 0.4], [0.9, -0.1]]))
        mha.value.weight.copy_(torch.tensor([[0.8, 0.6], [-0.3, 1.2]]))
        mha.out.weight.copy_(torch.tensor([[1.0, 0.0], [0.0, 1.0]]))
        mha.out.bias.zero_()
        mha.distance.keys.copy_(torch.tensor([[0.2, -0.1], [0.05, 0.3], [-0.25, 0.15]]))
        mha.distance.values.copy_(torch.tensor([[0.4, 0.1], [-0.2, 0.35], [0.3, -0.05]]))
    x = torch.tensor([[0.5, -1.0], [1.5, 0.25], [-0.75, 2.0]], dtype=torch.float64)

    mpmath.mp.dps = 50
    xs = [[mpmath.mpf(v) for v in row] for row in x.tolist()]
    wq = [[mpmath.mpf(v) for v in row] for row in mha.query.weight.tolist()]
    wk = [[mpmath.mpf(v) for v in row] for row in mha.key.weight.tolist()]
    wv = [[mpmath.mpf(v) for v in row] for row in mha.value.weight.tolist()]
    rk = [[mpmath.mpf(v) for v in row] for row in mha.distance.keys.tolist()]
    rv = [[mpmath.mpf(v) for v in row] for row in mha.distance.values.tolist()]

    def matvec(m, v):
        return [sum(m[r][c] * v[c] for c in range(len(v))) for r in range(len(m))]

    def add(a, b):
        return [x + y for x, y in zip(a, b)]

    expected = []
    for i in range(3):
        q = matvec(wq, xs[i])
        energies = []
        for j in range(3):
            d_idx = clipped_distance(j, i, 1) + 1
            key = add(matvec(wk, xs[j]), rk[d_idx])
            energies.append(sum(a * b for a, b in zip(q, key)) / mpmath.sqrt(2))
        exps = [mpmath.e**e for e in energies]
        total = sum(exps)
        y = [mpmath.mpf(0), mpmath.mpf(0)]
        for j in range(3):
            value = add(matvec(wv, xs[j]), rv[clipped_distance(j, i, 1) + 1])
            y = add(y, [exps[j] / total * c for c in value])
        expected.append([float(c) for c in y])

    out, probs, _ = mha(x)
    assert torch.allclose(out, torch.tensor(expected, dtype=torch.float64), atol=1e-14)
    assert torch.allclose(probs.sum(-1), torch.ones(1, 3, dtype=torch.float64), atol=1e-12)


def test_word_average_two_token_word():
    x = torch.tensor([[1.0, 3.0], [3.0, 5.0]])
    wm = torch.tensor([0, 0])
    assert word_average(x, wm).tolist() == [[2.0, 4.0]]


def test_word_average_identity_for_singleton_words():
    x = torch.randn(6, 4)
    wm = torch.arange(6)
    assert torch.equal(word_average(x, wm), x)


def test_word_average_matches_loop_oracle():
    x = torch.randn(9, 4, dtype=torch.float64)
    wm = torch.tensor([0, 0, 1, 2, 2, 2, 3, 4, 4])
    expected = torch.stack(
        [x[wm == w].mean(dim=0) for w in range(5)]
    )
    assert torch.allclose(word_average(x, wm), expected, atol=1e-12)


def test_word_expand_identity_and_repeat():
    y = torch.randn(3, 4)
    assert torch.equal(word_expand(y, torch.arange(3)), y)
    wm = torch.tensor([0, 1, 1, 1, 2])
    out = word_expand(y, wm)
    assert torch.equal(out[1], out[2]) and torch.equal(out[2], out[3])
    assert torch.equal(out[0], y[0]) and torch.equal(out[4], y[2])


def test_average_of_expand_is_identity():
    y = torch.randn(4, 6, dtype=torch.float64)
    wm = torch.tensor([0, 0, 1, 2, 2, 2, 3])
    assert torch.allclose(word_average(word_expand(y, wm), wm), y, atol=1e-12)


def test_window_covering_sequence_equals_full_relative():
    torch.manual_seed(1)
    wide = _relative_mha(d_model=8, n_heads=2, clip=3, window=7)
    full = _relative_mha(d_model=8, n_heads=2, clip=3)
    full.load_state_dict(wide.state_dict())
    x = torch.randn(6, 8, dtype=torch.float64)
    out_wide, _, _ = wide(x)
    out_full, _, _ = full(x)
    assert torch.allclose(out_wide, out_full, atol=1e-12)


def test_window_zero_sees_only_self():
    torch.manual_seed(2)
    mha = _relative_mha(d_model=4, n_heads=1, clip=2, window=0)
    x1 = torch.randn(5, 4, dtype=torch.float64)
    x2 = x1.clone()
    x2[0] += 10.0
    x2[4] -= 3.0
    out1, _, _ = mha(x1)
    out2, _, _ = mha(x2)
    assert torch.allclose(out1[1:4], out2[1:4], atol=1e-12)


def test_windowed_attention_matches_naive_oracle():
    torch.manual_seed(3)
    mha = _relative_mha(d_model=6, n_heads=3, clip=2, window=1)
    x = torch.randn(6, 6, dtype=torch.float64)
    out, probs, count = mha(x)
    assert torch.allclose(out, naive_attention(x, mha), atol=1e-12)
    # in-window softmax sums to one, out-of-window mass is exactly zero
    assert torch.allclose(probs.sum(-1), torch.ones_like(probs.sum(-1)), atol=1e-12)
    assert count == sum(min(i, 1) + min(5 - i, 1) + 1 for i in range(6))


def test_full_relative_matches_naive_oracle():
    torch.manual_seed(4)
    mha = _relative_mha(d_model=6, n_heads=2, clip=2)
    x = torch.randn(7, 6, dtype=torch.float64)
    out, _, _ = mha(x)
    assert torch.allclose(out, naive_attention(x, mha), atol=1e-12)


# ---------------------------------------------------------------------------
# full encoder


def _tiny_config(mode: str, **kw) -> EncoderConfig:
    base = dict(
        vocab_size=12,
        d_model=16,
        n_heads=2,
        n_layers=2,
        ffn_dim=16,
        clip_distance=2,
        window=1,
        attention_mode=mode,
        max_seq_len=80,
    )
    base.update(kw)
    return EncoderConfig(**base)


@pytest.mark.parametrize("mode", ["abs_full", "rel_full", "wwa"])
@pytest.mark.parametrize("n", [1, 7, 64])
def test_forward_shape(mode, n):
    torch.manual_seed(0)
    enc = Encoder(_tiny_config(mode))
    ids = [5 + (i % 6) for i in range(n)]
    wm = [i // 2 for i in range(n)]
    hidden, _ = enc(ids, wm)
    assert hidden.shape == (n, 16)


def test_sequence_too_long_raises():
    enc = Encoder(_tiny_config("rel_full", max_seq_len=4))
    with pytest.raises(DataError):
        enc([5] * 5, list(range(5)))


def test_rel_full_deterministic_under_reseeding():
    torch.manual_seed(0)
    enc = Encoder(_tiny_config("rel_full"))
    ids, wm = [5, 6, 7, 8], [0, 1, 1, 2]
    out1, _ = enc(ids, wm)
    torch.manual_seed(777)
    random.seed(123)
    out2, _ = enc(ids, wm)
    assert torch.equal(out1, out2)


def test_wwa_sublayer_composition_with_singleton_words():
    """Single-token words + covering window: the attention sublayer output is
    X plus the two attention terms applied directly to the token sequence."""
    torch.manual_seed(5)
    cfg = _tiny_config("wwa", window=10)
    enc = Encoder(cfg).double()
    layer = enc.layers[0]
    x = torch.randn(6, 16, dtype=torch.float64)
    wm = torch.arange(6)
    word_term, _, _ = layer.word_attn(x)  # word_average is identity here
    win_term, _, _ = layer.window_attn(x)
    expected = x + word_term + win_term
    out = layer(x, wm, None)
    manual = layer.norm_ffn(
        layer.norm_attn(expected) + layer.ffn(layer.norm_attn(expected))
    )
    assert torch.allclose(out, manual, atol=1e-12)


def test_wwa_word_branch_invariant_to_within_word_swap():
    torch.manual_seed(6)
    cfg = _tiny_config("wwa")
    enc = Encoder(cfg).double()
    layer = enc.layers[0]
    x = torch.randn(6, 16, dtype=torch.float64)
    wm = torch.tensor([0, 0, 1, 1, 2, 2])
    swapped = x.clone()
    swapped[[2, 3]] = swapped[[3, 2]]

    word_out = word_expand(layer.word_attn(word_average(x, wm))[0], wm)
    word_out_swapped = word_expand(layer.word_attn(word_average(swapped, wm))[0], wm)
    assert torch.equal(word_out, word_out_swapped)

    win_out, _, _ = layer.window_attn(x)
    win_out_swapped, _, _ = layer.window_attn(swapped)
    assert not torch.allclose(win_out, win_out_swapped)


def test_softmax_rows_sum_to_one_all_modes():
    for mode in ("abs_full", "rel_full", "wwa"):
        torch.manual_seed(7)
        enc = Encoder(_tiny_config(mode))
        ids = [5, 6, 7, 8, 9, 10, 5, 6]
        wm = [0, 1, 1, 2, 3, 3, 4, 5]
        _, trace = enc(ids, wm, collect_trace=True)
        for layer in trace.layers:
            for probs in layer.attention_probs.values():
                sums = probs.sum(dim=-1)
                assert (sums - 1.0).abs().max().item() <= 1e-6


def test_energy_count_instrumentation_matches_formula():
    torch.manual_seed(8)
    cfg = _tiny_config("wwa", window=2)
    enc = Encoder(cfg)
    ids = [5, 6, 7, 8, 9, 10, 5, 6, 7]
    wm = [0, 0, 1, 2, 2, 3, 4, 5, 5]
    n, m = len(ids), 6
    _, trace = enc(ids, wm, collect_trace=True)
    expected = attention_energy_count(n, m, cfg)
    for layer in trace.layers:
        assert layer.energy_counts["word"] == m * m
        assert (
            layer.energy_counts["word"] + layer.energy_counts["window"] == expected
        )
    assert expected <= attention_energy_bound(n, m, cfg.window)


def test_energy_count_paper_operating_point():
    cfg = _tiny_config("wwa", window=5, max_seq_len=500)
    count = attention_energy_count(450, 300, cfg)
    bound = attention_energy_bound(450, 300, 5)
    assert bound == 300**2 + 11 * 450 == 94_950
    assert count == bound - 2 * (5 + 4 + 3 + 2 + 1)
    assert bound < (450**2) / 2  # more than halved
    # per-row equality away from the boundary
    w = 5
    for i in range(w, 450 - w):
        assert min(i, w) + min(449 - i, w) + 1 == 2 * w + 1


# ---------------------------------------------------------------------------
# gradients


def _word_structured_input():
    ids = [2, 6, 7, 8, 9, 3]  # CLS a b b c SEP with a two-token word
    wm = [0, 1, 2, 2, 3, 4]
    segs = [0, 0, 0, 1, 1, 1]
    return ids, wm, segs


def _grad_model(mode: str) -> torch.nn.ModuleDict:
    from nerbert.heads import MlmHead, PairHead

    torch.manual_seed(11)
    return torch.nn.ModuleDict(
        {
            "encoder": Encoder(_tiny_config(mode)),
            "mlm": MlmHead(16, 12),
            "pair": PairHead(16),
        }
    ).double()


@pytest.mark.parametrize("mode", ["abs_full", "rel_full", "wwa"])
def test_gradients_match_finite_differences(mode):
    from nerbert.heads import mlm_loss, pair_loss

    model = _grad_model(mode)
    ids, wm, segs = _word_structured_input()
    targets = [(1, 7), (3, 9), (4, 6)]

    def loss_fn():
        hidden, _ = model["encoder"](ids, wm, segs)
        loss, _ = mlm_loss(hidden, targets, model["mlm"])
        return loss + pair_loss(hidden, 1, model["pair"])

    analytic = parameter_gradients(loss_fn(), model)
    numeric = finite_difference_gradients(loss_fn, model)
    worst, name = max_relative_error(analytic, numeric)
    assert worst <= 1e-4, f"worst relative error {worst:.2e} in {name}"


def test_zero_loss_gives_zero_gradients():
    model = _grad_model("rel_full")
    ids, wm, segs = _word_structured_input()
    hidden, _ = model["encoder"](ids, wm, segs)
    loss = (hidden * 0.0).sum()
    grads = parameter_gradients(loss, model["encoder"])
    assert all(torch.count_nonzero(g) == 0 for g in grads.values())


def test_unused_distance_rows_get_exact_zero_gradient():
    torch.manual_seed(13)
    enc = Encoder(_tiny_config("rel_full", clip_distance=5)).double()
    ids, wm = [5, 6], [0, 1]  # distances -1..1 only; rows for |d| >= 2 unused
    hidden, _ = enc(ids, wm)
    grads = parameter_gradients(hidden.sum(), enc)
    for name, grad in grads.items():
        if "distance" in name:
            used = [4, 5, 6]  # clip=5 shifts distances -1,0,1 to rows 4..6
            for row in range(11):
                row_grad = grad[row]
                if row in used:
                    continue
                assert torch.count_nonzero(row_grad) == 0, f"{name} row {row}"
