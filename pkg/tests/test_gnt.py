import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from underwater_nerf.gnt import (
    GNTRenderer,
    PatchDecoder,
    TransformerConfig,
    VisibilityError,
    attention,
    volume_render_reference,
)

DT = torch.float64


def randomize(module, seed, scale=0.5):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * scale)
    return module


def W(linear):
    return linear.weight.detach().numpy(), linear.bias.detach().numpy()


# --- independent scalar oracles ------------------------------------------------------


def o_linear(x, wb):
    w, b = wb
    return [sum(w[i][j] * x[j] for j in range(len(x))) + b[i] for i in range(len(b))]


def o_layernorm(x, ln):
    g, b = ln.weight.detach().numpy(), ln.bias.detach().numpy()
    m = sum(x) / len(x)
    var = sum((v - m) ** 2 for v in x) / len(x)
    return [(v - m) / math.sqrt(var + ln.eps) * g[i] + b[i] for i, v in enumerate(x)]


def o_softmax(logits):
    mx = max(logits)
    e = [math.exp(v - mx) for v in logits]
    s = sum(e)
    return [v / s for v in e]


def o_ff(x, ff):
    h = o_linear(o_layernorm(x, ff.norm), W(ff.fc1))
    h = [max(0.0, v) for v in h]
    out = o_linear(h, W(ff.fc2))
    return [a + b for a, b in zip(x, out)]


def o_view_block(x, feats, mask, blk):
    """One query token x against visible features feats (single head)."""
    q = o_linear(o_layernorm(x, blk.norm_q), W(blk.q))
    keys, vals = [], []
    for f, m in zip(feats, mask):
        if m:
            kv = o_layernorm(f, blk.norm_kv)
            keys.append(o_linear(kv, W(blk.k)))
            vals.append(o_linear(kv, W(blk.v)))
    d = len(q)
    w = o_softmax([sum(a * b for a, b in zip(q, k)) / math.sqrt(d) for k in keys])
    att = [sum(w[n] * vals[n][i] for n in range(len(vals))) for i in range(d)]
    x = [a + b for a, b in zip(x, o_linear(att, W(blk.o)))]
    return o_ff(x, blk.ff)


def o_initial_token(feats, mask, direction, r):
    vis = [f for f, m in zip(feats, mask) if m]
    mean = [sum(f[i] for f in vis) / max(1, len(vis)) for i in range(len(feats[0]))]
    return o_linear(mean + o_linear(direction, W(r.dir_proj)), W(r.query_init))


def o_ray_block(tokens, blk):
    """Single-head self-attention over the M tokens of one ray."""
    normed = [o_layernorm(t, blk.norm) for t in tokens]
    qkv = [o_linear(t, W(blk.qkv)) for t in normed]
    d = len(tokens[0])
    q = [v[:d] for v in qkv]
    k = [v[d : 2 * d] for v in qkv]
    v = [v[2 * d :] for v in qkv]
    out = []
    for i, t in enumerate(tokens):
        w = o_softmax([sum(a * b for a, b in zip(q[i], k[j])) / math.sqrt(d) for j in range(len(tokens))])
        att = [sum(w[j] * v[j][c] for j in range(len(tokens))) for c in range(d)]
        x = [a + b for a, b in zip(t, o_linear(att, W(blk.o)))]
        out.append(o_ff(x, blk.ff))
    return out


def o_renderer(feats, mask, direction, r):
    """feats[m][n] -> ray feature for a single ray, depth 1."""
    M = len(feats)
    tokens = [o_initial_token(feats[m], mask[m], direction, r) for m in range(M)]
    tokens = [o_view_block(tokens[m], feats[m], mask[m], r.view_blocks[0]) for m in range(M)]
    if r.pos_embed is not None:
        pe = r.pos_embed.detach().numpy()
        tokens = [[a + b for a, b in zip(t, pe[m])] for m, t in enumerate(tokens)]
    tokens = o_ray_block(tokens, r.ray_blocks[0])
    pooled = [sum(t[i] for t in tokens) / M for i in range(len(tokens[0]))]
    h = [max(0.0, v) for v in o_linear(o_layernorm(pooled, r.norm_out), W(r.out1))]
    return o_linear(h, W(r.out2))


def o_conv(img, conv):
    """img[c][y][x], zero padding 'same'."""
    w, b = conv.weight.detach().numpy(), conv.bias.detach().numpy()
    cout, cin, kh, kw = w.shape
    H, Wd = len(img[0]), len(img[0][0])
    r = kh // 2
    out = [[[b[o] for _ in range(Wd)] for _ in range(H)] for o in range(cout)]
    for o in range(cout):
        for y in range(H):
            for x in range(Wd):
                s = b[o]
                for c in range(cin):
                    for dy in range(kh):
                        for dx in range(kw):
                            yy, xx = y + dy - r, x + dx - r
                            if 0 <= yy < H and 0 <= xx < Wd:
                                s += w[o][c][dy][dx] * img[c][yy][xx]
                out[o][y][x] = s
    return out


def o_decoder_head(feature, head):
    img = [[[v]] for v in feature]
    for layer in head:
        name = type(layer).__name__
        if name == "Upsample":
            img = [[[row[x // 2] for x in range(2 * len(row))] for row in ch for _ in range(2)] for ch in img]
        elif name == "Conv2d":
            img = o_conv(img, layer)
        elif name == "ReLU":
            img = [[[max(0.0, v) for v in row] for row in ch] for ch in img]
    return np.array(img)


# --- attention ---------------------------------------------------------------------


def test_single_key_returns_value():
    q = torch.randn(5, 1, 4, dtype=DT)
    k, v = torch.randn(5, 1, 4, dtype=DT), torch.randn(5, 1, 6, dtype=DT)
    assert torch.allclose(attention(q, k, v), v.expand(5, 1, 6))


def test_identical_keys_average_values():
    q = torch.randn(1, 4, dtype=DT)
    k = torch.ones(3, 4, dtype=DT)
    v = torch.randn(3, 2, dtype=DT)
    assert torch.allclose(attention(q, k, v), v.mean(0, keepdim=True))


def test_hand_set_logits():
    # logits q.k / sqrt(1) = (0, ln2, ln4)
    q = torch.ones(1, 1, dtype=DT)
    k = torch.tensor([[0.0], [math.log(2)], [math.log(4)]], dtype=DT)
    _, w = attention(q, k, torch.eye(3, dtype=DT), return_weights=True)
    assert np.allclose(w[0, 0].numpy(), [1 / 7, 2 / 7, 4 / 7], atol=1e-9)


def test_masked_keys_get_zero_weight():
    q, k, v = torch.randn(2, 4, dtype=DT), torch.randn(3, 4, dtype=DT), torch.randn(3, 4, dtype=DT)
    mask = torch.tensor([[True, False, True]] * 2)
    _, w = attention(q, k, v, mask, return_weights=True)
    assert torch.all(w[..., 1] == 0) and torch.allclose(w.sum(-1), torch.ones(1, 2, dtype=DT))


def test_fully_masked_row_raises():
    q, k, v = torch.randn(2, 4, dtype=DT), torch.randn(3, 4, dtype=DT), torch.randn(3, 4, dtype=DT)
    mask = torch.tensor([[True, False, True], [False, False, False]])
    with pytest.raises(VisibilityError):
        attention(q, k, v, mask)
    out = attention(q, k, v, mask, allow_empty=True)
    assert torch.all(out[1] == 0)


def test_head_split_validation():
    with pytest.raises(ValueError):
        attention(torch.randn(2, 6), torch.randn(3, 6), torch.randn(3, 6), heads=4)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), heads=st.sampled_from([1, 2, 4]))
def test_rows_sum_to_one(seed, heads):
    g = torch.Generator().manual_seed(seed)
    q = torch.randn(3, 5, 8, generator=g) * 10
    k = torch.randn(3, 7, 8, generator=g) * 10
    mask = torch.rand(3, 5, 7, generator=g) > 0.3
    mask[..., 0] = True
    _, w = attention(q, k, k, mask, heads=heads, return_weights=True)
    assert torch.all((w.sum(-1) - 1).abs() <= 1e-5)


# --- renderer ----------------------------------------------------------------------


def small_renderer(dim=4, d_feat=5, M=2, heads=1, pos=True, depth=1, seed=0):
    cfg = TransformerConfig(dim=dim, view_heads=1, ray_heads=heads, ff_hidden=6, depth=depth, samples_per_ray=M, patch_size=2, pos_encoding=pos)
    return randomize(GNTRenderer(cfg, d_feat).to(DT), seed)


def test_view_aggregate_matches_scalar_oracle():
    r = small_renderer(dim=4, d_feat=5)
    rng = np.random.default_rng(0)
    feats = rng.standard_normal((3, 2, 5))
    mask = np.array([[True, True], [True, False], [False, True]])
    dirs = rng.standard_normal((3, 3))
    out = r.view_aggregate(torch.as_tensor(feats), torch.as_tensor(mask), torch.as_tensor(dirs)).detach().numpy()
    for p in range(3):
        tok = o_initial_token(feats[p].tolist(), mask[p], dirs[p].tolist(), r)
        expect = o_view_block(tok, feats[p].tolist(), mask[p], r.view_blocks[0])
        assert np.abs(out[p] - expect).max() < 1e-9


def test_single_view_depends_only_on_that_view():
    r = small_renderer()
    rng = np.random.default_rng(1)
    f = torch.as_tensor(rng.standard_normal((1, 1, 5)))
    d = torch.as_tensor(rng.standard_normal((1, 3)))
    a = r.view_aggregate(f, torch.ones(1, 1, dtype=torch.bool), d)
    f2 = torch.cat([f, torch.as_tensor(rng.standard_normal((1, 1, 5)))], dim=1)
    b = r.view_aggregate(f2, torch.tensor([[True, False]]), d)
    assert torch.allclose(a, b, atol=1e-12)


def test_view_aggregate_invisible_point_raises():
    r = small_renderer()
    with pytest.raises(VisibilityError):
        r.view_aggregate(torch.zeros(2, 3, 5, dtype=DT), torch.tensor([[True, False, False], [False] * 3]), torch.zeros(2, 3, dtype=DT))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_view_aggregate_permutation_invariant(seed):
    r = small_renderer(dim=8, d_feat=6, seed=seed % 7)
    g = torch.Generator().manual_seed(seed)
    feats = torch.randn(4, 5, 6, generator=g, dtype=DT)
    mask = torch.rand(4, 5, generator=g) > 0.3
    mask[:, 0] = True
    dirs = torch.randn(4, 3, generator=g, dtype=DT)
    perm = torch.randperm(5, generator=g)
    a = r.view_aggregate(feats, mask, dirs)
    b = r.view_aggregate(feats[:, perm], mask[:, perm], dirs)
    assert (a - b).abs().max() <= 1e-6


def test_full_renderer_matches_scalar_oracle():
    r = small_renderer(dim=2, d_feat=3, M=2, heads=1)
    rng = np.random.default_rng(2)
    feats = rng.standard_normal((1, 2, 2, 3))
    mask = np.array([[[True, True], [False, True]]])
    d = rng.standard_normal((1, 3))
    out = r(torch.as_tensor(feats), torch.as_tensor(mask), torch.as_tensor(d)).detach().numpy()[0]
    expect = o_renderer(feats[0].tolist(), mask[0].tolist(), d[0].tolist(), r)
    assert np.abs(out - expect).max() < 1e-9


def test_single_sample_pooling_is_identity():
    r = small_renderer(M=1)
    x = torch.randn(3, 1, 4, dtype=DT)
    direct = r.out2(torch.relu(r.out1(r.norm_out(x[:, 0]))))
    assert torch.allclose(r.ray_aggregate_output(x), direct)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_ray_order_invariance_without_position_encoding(seed):
    r = small_renderer(dim=8, d_feat=6, M=6, heads=4, pos=False, depth=2, seed=seed % 5)
    g = torch.Generator().manual_seed(seed)
    feats = torch.randn(3, 6, 4, 6, generator=g, dtype=DT)
    mask = torch.rand(3, 6, 4, generator=g) > 0.2
    mask[..., 0] = True
    dirs = torch.randn(3, 3, generator=g, dtype=DT)
    perm = torch.randperm(6, generator=g)
    a = r(feats, mask, dirs)
    b = r(feats[:, perm], mask[:, perm], dirs)
    assert (a - b).abs().max() <= 1e-6


def test_position_encoding_breaks_order_symmetry():
    r = small_renderer(dim=8, d_feat=6, M=4, heads=4, pos=True)
    feats = torch.randn(2, 4, 3, 6, dtype=DT)
    mask = torch.ones(2, 4, 3, dtype=torch.bool)
    dirs = torch.randn(2, 3, dtype=DT)
    a = r(feats, mask, dirs)
    b = r(feats.flip(1), mask, dirs)
    assert (a - b).abs().max() > 1e-6


def test_invisible_ray_strict_and_lenient():
    r = small_renderer(M=2)
    feats = torch.randn(2, 2, 2, 5, dtype=DT)
    mask = torch.ones(2, 2, 2, dtype=torch.bool)
    mask[1] = False
    with pytest.raises(VisibilityError):
        r(feats, mask, torch.randn(2, 3, dtype=DT))
    out = r(feats, mask, torch.randn(2, 3, dtype=DT), strict=False)
    assert torch.isfinite(out).all()


def test_invisible_samples_do_not_affect_output():
    r = small_renderer(dim=8, d_feat=6, M=3, heads=4)
    feats = torch.randn(1, 3, 2, 6, dtype=DT)
    mask = torch.ones(1, 3, 2, dtype=torch.bool)
    mask[0, 1] = False
    a = r(feats, mask, torch.ones(1, 3, dtype=DT))
    feats2 = feats.clone()
    feats2[0, 1] = 100.0
    b = r(feats2, mask, torch.ones(1, 3, dtype=DT))
    assert torch.allclose(a, b, atol=1e-12)


def test_renderer_is_deterministic():
    r = small_renderer(dim=8, d_feat=6, M=4, heads=4)
    feats = torch.randn(2, 4, 3, 6, dtype=DT)
    mask = torch.ones(2, 4, 3, dtype=torch.bool)
    dirs = torch.randn(2, 3, dtype=DT)
    assert torch.equal(r(feats, mask, dirs), r(feats, mask, dirs))


def test_config_validation():
    with pytest.raises(ValueError):
        TransformerConfig(dim=6, ray_heads=4)
    with pytest.raises(ValueError):
        TransformerConfig(patch_size=3)
    with pytest.raises(ValueError):
        TransformerConfig(depth=0)


def test_wrong_sample_count_with_position_encoding():
    r = small_renderer(M=3)
    with pytest.raises(ValueError, match="samples per ray"):
        r(torch.randn(1, 2, 2, 5, dtype=DT), torch.ones(1, 2, 2, dtype=torch.bool), torch.randn(1, 3, dtype=DT))


# --- decoder -----------------------------------------------------------------------


@pytest.mark.parametrize("p", [2, 4, 8])
def test_decoder_shapes(p):
    dec = PatchDecoder(16, p, 8)
    out = dec(torch.randn(5, 16))
    assert set(out) == {"J", "T_D", "T_B"}
    assert all(v.shape == (5, 3, p, p) for v in out.values())


def test_zero_feature_zero_bias_gives_half_radiance():
    from underwater_nerf.formation import map_raw_to_components

    dec = PatchDecoder(8, 4, 4).to(DT)
    with torch.no_grad():
        for name, p in dec.named_parameters():
            if name.endswith("bias"):
                p.zero_()
    raw = dec(torch.zeros(2, 8, dtype=DT))
    assert all(torch.all(v == 0) for v in raw.values())
    comps = map_raw_to_components(raw["J"], raw["T_D"], raw["T_B"])
    assert torch.all(comps.J == 0.5)


def test_decoder_matches_scalar_conv_oracle():
    dec = randomize(PatchDecoder(3, 2, 2).to(DT), 3)
    feat = np.random.default_rng(4).standard_normal(3)
    out = dec(torch.as_tensor(feat)[None])
    for name, head in dec.heads.items():
        expect = o_decoder_head(feat.tolist(), head)
        assert np.abs(out[name][0].detach().numpy() - expect).max() < 1e-9


def test_heads_are_separate():
    dec = PatchDecoder(8, 2, 4)
    ids = [{id(p) for p in h.parameters()} for h in dec.heads.values()]
    assert not (ids[0] & ids[1]) and not (ids[1] & ids[2])


# --- volume rendering reference ----------------------------------------------------


def test_transparent_ray():
    color, w = volume_render_reference(np.ones((4, 3)), np.zeros(4), np.linspace(1, 2, 4))
    assert np.all(w == 0) and np.all(color == 0)


def test_opaque_front():
    c = np.random.default_rng(0).random((5, 3))
    color, w = volume_render_reference(c, np.array([1e8, 1, 1, 1, 1.0]), np.linspace(1, 2, 5))
    assert w[0] == 1.0 and np.all(w[1:] == 0) and np.array_equal(color, c[0])


def test_three_sample_example():
    color, w = volume_render_reference(np.eye(3), np.array([0.5, 1.0, 2.0]), np.array([1.0, 1.1, 1.2]))
    alpha = [1 - math.exp(-0.05), 1 - math.exp(-0.1), 1.0]
    expect = [alpha[0], (1 - alpha[0]) * alpha[1], (1 - alpha[0]) * (1 - alpha[1])]
    assert np.allclose(w, expect, atol=1e-12)
    assert np.allclose(w, [0.04877, 0.09052, 0.86071], atol=1e-5)
    assert np.allclose(color, w)


def test_negative_density_and_unsorted_depths():
    with pytest.raises(ValueError):
        volume_render_reference(np.ones((2, 3)), np.array([1.0, -1.0]), np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        volume_render_reference(np.ones((2, 3)), np.array([1.0, 1.0]), np.array([2.0, 1.0]))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 32))
def test_weights_sum_matches_closed_form(seed, m):
    rng = np.random.default_rng(seed)
    sig = rng.exponential(1.0, m)
    t = np.sort(rng.uniform(0, 5, m))
    _, w = volume_render_reference(rng.random((m, 3)), sig, t)
    delta = np.append(np.diff(t), 1e10)
    assert np.all(w >= 0) and w.sum() <= 1 + 1e-12
    assert abs(w.sum() - (1 - math.exp(-np.sum(sig * delta)))) <= 1e-5
