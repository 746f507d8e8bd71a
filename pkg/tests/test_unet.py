import math

import numpy as np
import pytest
import torch

from rgb2raw.unet import (
    AdaptiveGroupNorm,
    AttentionBlock,
    ConfigError,
    GuidedUNet,
    ModelConfig,
    ResBlock,
    TimestepEmbedding,
    guided_modulation,
    tiny_model_config,
)


def zero_modulation(module):
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, AdaptiveGroupNorm):
                m.gamma_conv.weight.zero_()
                m.gamma_conv.bias.zero_()
                m.beta_conv.weight.zero_()
                m.beta_conv.bias.zero_()


# -- guided modulation (adaptive group norm) ---------------------------------


def test_modulation_zeroed_reduces_to_group_norm():
    torch.manual_seed(0)
    agn = AdaptiveGroupNorm(channels=8, guidance_channels=4, hidden=6, groups=4)
    zero_modulation(agn)
    x = torch.randn(2, 8, 8, 8)
    g = torch.randn(2, 4, 16, 16)
    assert torch.allclose(guided_modulation(x, g, agn), agn.norm(x), atol=1e-6)


def test_modulation_constant_input_gives_beta_map():
    torch.manual_seed(1)
    agn = AdaptiveGroupNorm(channels=8, guidance_channels=4, hidden=6, groups=4)
    x = torch.full((1, 8, 8, 8), 0.7)  # constant: group norm output is 0
    g = torch.randn(1, 4, 8, 8)
    shared = torch.relu(agn.shared_conv(g))
    assert torch.allclose(agn(x, g), agn.beta_conv(shared), atol=1e-6)


def conv3x3_loop(x, weight, bias):
    # zero-padded 3x3 convolution in plain loops
    cout, cin, _, _ = weight.shape
    h, w = x.shape[1:]
    out = np.zeros((cout, h, w))
    for co in range(cout):
        for y in range(h):
            for xx in range(w):
                acc = bias[co]
                for ci in range(cin):
                    for dy in (-1, 0, 1):
                        for dx in (-1, 0, 1):
                            yy, xq = y + dy, xx + dx
                            if 0 <= yy < h and 0 <= xq < w:
                                acc += weight[co, ci, dy + 1, dx + 1] * x[ci, yy, xq]
                out[co, y, xx] = acc
    return out


def test_modulation_matches_scalar_loop_oracle():
    torch.manual_seed(2)
    channels, guid, hidden, groups = 8, 4, 6, 4
    agn = AdaptiveGroupNorm(channels, guid, hidden, groups).double()
    x = torch.randn(1, channels, 8, 8, dtype=torch.float64)
    g = torch.randn(1, guid, 8, 8, dtype=torch.float64)  # same size: Down is identity
    got = agn(x, g)[0].detach().numpy()

    xn = x[0].numpy()
    gn = g[0].numpy()
    per_group = channels // groups
    normed = np.zeros_like(xn)
    for grp in range(groups):
        sl = xn[grp * per_group:(grp + 1) * per_group]
        mu = sl.mean()
        var = sl.var()
        normed[grp * per_group:(grp + 1) * per_group] = (sl - mu) / math.sqrt(var + 1e-5)
    shared = np.maximum(
        conv3x3_loop(gn, agn.shared_conv.weight.detach().numpy(),
                     agn.shared_conv.bias.detach().numpy()), 0.0
    )
    gamma = conv3x3_loop(shared, agn.gamma_conv.weight.detach().numpy(),
                         agn.gamma_conv.bias.detach().numpy())
    beta = conv3x3_loop(shared, agn.beta_conv.weight.detach().numpy(),
                        agn.beta_conv.bias.detach().numpy())
    ref = normed * (1.0 + gamma) + beta
    assert np.max(np.abs(got - ref)) < 1e-6


def test_modulation_channel_mismatch_rejected():
    agn = AdaptiveGroupNorm(8, 4, 6, 4)
    with pytest.raises(ConfigError):
        agn(torch.randn(1, 16, 8, 8), torch.randn(1, 4, 8, 8))


# -- encoder -------------------------------------------------------------------


@pytest.fixture(scope="module")
def default_model():
    torch.manual_seed(0)
    return GuidedUNet(ModelConfig())


def test_encoder_pyramid_shape_ladder(default_model):
    m = default_model
    t_emb = torch.zeros(1, m.cfg.time_embed_dim)
    _, skips = m.encoder_forward(torch.randn(1, 4, 128, 128), t_emb)
    dims = [tuple(s.shape[-2:]) for s in skips]
    chans = [s.shape[1] for s in skips]
    assert dims == [(128, 128), (64, 64), (32, 32), (16, 16), (8, 8), (4, 4)]
    assert chans == [32, 32, 64, 64, 128, 128]


def test_encoder_zero_propagation():
    torch.manual_seed(3)
    cfg = tiny_model_config(levels=2, base=8)
    m = GuidedUNet(cfg)
    with torch.no_grad():
        for mod in m.modules():
            if hasattr(mod, "bias") and mod.bias is not None:
                mod.bias.zero_()
    x = torch.zeros(1, 4, 16, 16)
    t_emb = torch.zeros(1, cfg.time_embed_dim)
    h, skips = m.encoder_forward(x, t_emb)
    assert torch.all(h == 0)
    assert all(torch.all(s == 0) for s in skips)


def test_encoder_rejects_indivisible_dims():
    m = GuidedUNet(tiny_model_config(levels=3, base=8))
    t_emb = torch.zeros(1, m.cfg.time_embed_dim)
    with pytest.raises(ConfigError):
        m.encoder_forward(torch.randn(1, 4, 18, 18), t_emb)


def test_encoder_input_gradient_matches_finite_differences():
    torch.manual_seed(4)
    cfg = tiny_model_config(levels=2, base=8)
    m = GuidedUNet(cfg).double()
    readout = torch.randn(1, 16, 8, 8, dtype=torch.float64)

    def scalar(x):
        h, _ = m.encoder_forward(x, torch.zeros(1, cfg.time_embed_dim, dtype=torch.float64))
        return (h * readout).sum()

    x = torch.randn(1, 4, 16, 16, dtype=torch.float64, requires_grad=True)
    scalar(x).backward()
    grad = x.grad.detach().numpy().ravel()
    flat = x.detach().numpy().ravel()
    rng = np.random.default_rng(0)
    h_step = 1e-6
    for i in rng.choice(flat.size, size=25, replace=False):
        hi = flat.copy(); hi[i] += h_step
        lo = flat.copy(); lo[i] -= h_step
        fd = (
            scalar(torch.from_numpy(hi.reshape(1, 4, 16, 16))).item()
            - scalar(torch.from_numpy(lo.reshape(1, 4, 16, 16))).item()
        ) / (2 * h_step)
        denom = max(abs(fd), abs(grad[i]), 1e-8)
        assert abs(fd - grad[i]) / denom < 1e-3


# -- attention and bottleneck --------------------------------------------------


def test_attention_zero_value_projection_is_identity():
    torch.manual_seed(5)
    attn = AttentionBlock(8, 4)
    with torch.no_grad():
        attn.v.weight.zero_()
        attn.v.bias.zero_()
        attn.proj_out.bias.zero_()
    x = torch.randn(2, 8, 4, 4)
    assert torch.allclose(attn(x), x, atol=1e-7)


def test_attention_weights_match_hand_softmax_two_tokens():
    torch.manual_seed(6)
    attn = AttentionBlock(4, 2).double()
    x = torch.randn(1, 4, 1, 2, dtype=torch.float64)  # two spatial positions
    with torch.no_grad():
        hn = attn.norm(x)
        q = attn.q(hn).reshape(4, 2).T.numpy()
        k = attn.k(hn).reshape(4, 2).T.numpy()
        logits = q @ k.T / math.sqrt(4)
        expected = np.exp(logits)
        expected /= expected.sum(axis=1, keepdims=True)
        got = attn.attention_weights(x)[0].numpy()
    assert np.allclose(got, expected, atol=1e-10)


def test_bottleneck_preserves_shape():
    torch.manual_seed(7)
    cfg = tiny_model_config(levels=2, base=8)
    m = GuidedUNet(cfg)
    h = torch.randn(1, 16, 4, 4)
    g = torch.randn(1, cfg.guidance.n_features, 8, 8)
    t_emb = torch.zeros(1, cfg.time_embed_dim)
    assert m.bottleneck_forward(h, g, t_emb).shape == h.shape


# -- full model ----------------------------------------------------------------


def test_model_output_shape_and_tanh_bound():
    torch.manual_seed(8)
    m = GuidedUNet(tiny_model_config(levels=2, base=8))
    x = torch.randn(2, 4, 16, 16)
    rgb = torch.randn(2, 3, 32, 32)
    out = m(x, rgb, 17)
    assert out.shape == x.shape
    assert out.abs().max() < 1.0


def test_model_no_tanh_ablation_unbounded():
    torch.manual_seed(9)
    cfg = tiny_model_config(levels=2, base=8, output_activation="none")
    m = GuidedUNet(cfg)
    with torch.no_grad():
        m.head.bias.fill_(5.0)
    out = m(torch.randn(1, 4, 16, 16), torch.randn(1, 3, 32, 32), 3)
    assert out.abs().max() > 1.0


def test_model_deterministic_and_batch_equivariant():
    torch.manual_seed(10)
    m = GuidedUNet(tiny_model_config(levels=2, base=8)).double()
    x = torch.randn(2, 4, 16, 16, dtype=torch.float64)
    rgb = torch.randn(2, 3, 32, 32, dtype=torch.float64)
    a = m(x, rgb, 5)
    b = m(x, rgb, 5)
    assert torch.equal(a, b)
    single0 = m(x[:1], rgb[:1], 5)
    single1 = m(x[1:], rgb[1:], 5)
    assert torch.allclose(a, torch.cat([single0, single1]), atol=1e-6)


def test_model_concat_rgb_mode():
    torch.manual_seed(11)
    cfg = tiny_model_config(levels=2, base=8, conditioning="concat_rgb")
    m = GuidedUNet(cfg)
    assert not hasattr(m, "guidance_net")
    out = m(torch.randn(1, 4, 16, 16), torch.randn(1, 3, 32, 32), 9)
    assert out.shape == (1, 4, 16, 16)


def test_model_timestep_sensitivity():
    torch.manual_seed(12)
    m = GuidedUNet(tiny_model_config(levels=2, base=8))
    x = torch.randn(1, 4, 16, 16)
    rgb = torch.randn(1, 3, 32, 32)
    diff = (m(x, rgb, 1) - m(x, rgb, 1000)).abs().max()
    assert diff.item() > 0


def test_network_wide_modulation_identity():
    # zeroing every gamma/beta conv makes guided blocks equal their unguided
    # counterparts (plain group norm in place of the adaptive one)
    torch.manual_seed(13)
    m = GuidedUNet(tiny_model_config(levels=2, base=8))
    zero_modulation(m)
    x = torch.randn(1, 4, 16, 16)
    rgb = torch.randn(1, 3, 32, 32)
    guided_out = m(x, rgb, 7)

    original = AdaptiveGroupNorm.forward
    AdaptiveGroupNorm.forward = lambda self, h, guidance: self.norm(h)
    try:
        plain_out = m(x, rgb, 7)
    finally:
        AdaptiveGroupNorm.forward = original
    assert torch.allclose(guided_out, plain_out, atol=1e-6)


def test_timestep_embedding_deterministic_finite():
    emb = TimestepEmbedding(16, 64)
    t = torch.tensor([1.0, 500.0, 1000.0])
    out = emb(t)
    assert out.shape == (3, 64)
    assert torch.isfinite(out).all()
    assert torch.equal(out, emb(t))


def test_resblock_time_affine_applied_after_second_norm():
    torch.manual_seed(14)
    block = ResBlock(8, 8, time_dim=16, groups=4)
    x = torch.randn(1, 8, 6, 6)
    t_emb = torch.randn(1, 16)
    with torch.no_grad():
        scale, shift = block.time_proj(t_emb)[:, :, None, None].chunk(2, dim=1)
        h = block.norm1(torch.nn.functional.silu(block.conv1(x)))
        h = block.norm2(torch.nn.functional.silu(block.conv2(h)))
        expected = h * (1 + scale) + shift + x
    assert torch.allclose(block(x, t_emb), expected, atol=1e-6)


def expected_parameter_count(cfg: ModelConfig) -> int:
    ch = list(cfg.channels)
    td = cfg.time_embed_dim
    gc = cfg.guidance.n_features
    hidden = cfg.guidance_hidden
    nres = cfg.n_resblocks_per_level
    levels = cfg.levels

    def conv(cin, cout, k=3):
        return cin * cout * k * k + cout

    def resblock(cin, cout):
        n = conv(cin, cout) + conv(cout, cout) + (td * 2 * cout + 2 * cout) + 2 * (2 * cout)
        if cin != cout:
            n += conv(cin, cout, k=1)
        return n

    def guided_block(cin, cout):
        agn = conv(gc, hidden) + 2 * conv(hidden, cout)
        n = conv(cin, cout) + conv(cout, cout) + (td * cout + cout) + 2 * agn
        if cin != cout:
            n += conv(cin, cout, k=1)
        return n

    def attention(c):
        return 2 * c + 4 * conv(c, c, k=1)

    total = conv(4, ch[0])  # stem
    total += cfg.base_features * td + td + td * td + td  # time MLP
    total += conv(3, gc) + cfg.guidance.n_resblocks * 2 * conv(gc, gc)  # guidance
    for i in range(levels):
        total += nres * resblock(ch[i], ch[i])
        if i in cfg.attention_levels:
            total += nres * attention(ch[i])
        if i < levels - 1:
            total += conv(ch[i], ch[i + 1])  # downsample
    total += 2 * guided_block(ch[-1], ch[-1]) + attention(ch[-1])  # bottleneck
    for i in range(levels):
        total += guided_block(2 * ch[i], ch[i]) + (nres - 1) * guided_block(ch[i], ch[i])
        if i in cfg.attention_levels:
            total += nres * attention(ch[i])
        if i > 0:
            total += conv(ch[i], ch[i - 1])  # upsample conv
    total += conv(ch[0], 4)  # head
    return total


def test_default_parameter_count_closed_form(default_model):
    assert default_model.parameter_count() == expected_parameter_count(default_model.cfg)


def test_tiny_parameter_count_closed_form():
    cfg = tiny_model_config(levels=3, base=16)
    assert GuidedUNet(cfg).parameter_count() == expected_parameter_count(cfg)


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(attention_levels=(9,))
    with pytest.raises(ConfigError):
        ModelConfig(norm_groups=7)
    with pytest.raises(ConfigError):
        ModelConfig(output_activation="sigmoid")
    with pytest.raises(ConfigError):
        ModelConfig(prediction_target="velocity")


def test_golden_forward_regression():
    import pathlib

    golden_path = pathlib.Path(__file__).parent / "data" / "golden_forward.npz"
    if not golden_path.exists():
        pytest.skip("golden file not generated yet (scripts/make_golden.py)")
    with np.load(golden_path) as archive:
        x = torch.from_numpy(archive["x"])
        rgb = torch.from_numpy(archive["rgb"])
        t = int(archive["t"])
        expected = archive["expected"]
        params = {k[6:]: torch.from_numpy(archive[k]) for k in archive.files
                  if k.startswith("param/")}
    m = GuidedUNet(tiny_model_config(levels=2, base=8))
    m.load_state_dict(params)
    with torch.no_grad():
        out = m(x, rgb, t).numpy()
    assert np.max(np.abs(out - expected)) < 1e-6


def test_bottleneck_composition_guided_attention_guided():
    from rgb2raw.unet import GuidedResBlock

    m = GuidedUNet(tiny_model_config(levels=2, base=8))
    assert isinstance(m.mid_block1, GuidedResBlock)
    assert isinstance(m.mid_attn, AttentionBlock)
    assert isinstance(m.mid_block2, GuidedResBlock)
