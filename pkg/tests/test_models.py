import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sliceinterp import autodiff as ad
from sliceinterp.autodiff import Tensor, gradcheck, precision
from sliceinterp.models import (
    ModelConfig,
    build_ddpm_unet,
    build_discriminator,
    build_edsr,
    build_generator_improved,
    build_model,
    build_unet,
    desk_config,
    paper_config,
    score_map_extent,
    sinusoidal_time_embedding,
)
from sliceinterp.nn import Conv2d, Module, count_parameters


def conv_params(cin, cout, k):
    return cin * cout * k * k + cout


def test_edsr_count():
    assert count_parameters(build_edsr(paper_config("edsr"))) == 297_217


def test_edsr_count_from_layer_formula():
    c = 64
    expected = conv_params(2, c, 3) + 8 * conv_params(c, c, 3) + conv_params(c, 1, 3)
    assert expected == 297_217


def test_unet_count_and_subtotals():
    m = build_unet(paper_config("unet"))
    assert count_parameters(m) == 1_862_273
    subtotals = [count_parameters(getattr(m, name)) for name in ("encoder", "bottleneck", "decoder", "final")]
    assert subtotals == [259_584, 885_248, 717_376, 65]


def test_gan_improved_count_in_range_and_golden():
    n = count_parameters(build_generator_improved(paper_config("gan_improved")))
    assert 550_000 <= n <= 700_000
    assert n == 634_770


def test_discriminator_counts():
    basic = count_parameters(build_discriminator("basic"))
    assert basic == conv_params(1, 64, 4) + conv_params(64, 128, 4) + conv_params(128, 256, 4) + conv_params(256, 1, 4)
    assert basic == 660_929
    assert count_parameters(build_discriminator("improved")) == 2_764_481


def test_ddpm_paper_count_golden():
    assert count_parameters(build_ddpm_unet(paper_config("ddpm_unet"))) == 20_409_922


def test_single_1x1_conv_has_two_params():
    class One(Module):
        def __init__(self):
            super().__init__()
            self.conv = Conv2d(1, 1, 1, np.random.default_rng(0))

    assert count_parameters(One()) == 2


@pytest.mark.parametrize("arch", ["edsr", "unet", "gan_basic", "gan_improved"])
def test_forward_shape_law(arch):
    m = build_model(desk_config(arch))
    with ad.no_grad():
        assert m(Tensor(np.zeros((1, 2, 16, 16)))).shape == (1, 1, 16, 16)


def test_edsr_paper_shape():
    with ad.no_grad():
        assert build_edsr(paper_config("edsr"))(Tensor(np.zeros((1, 2, 64, 64)))).shape == (1, 1, 64, 64)


@pytest.mark.slow
def test_unet_paper_shape_256():
    with ad.no_grad():
        assert build_unet(paper_config("unet"))(Tensor(np.zeros((1, 2, 256, 256)))).shape == (1, 1, 256, 256)


def test_ddpm_forward_shape():
    m = build_ddpm_unet(desk_config("ddpm_unet"))
    with ad.no_grad():
        assert m(Tensor(np.zeros((1, 3, 64, 64))), 5).shape == (1, 1, 64, 64)


def test_unet_indivisible_extent():
    with pytest.raises(ValueError):
        build_unet(desk_config("unet"))(Tensor(np.zeros((1, 2, 18, 18))))


def test_discriminator_score_map():
    d = build_discriminator("basic", base_channels=4)
    with ad.no_grad():
        out = d(Tensor(np.zeros((2, 1, 64, 64))))
    assert out.shape == (2, 1, score_map_extent(64), score_map_extent(64))
    assert score_map_extent(256) == 31


def test_score_extent_formula_matches_forward():
    for variant in ("basic", "improved"):
        d = build_discriminator(variant, base_channels=2)
        with ad.no_grad():
            out = d(Tensor(np.zeros((1, 1, 48, 48))))
        assert out.shape[2] == score_map_extent(48, variant)


def test_edsr_zero_blocks_reduce_to_conv_chain():
    cfg = dataclasses.replace(desk_config("edsr"), base_channels=4, n_res_blocks=3)
    m = build_edsr(cfg, seed=1)
    for block in m.blocks:
        block.conv1.weight.data[:] = 0
        block.conv1.bias.data[:] = 0
    x = Tensor(np.random.default_rng(0).random((1, 2, 8, 8)))
    with ad.no_grad():
        e = m.entry(x)
        expected = m.exit(e + e).data
        np.testing.assert_allclose(m(x).data, expected, rtol=1e-6)


def test_improved_zero_gate_and_blocks_reduce_to_entry_pre_exit_exit():
    cfg = dataclasses.replace(desk_config("gan_improved"), base_channels=8, n_res_blocks=2)
    m = build_generator_improved(cfg, seed=2)
    for block in m.blocks:
        block.conv1.weight.data[:] = 0
        block.conv1.bias.data[:] = 0
    assert m.attention.gate.data.item() == 0.0
    x = Tensor(np.random.default_rng(0).random((1, 2, 8, 8)))
    with ad.no_grad():
        e = m.entry(x)
        expected = m.exit(m.pre_exit(e) + e).data
        np.testing.assert_allclose(m(x).data, expected, rtol=1e-6)


def test_time_embedding_at_zero():
    emb = sinusoidal_time_embedding(0, 256)
    assert emb.shape == (1, 256)
    np.testing.assert_array_equal(emb[0, :128], 0.0)
    np.testing.assert_array_equal(emb[0, 128:], 1.0)
    with pytest.raises(ValueError):
        sinusoidal_time_embedding(1, 7)


def test_time_embedding_distinguishes_steps():
    emb = sinusoidal_time_embedding(np.arange(1, 101), 64)
    assert len({row.tobytes() for row in emb}) == 100


def test_model_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(arch="transformer")
    with pytest.raises(ValueError):
        ModelConfig(base_channels=0)


def test_same_seed_same_weights():
    a, b = build_unet(desk_config("unet"), 4), build_unet(desk_config("unet"), 4)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and pa.data.tobytes() == pb.data.tobytes()


@settings(max_examples=10, deadline=None)
@given(st.sampled_from([8, 16, 24]), st.integers(1, 2))
def test_forward_is_bit_identical(size, batch):
    m = build_unet(dataclasses.replace(desk_config("unet"), base_channels=2), 0)
    x = np.random.default_rng(size).random((batch, 2, size, size))
    with ad.no_grad():
        assert m(Tensor(x)).data.tobytes() == m(Tensor(x)).data.tobytes()


# -- whole-architecture gradient checks ----------------------------------------------------


def tiny(arch):
    cfg = dataclasses.replace(desk_config(arch), base_channels=4, n_res_blocks=2, disc_channels=2,
                              attention_reduction=2, time_embed_dim=8)
    return cfg


def _arch_case(arch, seed):
    rng = np.random.default_rng(seed)
    if arch == "disc_basic" or arch == "disc_improved":
        m = build_discriminator(arch.split("_")[1], seed=seed, base_channels=2)
        x = Tensor(rng.random((2, 1, 32, 32)), requires_grad=True)
        call = lambda: m(x)
    elif arch == "ddpm_unet":
        m = build_ddpm_unet(tiny(arch), seed)
        x = Tensor(rng.random((1, 3, 8, 8)), requires_grad=True)
        call = lambda: m(x, 7)
    else:
        m = build_model(tiny(arch), seed)
        x = Tensor(rng.random((1, 2, 8, 8)), requires_grad=True)
        call = lambda: m(x)
    m.astype(np.float64)
    for name, mod in m.named_modules():
        if hasattr(mod, "gate"):
            mod.gate.data[:] = 0.7
    with ad.no_grad():
        probe = Tensor(rng.standard_normal(call().shape))
    return m, x, lambda: (call() * probe).sum(), rng


ARCH_CASES = ["edsr", "unet", "gan_improved", "ddpm_unet", "disc_basic", "disc_improved"]


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("arch", ARCH_CASES)
def test_architecture_gradcheck(arch, seed):
    with precision(np.float64):
        m, x, loss, rng = _arch_case(arch, seed)
        err = gradcheck(loss, [x] + m.parameters(), h=1e-4, n_samples=24, rng=rng)
    assert err < 1e-3
