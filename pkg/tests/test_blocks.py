import numpy as np
import pytest

from dimpleseg.autodiff import Tensor, directional_gradcheck, gradcheck, ops
from dimpleseg.errors import ConfigError
from dimpleseg.nn import (
    CBAM,
    BlockConfig,
    Bottleneck,
    ChannelAttention,
    ParamStore,
    ResidualDenseBlock,
    SEBlock,
    SpatialAttention,
)

from conftest import t64

TOL = 1e-4


def probe(out, seed=0):
    return ops.sum(ops.mul(out, np.random.default_rng(seed).standard_normal(out.shape)))


def trainable(store):
    return [t for _, t in store.trainable()]


def f64(store):
    store.astype(np.float64)
    return store


def test_block_config_validation():
    with pytest.raises(ConfigError):
        BlockConfig(8, 12, attn_ratio=8)
    with pytest.raises(ConfigError):
        BlockConfig(8, 8, spatial_kernel=4)
    with pytest.raises(ConfigError):
        BlockConfig(0, 8)


# -- channel attention --------------------------------------------------------------

def test_channel_attention_shape_and_range(rng):
    store = ParamStore()
    att = ChannelAttention(store, "ca", 16, 8, rng)
    scale = att(Tensor(rng.standard_normal((2, 16, 8, 8)).astype(np.float32)))
    assert scale.shape == (2, 16, 1, 1)
    assert np.all((scale.data > 0) & (scale.data < 1))


def test_channel_attention_zero_output_layer_gives_half(rng):
    store = ParamStore()
    att = ChannelAttention(store, "ca", 16, 8, rng)
    store.set_data("ca/fc2/weight", np.zeros((16, 2)))
    scale = att(Tensor(rng.standard_normal((2, 16, 4, 4)).astype(np.float32)))
    np.testing.assert_array_equal(scale.data, 0.5)


def test_channel_attention_ratio_must_divide(rng):
    with pytest.raises(ConfigError):
        ChannelAttention(ParamStore(), "ca", 12, 8, rng)


def test_channel_attention_gradcheck(rng):
    store = ParamStore()
    att = ChannelAttention(store, "ca", 8, 4, rng)
    f64(store)
    x = t64(rng.standard_normal((2, 8, 4, 4)))
    assert gradcheck(lambda: probe(att(x)), [x] + trainable(store)).max_rel_error <= TOL


# -- spatial attention --------------------------------------------------------------

def test_spatial_attention_shape_and_zero_conv(rng):
    store = ParamStore()
    att = SpatialAttention(store, "sa", 7, rng)
    x = Tensor(rng.standard_normal((2, 16, 8, 8)).astype(np.float32))
    assert att(x).shape == (2, 1, 8, 8)
    store.set_data("sa/conv/weight", np.zeros((1, 2, 7, 7)))
    np.testing.assert_array_equal(att(x).data, 0.5)


def test_spatial_attention_even_kernel(rng):
    with pytest.raises(ConfigError):
        SpatialAttention(ParamStore(), "sa", 4, rng)


def test_spatial_attention_gradcheck(rng):
    store = ParamStore()
    att = SpatialAttention(store, "sa", 3, rng)
    f64(store)
    x = t64(rng.standard_normal((1, 3, 5, 5)))
    assert gradcheck(lambda: probe(att(x)), [x] + trainable(store)).max_rel_error <= TOL


# -- CBAM ------------------------------------------------------------------------------

def test_cbam_forced_open_is_identity(rng):
    store = ParamStore()
    cbam = CBAM(store, "attn", 8, 4, 7, rng)
    cbam.set_force_open(True)
    x = rng.standard_normal((1, 8, 6, 6)).astype(np.float32)
    np.testing.assert_array_equal(cbam(Tensor(x)).data, x)


def test_cbam_shrinks_magnitudes(rng):
    store = ParamStore()
    cbam = CBAM(store, "attn", 8, 4, 7, rng)
    x = rng.standard_normal((2, 8, 6, 6)) * 5
    out = cbam(Tensor(x.astype(np.float32))).data
    assert out.shape == x.shape
    assert np.all(np.abs(out) <= np.abs(x.astype(np.float32)))


def test_cbam_is_sequential_not_parallel(rng):
    store = ParamStore()
    cbam = CBAM(store, "attn", 8, 4, 7, rng)
    f64(store)
    x = Tensor(rng.standard_normal((1, 8, 6, 6)))
    sequential = cbam(x).data
    # parallel variant: both gates computed from the same input
    parallel = (x.data * cbam.channel(x).data * cbam.spatial(x).data)
    assert not np.allclose(sequential, parallel)
    expected = x.data * cbam.channel(x).data
    expected = expected * cbam.spatial(Tensor(expected)).data
    np.testing.assert_allclose(sequential, expected, rtol=1e-12)


def test_cbam_gradcheck(rng):
    store = ParamStore()
    cbam = CBAM(store, "attn", 4, 2, 3, rng)
    f64(store)
    x = t64(rng.standard_normal((1, 4, 5, 5)))
    assert gradcheck(lambda: probe(cbam(x)), [x] + trainable(store)).max_rel_error <= TOL


# -- squeeze-and-excitation -------------------------------------------------------------

def test_se_zero_excitation_halves_input(rng):
    store = ParamStore()
    se = SEBlock(store, "se", 16, 4, rng)
    store.set_data("se/fc2/weight", np.zeros((16, 4)))
    x = rng.standard_normal((1, 16, 4, 4)).astype(np.float32)
    np.testing.assert_array_equal(se(Tensor(x)).data, 0.5 * x)


def test_se_keeps_constant_channels_constant(rng):
    store = ParamStore()
    se = SEBlock(store, "se", 8, 2, rng)
    x = np.broadcast_to(rng.standard_normal((1, 8, 1, 1)), (1, 8, 5, 5)).astype(np.float32)
    out = se(Tensor(x)).data
    assert np.all(out == out[:, :, :1, :1])


def test_se_divisibility(rng):
    with pytest.raises(ConfigError):
        SEBlock(ParamStore(), "se", 10, 4, rng)


def test_se_gradcheck(rng):
    store = ParamStore()
    se = SEBlock(store, "se", 8, 2, rng)
    f64(store)
    x = t64(rng.standard_normal((2, 8, 3, 3)))
    assert gradcheck(lambda: probe(se(x)), [x] + trainable(store)).max_rel_error <= TOL


# -- residual-dense block -----------------------------------------------------------------

def test_rdb_shape_contract(rng):
    store = ParamStore()
    block = ResidualDenseBlock(store, "rdb", BlockConfig(8, 16), rng)
    out = block(Tensor(rng.standard_normal((1, 8, 16, 16)).astype(np.float32)), training=True)
    assert out.shape == (1, 16, 16, 16)
    # dense bookkeeping: unit i sees Cin + i * growth channels
    assert store["rdb/unit0/conv/weight"].shape == (16, 8, 3, 3)
    assert store["rdb/unit1/conv/weight"].shape == (16, 24, 3, 3)
    assert store["rdb/fuse/weight"].shape == (16, 40, 1, 1)
    assert "rdb/shortcut/conv/weight" in store


def test_rdb_identity_shortcut_when_widths_match(rng):
    store = ParamStore()
    ResidualDenseBlock(store, "rdb", BlockConfig(8, 8), rng)
    assert not store.names("rdb/shortcut")


def test_rdb_structural_ablation(rng):
    """Gates forced open + identity shortcut: output is input + fused dense convs."""
    store = ParamStore()
    block = ResidualDenseBlock(store, "rdb", BlockConfig(4, 4, attn_ratio=2), rng)
    block.attn.set_force_open(True)
    x = Tensor(rng.standard_normal((1, 4, 6, 6)).astype(np.float32))
    out = block(x, training=True).data
    feats = [x]
    for unit in block.units:
        feats.append(unit(ops.concat_channels(*feats), True))
    plain = block.fuse(ops.concat_channels(*feats)).data
    np.testing.assert_allclose(out, x.data + plain, rtol=1e-6, atol=1e-6)


def test_rdb_projection_shortcut_ablation(rng):
    store = ParamStore()
    block = ResidualDenseBlock(store, "rdb", BlockConfig(4, 8, attn_ratio=2), rng)
    block.attn.set_force_open(True)
    x = Tensor(rng.standard_normal((1, 4, 6, 6)).astype(np.float32))
    out = block(x, training=True).data
    shortcut = block.shortcut(x, True).data
    branch = block.branch(x, True).data
    np.testing.assert_allclose(out, shortcut + branch, rtol=1e-6, atol=1e-6)


def test_rdb_gradcheck(rng):
    store = ParamStore()
    block = ResidualDenseBlock(store, "rdb", BlockConfig(4, 4, attn_ratio=2, spatial_kernel=3), rng)
    f64(store)
    x = t64(rng.standard_normal((1, 4, 8, 8)))
    res = gradcheck(lambda: probe(block(x, True)), [x] + trainable(store), max_probes=12)
    assert res.max_rel_error <= TOL


def test_rdb_projection_gradcheck(rng):
    store = ParamStore()
    block = ResidualDenseBlock(store, "rdb", BlockConfig(4, 6, attn_ratio=3, spatial_kernel=3), rng)
    f64(store)
    x = t64(rng.standard_normal((1, 4, 6, 6)))
    res = gradcheck(lambda: probe(block(x, True)), [x] + trainable(store), max_probes=12)
    assert res.max_rel_error <= TOL


def test_rdb_param_names_are_pure_function_of_config(rng):
    sigs = []
    for seed in (0, 1):
        store = ParamStore()
        ResidualDenseBlock(store, "rdb", BlockConfig(8, 16, dense_units=3), np.random.default_rng(seed))
        sigs.append(store.signature())
    assert sigs[0] == sigs[1]


# -- bottleneck -----------------------------------------------------------------------------

def test_bottleneck_shape_and_registry(rng):
    store = ParamStore()
    bottleneck = Bottleneck(store, "bottleneck", 512, rng)
    out = bottleneck(Tensor(rng.standard_normal((1, 512, 8, 8)).astype(np.float32)), training=True)
    assert out.shape == (1, 512, 8, 8)
    components = sorted({n.split("/")[1] for n in store.names("bottleneck/")})
    assert components == ["fuse", "rdb0", "rdb1", "rdb2", "se"]
    # dense wiring across blocks: block j consumes (j + 1) * width channels
    for j in range(3):
        assert store[f"bottleneck/rdb{j}/unit0/conv/weight"].shape[1] == (j + 1) * 512
    assert store["bottleneck/fuse/weight"].shape == (512, 4 * 512, 1, 1)


def test_bottleneck_thin_gradcheck(rng):
    store = ParamStore()
    bottleneck = Bottleneck(store, "bottleneck", 8, rng, attn_ratio=4, se_ratio=4, spatial_kernel=3)
    f64(store)
    x = t64(rng.standard_normal((1, 8, 4, 4)))
    params = trainable(store)
    assert directional_gradcheck(lambda: probe(bottleneck(x, True)), [x] + params, n_directions=6) <= TOL
    res = gradcheck(lambda: probe(bottleneck(x, True)), [x] + params[::7], max_probes=4)
    assert res.max_rel_error <= TOL


def test_attention_scales_strictly_inside_unit_interval(rng):
    # float32 sigmoid rounds to exactly 0/1 once |logit| exceeds ~17, so check in float64
    store = ParamStore()
    cbam = CBAM(store, "attn", 8, 2, 7, rng)
    f64(store)
    for scale in (1e-3, 1.0, 3.0):
        x = Tensor(rng.standard_normal((2, 8, 6, 6)) * scale)
        ch = cbam.channel(x).data
        sp = cbam.spatial(x).data
        assert np.all((ch > 0) & (ch < 1)) and np.all((sp > 0) & (sp < 1))
