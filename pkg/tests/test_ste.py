"""Encoder contracts: tokenization, residual identity, equivariance, pooling."""

import numpy as np
import pytest

from dip.gradcheck import finite_diff_check
from dip.layers import zero_output_projections
from dip.params import ParamStore
from dip.ste import STEConfig, directional_pool, extract_patches, init_ste_params, ste_forward, tokenize
from dip.tensor import NumericsError, Tensor

DESK = STEConfig()


def make_params(cfg, seed=0):
    store = ParamStore()
    init_ste_params(store, cfg, np.random.default_rng(seed))
    return store


def test_token_counts():
    assert STEConfig(M=224, P=16).tokens_per_frame == 197
    assert STEConfig(M=224, P=16).L == 14
    assert DESK.L == 4 and DESK.tokens_per_frame == 17


def test_indivisible_patch_size_rejected():
    with pytest.raises(NumericsError):
        STEConfig(M=30, P=8).validate()


def test_patch_extraction_order():
    cfg = STEConfig(T=1, M=4, P=2)
    frames = np.arange(4 * 4 * 3, dtype=float).reshape(1, 4, 4, 3)
    patches = extract_patches(frames, 2)
    # patch (i=0, j=1) holds frame[0:2, 2:4, :] flattened row-major
    np.testing.assert_array_equal(patches[0, 1], frames[0, 0:2, 2:4, :].reshape(-1))
    assert patches.shape == (1, 4, 12)


def test_zero_clip_zero_projection_gives_embeddings_only():
    cfg = STEConfig(T=3, M=16, P=8, E=8, heads=2, units=1)
    p = make_params(cfg)
    for name in ("embed.patch.w", "embed.patch.b", "embed.cls"):
        p[name].data = np.zeros_like(p[name].data)
    x = tokenize(np.zeros((3, 16, 16, 3)), p, cfg)
    expected = p["embed.spatial"].data[None, :, :] + p["embed.temporal"].data[:, None, :]
    np.testing.assert_array_equal(x.data, expected)


def test_encoder_shape_preserved_and_class_slot():
    cfg = STEConfig(T=2, M=16, P=8, E=8, heads=2, units=2)
    p = make_params(cfg)
    x = tokenize(np.random.default_rng(0).random((2, 16, 16, 3)), p, cfg)
    z = ste_forward(x, cfg, p)
    assert z.shape == x.shape


def test_zeroed_projections_make_encoder_identity():
    cfg = STEConfig(T=3, M=16, P=8, E=8, heads=2, units=2)
    p = make_params(cfg, seed=3)
    zero_output_projections(p)
    x = Tensor(np.random.default_rng(1).standard_normal((3, 5, 8)))
    z = ste_forward(x, cfg, p)
    np.testing.assert_array_equal(z.data, x.data)


def test_single_frame_clip_supported():
    cfg = STEConfig(T=1, M=16, P=8, E=8, heads=2, units=1)
    p = make_params(cfg)
    x = tokenize(np.random.default_rng(2).random((1, 16, 16, 3)), p, cfg)
    z = ste_forward(x, cfg, p)
    assert z.shape == (1, 5, 8)


def test_class_tokens_bypass_temporal_layers():
    # a unit with only temporal layers must leave slot 0 untouched
    cfg = STEConfig(T=4, M=16, P=8, E=8, heads=2, units=2, spatial_layers_per_unit=0)
    p = make_params(cfg, seed=8)
    x = Tensor(np.random.default_rng(9).standard_normal((4, 5, 8)))
    z = ste_forward(x, cfg, p)
    np.testing.assert_array_equal(z.data[:, 0, :], x.data[:, 0, :])
    assert not np.allclose(z.data[:, 1:, :], x.data[:, 1:, :])


def test_frame_permutation_equivariance_without_temporal_embedding():
    cfg = STEConfig(T=4, M=16, P=8, E=8, heads=2, units=2)
    p = make_params(cfg, seed=5)
    p["embed.temporal"].data = np.zeros_like(p["embed.temporal"].data)
    clip = np.random.default_rng(7).random((4, 16, 16, 3))
    perm = [2, 0, 3, 1]
    z = ste_forward(tokenize(clip, p, cfg), cfg, p)
    z_perm = ste_forward(tokenize(clip[perm], p, cfg), cfg, p)
    np.testing.assert_allclose(z_perm.data, z.data[perm], atol=1e-12)


# -------------------------------------------------------------------- pooling


def grid_tensor(t, l, e, fill):
    """Token tensor (t, l*l+1, e) built from fill(t_idx, i, j) for content tokens."""
    data = np.zeros((t, l * l + 1, e))
    for ti in range(t):
        for i in range(l):
            for j in range(l):
                data[ti, 1 + i * l + j] = fill(ti, i, j)
    return data


@pytest.mark.parametrize("pooling", ["mean", "max"])
def test_pool_constant_field(pooling):
    cfg = STEConfig(T=2, M=16, P=8, E=3, heads=1, pooling=pooling)
    v = np.array([0.3, -1.2, 2.0])
    data = grid_tensor(2, 2, 3, lambda t, i, j: v)
    z_h, z_v = directional_pool(Tensor(data), cfg)
    for seq in (z_h, z_v):
        for slot in range(1, 3):
            np.testing.assert_allclose(seq.tokens.data[slot], v, atol=1e-15)


def test_pool_row_index_closed_form():
    # tokens (t,i,j) = i broadcast: horizontal slot i pools to i, vertical to mean_i(i)
    cfg = STEConfig(T=3, M=32, P=8, E=2, heads=1, pooling="mean")
    l = cfg.L
    data = grid_tensor(3, l, 2, lambda t, i, j: np.full(2, float(i)))
    z_h, z_v = directional_pool(Tensor(data), cfg)
    for i in range(l):
        np.testing.assert_allclose(z_h.tokens.data[1 + i], float(i), atol=1e-15)
    expected_v = np.mean(np.arange(l))
    for j in range(l):
        np.testing.assert_allclose(z_v.tokens.data[1 + j], expected_v, atol=1e-15)


def test_pool_max_spike_dominates_its_row_and_column():
    cfg = STEConfig(T=2, M=16, P=8, E=1, heads=1, pooling="max")
    l = cfg.L
    data = grid_tensor(2, l, 1, lambda t, i, j: np.array([0.1 * (t + i + j)]))
    data[1, 1 + 1 * l + 0] = 50.0  # spike at (t=1, i=1, j=0)
    z_h, z_v = directional_pool(Tensor(data), cfg)
    assert z_h.tokens.data[2, 0] == 50.0
    assert z_v.tokens.data[1, 0] == 50.0


def test_pool_class_slot_is_temporal_pool_of_class_tokens():
    cfg = STEConfig(T=3, M=16, P=8, E=4, heads=1, pooling="mean")
    data = np.random.default_rng(0).standard_normal((3, 5, 4))
    z_h, z_v = directional_pool(Tensor(data), cfg)
    expected = data[:, 0, :].mean(axis=0)
    np.testing.assert_allclose(z_h.tokens.data[0], expected, atol=1e-15)
    np.testing.assert_array_equal(z_h.tokens.data[0], z_v.tokens.data[0])


def test_mean_pool_is_linear():
    cfg = STEConfig(T=2, M=16, P=8, E=3, heads=1, pooling="mean")
    rng = np.random.default_rng(4)
    x, y = rng.standard_normal((2, 2, 5, 3))
    a, b = 0.7, -1.3
    zh_combo, zv_combo = directional_pool(Tensor(a * x + b * y), cfg)
    zh_x, zv_x = directional_pool(Tensor(x), cfg)
    zh_y, zv_y = directional_pool(Tensor(y), cfg)
    np.testing.assert_allclose(
        zh_combo.tokens.data, a * zh_x.tokens.data + b * zh_y.tokens.data, atol=1e-12
    )
    np.testing.assert_allclose(
        zv_combo.tokens.data, a * zv_x.tokens.data + b * zv_y.tokens.data, atol=1e-12
    )


def test_encoder_gradients_match_finite_differences():
    cfg = STEConfig(T=2, M=16, P=8, E=8, heads=2, units=1, spatial_layers_per_unit=1)
    store = make_params(cfg, seed=11)
    clip = np.random.default_rng(12).random((2, 16, 16, 3))

    def loss():
        z = ste_forward(tokenize(clip, store, cfg), cfg, store)
        z_h, z_v = directional_pool(z, cfg)
        return (z_h.tokens * z_h.tokens).sum() + (z_v.tokens * z_v.tokens).mean()

    err = finite_diff_check(loss, store, max_per_param=6, seed=1)
    assert err <= 1e-4, f"encoder gradient mismatch: {err}"
