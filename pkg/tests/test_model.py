import re

import numpy as np
import pytest

from interpomae import autodiff as ad
from interpomae.autodiff import ParamStore
from interpomae.model import (
    LatentGrid,
    ModelBundle,
    ModelConfig,
    ModelError,
    decode,
    encode,
    gru_cell,
    init_params,
    interpolate,
    loss_auto,
    loss_embed,
    loss_recon,
    param_shapes,
)


def brute_patch_loss(x, y):
    """Double-loop reference: batch mean of summed per-patch Euclidean norms."""
    total = 0.0
    for b in range(x.shape[0]):
        for t in range(x.shape[1]):
            acc = 0.0
            for v, w in zip(x[b, t].ravel(), y[b, t].ravel()):
                acc += (v - w) ** 2
            total += (acc + 1e-12) ** 0.5
    return total / x.shape[0]


def test_no_mask_token_parameters():
    cfg = ModelConfig(T=6, P=4, C=5, d=8, interp_hidden=32)
    bundle = init_params(cfg)
    interp = {k: v.shape for k, v in bundle.params.items() if k.startswith("interp.")}
    assert set(interp) == {f"interp.fc{i}.{p}" for i in range(3) for p in "Wb"}
    assert interp["interp.fc0.W"] == (cfg.T * (cfg.d + 1), 32)
    assert interp["interp.fc2.W"] == (32, cfg.T * cfg.d)
    for name in bundle.params:
        assert re.fullmatch(r"(enc|dec)\.(gru\d\.[WUb]_[zrh]|proj\.[Wb])|interp\.fc\d\.[Wb]", name), name
        assert "mask" not in name and "token" not in name


def test_init_deterministic_and_conventions():
    cfg = ModelConfig(T=6, P=4, C=5, seed=9)
    a, b = init_params(cfg), init_params(cfg)
    assert a.params.equals(b.params)
    for name, value in a.params.items():
        if value.ndim == 2:
            bound = np.sqrt(6.0 / sum(value.shape))
            assert np.abs(value).max() <= bound
        elif name.endswith(".b_z"):
            assert np.all(value == 1.0)
        else:
            assert np.all(value == 0.0)


def test_config_validation():
    with pytest.raises(ModelError):
        ModelConfig(T=6, P=4, C=5, d=30, enc_hidden=24)
    with pytest.raises(ModelError):
        ModelConfig(T=0, P=4, C=5)


def test_bundle_shape_check():
    bundle = init_params(ModelConfig(T=3, P=2, C=1, d=2, enc_hidden=4, dec_hidden=4))
    bad = ParamStore((k, v if k != "enc.proj.b" else np.zeros(3)) for k, v in bundle.params.items())
    with pytest.raises(ModelError, match="enc.proj.b"):
        ModelBundle(bundle.config, bad)


def test_encode_placement(small):
    rng = np.random.default_rng(0)
    x = rng.random((6, 4, 5))
    full = encode(small, x, range(6))
    assert np.all(full.visible == 1)
    one = encode(small, x[[3]], [3])
    nonzero = np.any(one.codes.value[0] != 0, axis=1)
    assert list(nonzero) == [False, False, False, True, False, False]
    part = encode(small, x[[0, 2, 5]], [0, 2, 5])
    assert list(np.any(part.codes.value[0] != 0, axis=1)) == [True, False, True, False, False, True]
    assert list(part.visible) == [1, 0, 1, 0, 0, 1]


def test_encode_errors(small):
    x = np.zeros((2, 4, 5))
    with pytest.raises(ModelError):
        encode(small, x, [3, 1])
    with pytest.raises(ModelError):
        encode(small, x, [0, 6])


def test_encode_deterministic(small):
    x = np.random.default_rng(1).random((6, 4, 5))
    a = encode(small, x, range(6)).codes.value
    b = encode(init_params(small.config), x, range(6)).codes.value
    assert a.tobytes() == b.tobytes()


def test_interpolate_contract(small):
    x = np.random.default_rng(2).random((4, 4, 5))
    grid = encode(small, x, [0, 1, 3, 5])
    out = interpolate(small, grid)
    assert out.codes.shape == (1, 6, 8)
    assert out.complete
    again = interpolate(small, grid)
    assert out.codes.value.tobytes() == again.codes.value.tobytes()


def test_interpolate_reads_indicator(small):
    rng = np.random.default_rng(3)
    for name, value in small.params.items():
        if name.startswith("interp."):
            small.params[name] = rng.normal(size=value.shape)
    codes = ad.constant(np.where(np.arange(6)[None, :, None] == 2, 0.0, rng.normal(size=(1, 6, 8))))
    vis = np.ones(6)
    vis[2] = 0.0
    a = interpolate(small, LatentGrid(codes, vis)).codes.value
    b = interpolate(small, LatentGrid(codes, np.ones(6))).codes.value
    assert np.abs(a - b).max() > 1e-6


def test_interpolate_needs_visible(small):
    with pytest.raises(ModelError, match="at least one visible code"):
        interpolate(small, LatentGrid(ad.constant(np.zeros((1, 6, 8))), np.zeros(6)))


def test_decode_contract(small):
    grid = LatentGrid(ad.constant(np.random.default_rng(4).normal(size=(2, 6, 8))), np.ones(6))
    out = decode(small, grid)
    assert out.shape == (2, 6, 4, 5)
    assert out.value.tobytes() == decode(small, grid).value.tobytes()
    with pytest.raises(ModelError):
        decode(small, LatentGrid(grid.codes, np.array([1, 1, 0, 1, 1, 1.0])))


def test_loss_auto_identity_and_scalar():
    x = np.random.default_rng(5).random((6, 4, 5))
    assert float(loss_auto(x, x).value) <= 6 * 1e-6
    assert abs(float(loss_auto(np.zeros((1, 1, 1)), np.full((1, 1, 1), 3.0)).value) - 3.0) < 1e-9


def test_loss_auto_matches_double_loop():
    rng = np.random.default_rng(6)
    x, y = rng.normal(size=(3, 6, 4, 5)), rng.normal(size=(3, 6, 4, 5))
    assert abs(float(loss_auto(x, y).value) - brute_patch_loss(x, y)) < 1e-12
    assert float(loss_recon(x, y).value) == float(loss_auto(x, y).value)
    assert float(loss_recon(x, y).value) >= 0


def test_loss_shape_mismatch():
    with pytest.raises(ad.ShapeError):
        loss_auto(np.zeros((6, 4, 5)), np.zeros((6, 4, 4)))


def test_loss_embed_values():
    assert abs(float(loss_embed(np.zeros((1, 2)), np.array([[3.0, 4.0]])).value) - 5.0) < 1e-9
    t = np.random.default_rng(7).normal(size=(2, 8))
    assert float(loss_embed(t, t).value) <= 2 * 1e-6
    with pytest.raises(ModelError, match="no masked patches"):
        loss_embed(np.zeros((0, 2)), np.zeros((0, 2)))


def test_loss_embed_stop_gradient():
    rng = np.random.default_rng(8)
    store = ParamStore([("teacher", rng.normal(size=(3, 2))), ("restored", rng.normal(size=(3, 2)))])
    f = lambda s: loss_embed(s.leaf("teacher"), s.leaf("restored"))
    grads = ad.backward(f(store), store)
    assert np.all(grads["teacher"] == 0.0)
    assert ad.grad_check(f, store, names=["restored"]) < 1e-6


def test_losses_permutation_invariant_over_batch():
    rng = np.random.default_rng(9)
    x, y = rng.normal(size=(5, 6, 4, 5)), rng.normal(size=(5, 6, 4, 5))
    perm = rng.permutation(5)
    assert abs(float(loss_auto(x, y).value) - float(loss_auto(x[perm], y[perm]).value)) < 1e-12
    t, r = rng.normal(size=(5, 2, 8)), rng.normal(size=(5, 2, 8))
    assert abs(float(loss_embed(t, r).value) - float(loss_embed(t[perm], r[perm]).value)) < 1e-12


def test_gru_cell_gradient():
    rng = np.random.default_rng(10)
    store = ParamStore()
    for g in "zrh":
        store.add(f"c.W_{g}", rng.normal(size=(3, 4)))
        store.add(f"c.U_{g}", rng.normal(size=(4, 4)))
        store.add(f"c.b_{g}", rng.normal(size=4))
    store.add("x", rng.normal(size=(2, 3)))
    store.add("h", rng.normal(size=(2, 4)) * 0.5)
    f = lambda s: ad.sum(ad.mul(gru_cell(s, "c", s.leaf("x"), s.leaf("h")), ad.constant(np.arange(8.0).reshape(2, 4))))
    assert ad.grad_check(f, store) < 1e-4


def test_gru_cell_matches_numpy_reference():
    rng = np.random.default_rng(12)
    store = ParamStore()
    for g in "zrh":
        store.add(f"c.W_{g}", rng.normal(size=(3, 4)))
        store.add(f"c.U_{g}", rng.normal(size=(4, 4)))
        store.add(f"c.b_{g}", rng.normal(size=4))
    x, h = rng.normal(size=(2, 3)), rng.normal(size=(2, 4))
    sig = lambda v: 1 / (1 + np.exp(-v))
    z = sig(x @ store["c.W_z"] + h @ store["c.U_z"] + store["c.b_z"])
    r = sig(x @ store["c.W_r"] + h @ store["c.U_r"] + store["c.b_r"])
    n = np.tanh(x @ store["c.W_h"] + (r * h) @ store["c.U_h"] + store["c.b_h"])
    ref = z * h + (1 - z) * n
    out = gru_cell(store, "c", ad.constant(x), ad.constant(h)).value
    np.testing.assert_allclose(out, ref, atol=1e-14)


def test_param_shapes_cover_config():
    cfg = ModelConfig(T=4, P=3, C=2, d=5, enc_layers=3, dec_layers=1, enc_hidden=7, dec_hidden=6, interp_layers=2, interp_hidden=9)
    shapes = param_shapes(cfg)
    assert shapes["enc.gru0.W_z"] == (6, 7)
    assert shapes["enc.gru2.U_h"] == (7, 7)
    assert "dec.gru1.W_z" not in shapes
    assert shapes["dec.proj.W"] == (6, 6)
    assert shapes["interp.fc0.W"] == (24, 9)
    assert shapes["interp.fc1.W"] == (9, 20)
    assert "interp.fc2.W" not in shapes
    # a single interpolator layer is one linear map from [codes, indicator] to the grid
    single = param_shapes(ModelConfig(T=4, P=3, C=2, d=5, interp_layers=1))
    assert [k for k in single if k.startswith("interp.")] == ["interp.fc0.W", "interp.fc0.b"]
    assert single["interp.fc0.W"] == (24, 20)
