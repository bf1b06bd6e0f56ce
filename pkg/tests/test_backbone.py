import numpy as np
import pytest

from amttrack.backbone import (
    LayerSchedule,
    ModelWeights,
    build_bank,
    cross_modal_retrieval,
    forward,
    random_weights,
    self_attention,
    transformer_layer,
)
from amttrack.config import TrackerConfig
from amttrack.exceptions import FormatError, ShapeError
from amttrack.weights_io import write_ntw

SMALL = dict(embed_dim=16, num_heads=2, num_layers=4, hopfield_layers=[2, 3],
             preceding_layers={2: [0, 1], 3: [1, 2]}, template_size=32, search_size=64)


def softmax(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def test_self_attention_matches_textbook_heads(rng):
    cfg = TrackerConfig(**SMALL)
    lw = random_weights(cfg, seed=3, scale=0.3).layers[0]
    h = rng.standard_normal((7, 16))
    qkv = h @ lw.qkv_weight + lw.qkv_bias
    q, k, v = qkv[:, :16], qkv[:, 16:32], qkv[:, 32:]
    heads = []
    for i in range(2):
        s = slice(8 * i, 8 * (i + 1))
        heads.append(softmax(q[:, s] @ k[:, s].T / np.sqrt(8)) @ v[:, s])
    want = np.hstack(heads) @ lw.proj_weight + lw.proj_bias
    np.testing.assert_allclose(self_attention(h, lw), want, rtol=1e-10, atol=1e-12)


def test_transformer_layer_identity_and_width_check(rng):
    x = rng.standard_normal((5, 16))
    np.testing.assert_array_equal(transformer_layer(x), x)
    lw = random_weights(TrackerConfig(**SMALL)).layers[0]
    with pytest.raises(ShapeError):
        transformer_layer(np.ones((5, 8)), lw)


def test_schedule_validation():
    s = LayerSchedule()
    assert s.hopfield_layers == (5, 8, 11) and s.cached_layers == [1, 3, 4, 6, 7, 9]
    with pytest.raises(ShapeError):
        LayerSchedule(12, (5,), {5: (6,)})
    with pytest.raises(ShapeError):
        LayerSchedule(12, (12,), {12: (1,)})
    with pytest.raises(ShapeError):
        LayerSchedule(12, (5, 8), {5: (1,)})


def test_identity_forward_against_explicit_recursion(rng):
    zv, ze = rng.standard_normal((2, 4, 8))
    xv, xe = rng.standard_normal((2, 6, 8))
    beta = 0.7
    out = forward(zv, xv, ze, xe, weights=None, beta=beta)
    # identity layers: the search block only changes at layers 5, 8 and 11
    sv, se, cache_v, cache_e = xv.copy(), xe.copy(), {}, {}
    for i in range(12):
        if i in (5, 8, 11):
            prev = {5: (1, 3), 8: (4, 6), 11: (7, 9)}[i]
            bank_e = np.vstack([cache_e[p] for p in prev])
            bank_v = np.vstack([cache_v[p] for p in prev])
            sv, se = sv + softmax(beta * sv @ bank_e.T) @ bank_e, se + softmax(beta * se @ bank_v.T) @ bank_v
        cache_v[i], cache_e[i] = sv.copy(), se.copy()
    np.testing.assert_allclose(out.search_rgb, sv, rtol=1e-12)
    np.testing.assert_allclose(out.search_event, se, rtol=1e-12)
    np.testing.assert_allclose(out.fused_search, (sv + se) / 2, rtol=1e-12)
    # templates bypass retrieval
    np.testing.assert_array_equal(out.template_rgb, zv)
    np.testing.assert_array_equal(out.template_event, ze)


def test_disabled_schedule_is_pure_fusion(rng):
    xv, xe = rng.standard_normal((2, 6, 8))
    out = forward(np.ones((2, 8)), xv, np.ones((2, 8)), xe, schedule=LayerSchedule.disabled())
    np.testing.assert_allclose(out.fused_search, (xv + xe) / 2)


def test_forward_shape_checks(rng):
    with pytest.raises(ShapeError):
        forward(np.ones((4, 8)), np.ones((6, 8)), np.ones((3, 8)), np.ones((6, 8)))
    with pytest.raises(ShapeError):
        cross_modal_retrieval(np.ones((2, 4)), np.ones((2, 5)), np.ones((3, 5)), np.ones((3, 4)), None, 1.0)


def test_build_bank_stacks_rows():
    cache = {1: np.zeros((2, 3)), 3: np.ones((2, 3))}
    np.testing.assert_array_equal(build_bank(cache, (1, 3)), np.vstack([cache[1], cache[3]]))


def test_random_weights_forward_is_finite(rng):
    cfg = TrackerConfig(**SMALL)
    w = random_weights(cfg)
    sched = LayerSchedule.from_config(cfg)
    out = forward(rng.standard_normal((16, 16)), rng.standard_normal((16, 16)),
                  rng.standard_normal((16, 16)), rng.standard_normal((16, 16)), sched, w, 0.25)
    assert out.fused_search.shape == (16, 16) and np.all(np.isfinite(out.fused_search))
    assert set(out.cache_rgb) == {0, 1, 2}


def test_weights_tensor_round_trip(tmp_path):
    cfg = TrackerConfig(**SMALL)
    w = random_weights(cfg)
    t = w.to_tensors()
    write_ntw(tmp_path / "w.ntw", t)
    back = ModelWeights.load(tmp_path / "w.ntw", cfg)
    t2 = back.to_tensors()
    assert set(t2) == set(t)
    for k in t:
        np.testing.assert_allclose(t2[k], t[k], rtol=1e-6, atol=1e-7)  # float32 storage


@pytest.mark.parametrize("edit", [
    lambda t: t.pop("blocks.0.attn.qkv.weight"),
    lambda t: t.update({"blocks.1.mlp.fc1.bias": np.zeros(3)}),
    lambda t: t.update({"extra.tensor": np.zeros(3)}),
    lambda t: t.pop("hopfield.2.W_V"),
    lambda t: t.pop("head.size.conv2.bias"),
])
def test_from_tensors_fails_closed(edit):
    cfg = TrackerConfig(**SMALL)
    t = random_weights(cfg).to_tensors()
    edit(t)
    with pytest.raises(FormatError):
        ModelWeights.from_tensors(t, cfg)
