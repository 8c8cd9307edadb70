import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from m3net.encoding import (
    EncoderSwitches,
    IECEParams,
    IFCEParams,
    IVCEParams,
    StemParams,
    adaptive_pool_spatial,
    encode_episode,
    ifce_attention,
    ifce_forward,
    iece_forward,
    ivce_forward,
    spatial_squeeze,
    stem_forward,
)
from m3net.episode import Episode, VideoClip
from m3net.errors import BadGrid, EpisodeSizeMismatch, ShapeMismatch
from m3net.model import ModelParams

from conftest import TINY, random_episode

finite = st.floats(-10, 10, allow_nan=False, width=64)


def zero(params):
    return params.zeros_like()


# -- stem --------------------------------------------------------------------

def test_stem_identity_and_constant():
    x = np.random.default_rng(0).standard_normal((2, 3, 3, 4))
    assert np.array_equal(stem_forward(StemParams(np.eye(4), np.zeros(4)), x), x)
    out = stem_forward(StemParams(np.zeros((4, 5)), np.ones(5)), x)
    assert np.array_equal(out, np.ones((2, 3, 3, 5)))


def test_stem_matches_per_pixel_loop():
    rng = np.random.default_rng(1)
    p = StemParams(rng.standard_normal((3, 4)), rng.standard_normal(4))
    x = rng.standard_normal((2, 3, 2, 3))
    out = stem_forward(p, x)
    for idx in np.ndindex(x.shape[:3]):
        want = [sum(x[idx][i] * p.W[i, j] for i in range(3)) + p.b[j] for j in range(4)]
        np.testing.assert_allclose(out[idx], want, rtol=1e-12)


def test_stem_channel_mismatch():
    with pytest.raises(ShapeMismatch):
        stem_forward(StemParams(np.zeros((3, 4)), np.zeros(4)), np.zeros((1, 2, 2, 5)))


# -- pooling -----------------------------------------------------------------

def test_pool_hand_averages():
    feat = np.arange(1.0, 17.0).reshape(4, 4, 1)
    assert adaptive_pool_spatial(feat, 2)[:, 0].tolist() == [3.5, 5.5, 11.5, 13.5]


def test_pool_unit_bins_and_constants():
    feat = np.random.default_rng(0).standard_normal((3, 3, 2))
    np.testing.assert_array_equal(adaptive_pool_spatial(feat, 3), feat.reshape(9, 2))
    np.testing.assert_allclose(adaptive_pool_spatial(np.full((5, 7, 2), 2.5), 3), 2.5)


def test_pool_bad_grid():
    with pytest.raises(BadGrid):
        adaptive_pool_spatial(np.zeros((4, 4, 1)), 5)
    with pytest.raises(BadGrid):
        adaptive_pool_spatial(np.zeros((4, 4, 1)), 0)


def test_pool_uneven_bins_match_loop():
    feat = np.random.default_rng(2).standard_normal((5, 7, 2))
    out = adaptive_pool_spatial(feat, 3)
    for i in range(3):
        for j in range(3):
            block = feat[i * 5 // 3:(i + 1) * 5 // 3, j * 7 // 3:(j + 1) * 7 // 3]
            np.testing.assert_allclose(out[i * 3 + j], block.mean(axis=(0, 1)), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.sampled_from([(4, 4, 2), (6, 6, 3), (8, 4, 2), (6, 9, 3)]), st.integers(0, 2 ** 32))
def test_pool_preserves_global_mean(dims, seed):
    h, w, n = dims
    feat = np.random.default_rng(seed).uniform(-10, 10, (h, w, 3))
    np.testing.assert_allclose(adaptive_pool_spatial(feat, n).mean(0), feat.mean((0, 1)), atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32))
def test_pool_commutes_with_stem(seed):
    rng = np.random.default_rng(seed)
    p = StemParams(rng.standard_normal((3, 5)), rng.standard_normal(5))
    x = rng.standard_normal((2, 5, 6, 3))
    np.testing.assert_allclose(adaptive_pool_spatial(stem_forward(p, x), 2),
                               stem_forward(p, adaptive_pool_spatial(x, 2)), atol=1e-12)


def test_spatial_squeeze():
    np.testing.assert_array_equal(spatial_squeeze(np.full((3, 4, 2), 7.0)), np.full((3, 2), 7.0))
    x = np.array([[[1.0], [4.0]], [[-2.0], [3.0]]])
    assert spatial_squeeze(x)[:, 0].tolist() == [2.5, 0.5]
    y = np.random.default_rng(0).standard_normal((3, 1, 2))
    np.testing.assert_array_equal(spatial_squeeze(y), y[:, 0])


# -- IFCE --------------------------------------------------------------------

def _ifce(rng, d=4, n=2, d_mlp=6):
    p = IFCEParams.init(d, n, d_mlp, rng, np.float64)
    p.P = rng.normal(0, 0.5, p.P.shape)
    return p


def test_ifce_residual_identity():
    p = zero(IFCEParams.init(4, 2, 8, np.random.default_rng(0), np.float64))
    x = np.random.default_rng(1).standard_normal((3, 4, 4))
    assert np.array_equal(ifce_forward(p, x), x)


def test_ifce_alpha_initialised_to_one():
    p = IFCEParams.init(4, 2, 8, np.random.default_rng(0))
    assert p.alpha.shape == () and float(p.alpha) == 1.0


def test_ifce_matches_loop_oracle():
    rng = np.random.default_rng(3)
    p = _ifce(rng)
    for key in ("mlp_b1", "mlp_b2", "mlp_b3"):
        setattr(p, key, rng.standard_normal(getattr(p, key).shape))
    x = rng.standard_normal((4, 4))
    z = x + p.P
    scores = np.array([[z[i] @ p.W_Q @ (z[j] @ p.W_K) / 2.0 for j in range(4)] for i in range(4)])
    attn = np.exp(scores) / np.exp(scores).sum(1, keepdims=True)
    zh = np.array([p.alpha * sum(attn[i, j] * (z[j] @ p.W_V) for j in range(4)) + z[i]
                   for i in range(4)])
    relu = lambda v: np.where(v > 0, v, 0.0)
    mlp = relu(relu(zh @ p.mlp_W1 + p.mlp_b1) @ p.mlp_W2 + p.mlp_b2) @ p.mlp_W3 + p.mlp_b3
    np.testing.assert_allclose(ifce_forward(p, x), mlp + zh, rtol=1e-10, atol=1e-12)


def test_ifce_single_patch_closed_form():
    rng = np.random.default_rng(4)
    p = _ifce(rng, n=1)
    p.alpha = np.asarray(0.7)
    for key in ("mlp_W1", "mlp_W2", "mlp_W3"):
        setattr(p, key, np.zeros_like(getattr(p, key)))
    x = rng.standard_normal((2, 1, 4))
    np.testing.assert_array_equal(ifce_attention(p, x), np.ones((2, 1, 1)))
    z = x + p.P
    np.testing.assert_allclose(ifce_forward(p, x), 0.7 * z @ p.W_V + z, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (2, 4, 4), elements=finite), st.integers(0, 2 ** 32))
def test_ifce_attention_rows_normalised(x, seed):
    p = _ifce(np.random.default_rng(seed))
    a = ifce_attention(p, x)
    assert (a >= 0).all()
    np.testing.assert_allclose(a.sum(-1), 1.0, atol=1e-6)


def test_ifce_shape_mismatch():
    p = IFCEParams.init(4, 2, 8, np.random.default_rng(0))
    with pytest.raises(ShapeMismatch):
        ifce_forward(p, np.zeros((9, 4)))


# -- IVCE --------------------------------------------------------------------

def test_ivce_residual_identity():
    p = zero(IVCEParams.init(5, 3, np.random.default_rng(0), np.float64))
    x = np.random.default_rng(1).standard_normal((5, 3))
    assert np.array_equal(ivce_forward(p, x), x)


def test_ivce_scalar_doubles():
    one, nil = np.ones((1, 1)), np.zeros((1, 1))
    p = IVCEParams(one, one, nil, nil, nil)
    assert ivce_forward(p, np.array([[1.5]]))[0, 0] == 3.0


def test_ivce_is_order_sensitive_with_positions():
    rng = np.random.default_rng(5)
    p = IVCEParams.init(4, 3, rng, np.float64)
    p.P = rng.standard_normal(p.P.shape)
    x = rng.standard_normal((4, 3))
    perm = [2, 0, 3, 1]
    assert not np.allclose(ivce_forward(p, x[perm]), ivce_forward(p, x)[perm])


# -- IECE --------------------------------------------------------------------

def test_iece_residual_identity():
    p = zero(IECEParams.init(3, 4, np.random.default_rng(0), np.float64))
    x = np.random.default_rng(1).standard_normal((3, 5, 4))
    assert np.array_equal(iece_forward(p, x), x)


def test_iece_scalar_hand_evaluation():
    # videos a=1, b=2, one frame each, d=1.
    # token perception with W_v1 = W_v2 = I: relu([1, 2]) + [1, 2] = [2, 4]
    # channel perception with w_e1 = w_e2 = 1: relu(u) + u = [4, 8]
    # context map [frame, G] @ [[0], [1]] + frame = G + frame = [5, 10]
    p = IECEParams(np.eye(2), np.eye(2), np.ones((1, 1)), np.ones((1, 1)),
                   np.array([[0.0], [1.0]]), np.zeros(1))
    out = iece_forward(p, np.array([[[1.0]], [[2.0]]]))
    assert out.ravel().tolist() == [5.0, 10.0]


def test_iece_permutation_equivariant_without_video_mixing():
    rng = np.random.default_rng(6)
    p = IECEParams.init(4, 3, rng, np.float64)
    p.W_v1[:] = 0
    p.W_v2[:] = 0
    x = rng.standard_normal((4, 2, 3))
    perm = [3, 1, 0, 2]
    np.testing.assert_allclose(iece_forward(p, x[perm]), iece_forward(p, x)[perm], atol=1e-12)


def test_iece_size_mismatch():
    p = IECEParams.init(3, 4, np.random.default_rng(0))
    with pytest.raises(EpisodeSizeMismatch):
        iece_forward(p, np.zeros((4, 2, 4)))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 3, 2, 2, 3), elements=finite), st.integers(0, 2 ** 32))
def test_encoders_finite_on_bounded_inputs(frames, seed):
    params = ModelParams.init(TINY, np.random.default_rng(seed), np.float64)
    clips = [VideoClip(f, i, i) for i, f in enumerate(frames)]
    cfg_ep = Episode(clips[:2], clips[2:], [0, 1], np.array([0]), 1)
    p = params
    p.stem.W = np.random.default_rng(seed).standard_normal(p.stem.W.shape)
    v = encode_episode(p, cfg_ep, 0)
    assert all(np.isfinite(a).all() for a in (v.instance_view, v.category_view, v.task_view))


# -- whole episode -----------------------------------------------------------

def test_encode_episode_shapes(tiny_params, tiny_episode):
    v = encode_episode(tiny_params, tiny_episode, 0)
    for view in (v.instance_view, v.category_view, v.task_view):
        assert view.shape == (TINY.episode_size, TINY.t, TINY.d)


def test_zero_encoders_give_squeezed_input():
    cfg = TINY.with_overrides(c=TINY.d)
    params = ModelParams.init(cfg, np.random.default_rng(0), np.float64).zeros_like()
    params.stem.W = np.eye(cfg.d)
    ep = random_episode(cfg, np.random.default_rng(1))
    v = encode_episode(params, ep, 0)
    raw = np.stack([c.frames for c in list(ep.support) + [ep.query[0]]]).mean(axis=(2, 3))
    for view in (v.instance_view, v.category_view, v.task_view):
        np.testing.assert_allclose(view, raw, atol=1e-12)


def test_other_queries_do_not_leak():
    cfg = TINY.with_overrides(n_query=2)
    rng = np.random.default_rng(2)
    params = ModelParams.init(cfg, rng, np.float64)
    ep = random_episode(cfg, rng)
    swapped = list(ep.query)
    swapped[1] = VideoClip(rng.standard_normal(swapped[1].shape), swapped[1].class_id, 999)
    ep2 = Episode(ep.support, swapped, ep.class_ids, ep.query_labels, ep.k_shot)
    a, b = encode_episode(params, ep, 0), encode_episode(params, ep2, 0)
    for x, y in ((a.instance_view, b.instance_view), (a.category_view, b.category_view),
                 (a.task_view, b.task_view)):
        assert x.tobytes() == y.tobytes()


def test_support_views_depend_on_query_only_through_task_view(tiny_params):
    cfg = TINY.with_overrides(n_query=2)
    ep = random_episode(cfg, np.random.default_rng(3))
    a, b = encode_episode(tiny_params, ep, 0), encode_episode(tiny_params, ep, 1)
    s = slice(0, -1)
    assert a.instance_view[s].tobytes() == b.instance_view[s].tobytes()
    assert a.category_view[s].tobytes() == b.category_view[s].tobytes()
    assert not np.allclose(a.task_view[s], b.task_view[s])


def test_disabled_encoders_pass_through(tiny_params, tiny_episode):
    off = encode_episode(tiny_params, tiny_episode, 0, EncoderSwitches(True, False, False))
    assert np.array_equal(off.category_view, off.instance_view)
    assert np.array_equal(off.task_view, off.instance_view)
