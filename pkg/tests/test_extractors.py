import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from refpose.errors import BadDimension, InsufficientPoints, OutOfBounds, ShapeMismatch
from refpose.geom import axis_angle
from refpose.seqmodel import cross_merge, cross_scan, fuse, knn_tokenize, points_ssm_forward, position_embed, rgb_ssm_forward
from refpose.seqmodel.points import morton_codes, scan_order
from refpose.seqmodel.rgb import bilinear_sample, prepare_view, upsample
from refpose.seqmodel.weights import ModelConfig, WeightBundle, extractor_manifest, init_weights


# KNN tokens and scan order

def test_k1_tokens_are_self():
    pts = np.random.default_rng(0).normal(size=(10, 3))
    tok = knn_tokenize(pts, 1)
    np.testing.assert_array_equal(tok.tokens[:, :3], 0)
    np.testing.assert_array_equal(tok.tokens[:, 3:], pts[tok.order])


def test_colinear_endpoints():
    pts = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]])
    tok = knn_tokenize(pts, 2)
    for s, i in enumerate(tok.order):
        if i == 0:
            assert tok.neighbors[s, 1] == 1
        if i == 3:
            assert tok.neighbors[s, 1] == 2


def test_knn_matches_brute_force():
    pts = np.random.default_rng(1).normal(size=(128, 3))
    tok = knn_tokenize(pts, 8)
    d = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    for s, i in enumerate(tok.order):
        assert set(tok.neighbors[s]) == set(np.argsort(d[i])[:8])


def test_knn_needs_k_points():
    with pytest.raises(InsufficientPoints):
        knn_tokenize(np.zeros((3, 3)), 4)


@given(arrays(np.float64, (30, 3), elements=st.floats(-1, 1)), st.integers(0, 2**32 - 1))
def test_scan_order_ignores_input_arrangement(pts, seed):
    perm = np.random.default_rng(seed).permutation(len(pts))
    np.testing.assert_array_equal(pts[scan_order(pts)], pts[perm][scan_order(pts[perm])])


def test_morton_interleaves_axes():
    pts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]])
    c = morton_codes(pts)
    full = (1 << 30) - 1
    assert c[0] == 0 and c[4] == full
    assert c[1] == int("001" * 10, 2) and c[2] == int("010" * 10, 2) and c[3] == int("100" * 10, 2)


# position embedding

def test_origin_embedding():
    e = position_embed(np.zeros((1, 3)), 12)[0].reshape(3, 2, 2)
    np.testing.assert_array_equal(e[:, 0], 0)
    np.testing.assert_array_equal(e[:, 1], 1)


def test_identical_points_identical_embeddings():
    e = position_embed(np.array([[0.1, 0.2, 0.3]] * 2), 18)
    np.testing.assert_array_equal(e[0], e[1])


def test_embedding_injective_on_grid():
    g = np.linspace(-1, 1, 16)
    pts = np.array(list(itertools.product(g, g, g)))
    e = position_embed(pts, 48)
    # nearest distinct pair in embedding space
    from scipy.spatial import cKDTree
    d, _ = cKDTree(e).query(e, k=2)
    assert d[:, 1].min() > 1e-6


@pytest.mark.parametrize("dim", [0, 4, 64])
def test_embedding_dimension_must_be_multiple_of_six(dim):
    with pytest.raises(BadDimension):
        position_embed(np.zeros((1, 3)), dim)


# points SSM

def test_points_forward_contract(tiny_weights):
    pts = np.random.default_rng(2).normal(scale=0.1, size=(40, 3))
    f = points_ssm_forward(pts, tiny_weights)
    assert f.shape == (40, tiny_weights.config.feat_dim)
    np.testing.assert_array_equal(f, points_ssm_forward(pts.copy(), tiny_weights))
    rot = pts @ axis_angle([0, 0, 1], np.pi / 2).T
    assert np.abs(points_ssm_forward(rot, tiny_weights) - f).max() > 0


@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1))
def test_points_rows_follow_input_permutation(tiny_weights, seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(scale=0.1, size=(25, 3))
    perm = rng.permutation(25)
    np.testing.assert_allclose(points_ssm_forward(pts[perm], tiny_weights),
                               points_ssm_forward(pts, tiny_weights)[perm], atol=1e-6)


def test_points_forward_rejects_bad_shape(tiny_weights):
    with pytest.raises(ShapeMismatch):
        points_ssm_forward(np.zeros((10, 2)), tiny_weights)


# cross scan

@given(st.integers(1, 7), st.integers(1, 7), st.integers(1, 3))
def test_cross_merge_inverts_cross_scan(H, W, C):
    g = np.random.default_rng(H * 100 + W * 10 + C).normal(size=(H, W, C))
    np.testing.assert_array_equal(cross_merge(cross_scan(g), H, W), g)


def test_cross_scan_small_grids():
    one = cross_scan(np.array([[5.0]]))
    assert all(len(s) == 1 and s[0] == 5.0 for s in one)
    g = np.arange(6).reshape(2, 3)
    seqs = [s.tolist() for s in cross_scan(g)]
    assert seqs == [[0, 1, 2, 3, 4, 5], [5, 4, 3, 2, 1, 0], [0, 3, 1, 4, 2, 5], [5, 2, 4, 1, 3, 0]]


# bilinear sampling and resizing

def test_bilinear_at_cell_centres_and_midpoints(rng):
    g = rng.normal(size=(4, 5, 2))
    xy = np.array([[x, y] for y in range(4) for x in range(5)], float)
    np.testing.assert_array_equal(bilinear_sample(g, xy), g.reshape(20, 2))
    np.testing.assert_allclose(bilinear_sample(g, np.array([[0.5, 0.0]]))[0], (g[0, 0] + g[0, 1]) / 2)
    np.testing.assert_array_equal(bilinear_sample(g, np.array([[-3.0, 9.0]]))[0], g[3, 0])


def test_upsample_constant_grid():
    np.testing.assert_allclose(upsample(np.full((3, 3, 2), 1.5), 8, 8), 1.5)


def test_prepare_view_maps_pixels_inside(rng):
    img = rng.integers(0, 255, size=(100, 120, 3), dtype=np.uint8)
    mask = np.zeros((100, 120), bool)
    mask[20:60, 30:50] = True
    v, u = np.nonzero(mask)
    out, m, px = prepare_view(img, mask, np.stack([u, v], 1), size=64)
    assert out.shape == (64, 64, 3) and m.shape == (64, 64)
    assert px.min() >= 0 and px.max() <= 63
    # mask pixels land on the resized mask
    assert m[np.rint(px[:, 1]).astype(int), np.rint(px[:, 0]).astype(int)].mean() > 0.95


# RGB SSM

def rgb_inputs(cfg, rng, n=30):
    s = cfg.image_size
    return rng.normal(size=(s, s, 3)).astype(np.float32), np.ones((s, s), bool), rng.uniform(0, s - 1, size=(n, 2))


def test_rgb_forward_contract(tiny_weights, rng):
    img, mask, px = rgb_inputs(tiny_weights.config, rng)
    px[5] = px[9]
    f = rgb_ssm_forward(img, mask, px, tiny_weights)
    assert f.shape == (30, tiny_weights.config.feat_dim)
    np.testing.assert_array_equal(f[5], f[9])
    perm = rng.permutation(30)
    np.testing.assert_array_equal(rgb_ssm_forward(img, mask, px[perm], tiny_weights), f[perm])


def test_rgb_constant_image_without_state_input(tiny_config, rng):
    # with the state input projections zeroed every scan is a per-token map,
    # so a constant image gives a constant grid
    t = dict(init_weights(tiny_config, 4).tensors)
    for k in t:
        if k.endswith((".W_B", ".b_B")):
            t[k] = np.zeros_like(t[k])
    w = WeightBundle(t, tiny_config)
    s = tiny_config.image_size
    img = np.full((s, s, 3), 0.3, np.float32)
    f = rgb_ssm_forward(img, np.ones((s, s), bool), rng.uniform(0, s - 1, size=(20, 2)), w)
    assert np.abs(f - f[0]).max() < 1e-6


def test_rgb_forward_errors(tiny_weights, rng):
    img, mask, px = rgb_inputs(tiny_weights.config, rng)
    with pytest.raises(ShapeMismatch):
        rgb_ssm_forward(img[:-1], mask, px, tiny_weights)
    with pytest.raises(ShapeMismatch):
        rgb_ssm_forward(img, mask[:-1], px, tiny_weights)
    with pytest.raises(OutOfBounds):
        rgb_ssm_forward(img, mask, px + 100, tiny_weights)


# fusion and weights

def test_fuse(rng):
    a, b = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    np.testing.assert_array_equal(fuse(a, np.zeros_like(b)), a)
    np.testing.assert_array_equal(fuse(a, b), fuse(b, a))
    np.testing.assert_allclose(fuse(a, b) - a, b, atol=1e-12)
    with pytest.raises(ShapeMismatch):
        fuse(a, b[:, :3])


def test_weight_init_is_seeded_and_valid(tiny_config):
    a, b = init_weights(tiny_config, 1), init_weights(tiny_config, 1)
    assert list(a.tensors) == list(extractor_manifest(tiny_config))
    assert all(np.array_equal(a[k], b[k]) for k in a.tensors)
    assert not np.array_equal(a["points.head.weight"], init_weights(tiny_config, 2)["points.head.weight"])
    a.validate()
    w = a["points.embed.weight"]
    assert np.abs(w).max() <= 1 / np.sqrt(w.shape[0])
    assert all(a[k].dtype == np.float32 for k in a.tensors)


def test_validate_rejects_bad_tensors(tiny_config):
    t = dict(init_weights(tiny_config, 0).tensors)
    name = next(k for k in t if k.endswith(".A"))
    with pytest.raises(ValueError):
        WeightBundle({**t, name: -t[name] + 1}, tiny_config).validate()
    with pytest.raises(ShapeMismatch):
        WeightBundle({**t, name: t[name][:, :1]}, tiny_config).validate()
    with pytest.raises(ShapeMismatch):
        WeightBundle({k: v for k, v in t.items() if k != name}, tiny_config).validate()


def test_default_config_feature_width():
    cfg = ModelConfig()
    assert cfg.feat_dim == 256 and cfg.pos_dim == 60
