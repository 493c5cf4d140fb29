import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from refpose.align import (
    AlignerWeights,
    affinity,
    alignment_loss,
    estimate,
    init_aligner,
    loss_gradient,
    refine_backward,
    refine_forward,
    select_correspondences,
    solve_pose,
)
from refpose.align.matching import CorrespondenceSet
from refpose.align.refine import distance_buckets
from refpose.align.toy import (
    correspondence_accuracy,
    init_toy_state,
    instance_loss,
    make_micro_instance,
    micro_dataset,
    toy_train_step,
)
from refpose.errors import AllDiscarded, NoCorrespondences, ShapeMismatch
from refpose.geom import DISCARD, CorrespondenceLabels, PointCloud, Pose, apply_pose, random_rotation, rotation_error
from refpose.seqmodel.weights import AlignerConfig
from refpose.synth.oracle import OracleExtractor
from refpose.synth.scene import PoseGap, make_pair
from refpose.toolkit.checks import random_labels

seeds = st.integers(0, 2**32 - 1)


def full_labels(n):
    return CorrespondenceLabels(np.arange(n), np.arange(n))


# affinity

def test_affinity_cases(rng):
    C = 16
    np.testing.assert_allclose(affinity(np.eye(C), np.eye(C)), np.eye(C) / 4)
    fq = rng.normal(size=(3, C))
    fq[1] = 0
    assert (affinity(fq, rng.normal(size=(5, C)))[1] == 0).all()
    a, b = rng.normal(size=(4, 8)), rng.normal(size=(6, 8))
    brute = np.array([[sum(a[i, c] * b[j, c] for c in range(8)) for j in range(6)] for i in range(4)]) / np.sqrt(8)
    np.testing.assert_allclose(affinity(a, b), brute, atol=1e-6)
    with pytest.raises(ShapeMismatch):
        affinity(a, b[:, :5])


# correspondence selection

def test_diagonal_affinity_pairs_everything():
    c = select_correspondences(np.eye(6) * 5)
    np.testing.assert_array_equal(c.query_idx, np.arange(6))
    np.testing.assert_array_equal(c.ref_idx, np.arange(6))
    np.testing.assert_allclose(c.weights, c.weights[0])


def test_forced_argmax_pair():
    a = np.full((3, 5), -np.inf)
    a[0, 3] = 1.0
    a[1:, :] = -5.0
    c = select_correspondences(a)
    assert (0, 3) in set(zip(c.query_idx, c.ref_idx))


@given(seeds)
def test_mutual_best_matches_enumeration(seed):
    a = np.random.default_rng(seed).normal(size=(16, 16))
    c = select_correspondences(a)
    expected = {(i, j) for i in range(16) for j in range(16)
                if j == max(range(16), key=lambda k: a[i, k]) and i == max(range(16), key=lambda k: a[k, j])}
    assert set(zip(c.query_idx.tolist(), c.ref_idx.tolist())) == expected
    assert ((c.weights > 0) & (c.weights <= 1)).all()


@given(seeds, st.integers(1, 12), st.integers(1, 12))
def test_global_maximum_is_always_mutual(seed, n, m):
    a = np.random.default_rng(seed).normal(size=(n, m))
    c = select_correspondences(a)
    assert np.unravel_index(a.argmax(), a.shape) in set(zip(c.query_idx.tolist(), c.ref_idx.tolist()))


def test_empty_affinity_raises():
    with pytest.raises(NoCorrespondences):
        select_correspondences(np.empty((0, 4)))


# pose solving

def test_solve_pose_perfect_and_identity(rng):
    pr = PointCloud(rng.normal(scale=0.1, size=(60, 3)))
    q = Pose(random_rotation(rng), [0.1, -0.2, 0.8])
    c = CorrespondenceSet(np.arange(60), np.arange(60), np.ones(60))
    p = solve_pose(c, pr, apply_pose(pr, q))
    assert rotation_error(p.rotation, q.rotation) < 1e-6
    assert rotation_error(solve_pose(c, pr, pr).rotation, np.eye(3)) < 1e-9


def test_solve_pose_tolerates_down_weighted_outliers(rng):
    pr = PointCloud(rng.normal(scale=0.1, size=(100, 3)))
    q = Pose(random_rotation(rng), [0.0, 0.0, 0.7])
    pq = apply_pose(pr, q).points.copy()
    bad = rng.choice(100, 30, replace=False)
    pq[bad] = rng.normal(scale=0.5, size=(30, 3))
    w = np.ones(100)
    w[bad] = 1e-6
    p = solve_pose(CorrespondenceSet(np.arange(100), np.arange(100), w), pr, PointCloud(pq))
    assert rotation_error(p.rotation, q.rotation) < 1e-3


# loss and gradient

def test_uniform_loss_closed_form():
    for n in (3, 8, 32):
        assert alignment_loss(np.zeros((n, n)), full_labels(n)) == 2 * np.log(n)


def test_confident_predictions_drive_loss_down():
    losses = [alignment_loss(k * np.eye(10), full_labels(10)) for k in (1, 10, 100)]
    assert losses[0] > losses[1] > losses[2] >= 0
    assert losses[2] < 1e-30


def reference_loss(a, labels):
    total = 0.0
    rows = [i for i, j in enumerate(labels.query_to_ref) if j != DISCARD]
    cols = [j for j, i in enumerate(labels.ref_to_query) if i != DISCARD]
    if rows:
        total += -np.mean([a[i, labels.query_to_ref[i]] - np.log(np.exp(a[i]).sum()) for i in rows])
    if cols:
        total += -np.mean([a[labels.ref_to_query[j], j] - np.log(np.exp(a[:, j]).sum()) for j in cols])
    return total


@given(seeds)
def test_loss_matches_independent_formula(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(8, 8))
    labels = random_labels(rng, 8, 8)
    assert alignment_loss(a, labels) == pytest.approx(reference_loss(a, labels), abs=1e-8)
    assert alignment_loss(a, labels) >= 0


@given(seeds)
def test_gradient_sums_to_zero_per_labeled_axis(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(9, 7))
    labels = CorrespondenceLabels(np.where(rng.uniform(size=9) < 0.5, rng.integers(0, 7, 9), DISCARD),
                                  np.full(7, DISCARD))
    labels.query_to_ref[0] = 2
    g = loss_gradient(a, labels)
    np.testing.assert_allclose(g.sum(axis=1), 0, atol=1e-8)
    assert (g[labels.query_to_ref == DISCARD] == 0).all()


def test_all_discarded_raises():
    lab = CorrespondenceLabels(np.full(4, DISCARD), np.full(3, DISCARD))
    with pytest.raises(AllDiscarded):
        alignment_loss(np.zeros((4, 3)), lab)
    with pytest.raises(ShapeMismatch):
        alignment_loss(np.zeros((3, 3)), lab)


# refinement

@pytest.fixture
def small_aligner():
    acfg = AlignerConfig(dim=8, blocks=2, heads=2, buckets=6)
    p = {k: v.astype(np.float64) for k, v in init_aligner(acfg, 0).items()}
    rng = np.random.default_rng(1)
    for k in p:
        if k.endswith(".geo"):
            p[k] = rng.normal(size=p[k].shape)
    return p


def test_zero_output_projection_is_identity(rng):
    p = init_aligner(AlignerConfig(dim=8, blocks=2, heads=2), 0)
    p = {k: (np.zeros_like(v) if k.endswith(".wo") else v) for k, v in p.items()}
    fr, fq = rng.normal(size=(10, 8)), rng.normal(size=(7, 8))
    r, q = refine_forward(fr, fq, rng.normal(size=(10, 3)), rng.normal(size=(7, 3)), p, heads=2)
    np.testing.assert_array_equal(r, fr)
    np.testing.assert_array_equal(q, fq)


@given(seeds)
@settings(max_examples=20)
def test_refinement_invariant_to_shared_rigid_motion(seed):
    rng = np.random.default_rng(seed)
    p = init_aligner(AlignerConfig(dim=8, blocks=1, heads=2), 0)
    p["block0.self.geo"] = rng.normal(size=p["block0.self.geo"].shape).astype(np.float32)
    fr, fq = rng.normal(size=(12, 8)), rng.normal(size=(9, 8))
    pr, pq = rng.uniform(-0.1, 0.1, size=(12, 3)), rng.uniform(-0.1, 0.1, size=(9, 3))
    R, t = random_rotation(rng), rng.normal(size=3)
    a = refine_forward(fr, fq, pr, pq, p, heads=2)
    b = refine_forward(fr, fq, pr @ R.T + t, pq @ R.T + t, p, heads=2)
    assert a[0].shape == fr.shape and a[1].shape == fq.shape
    np.testing.assert_allclose(a[0], b[0], atol=1e-5)
    np.testing.assert_allclose(a[1], b[1], atol=1e-5)


def test_distance_buckets_span():
    b = distance_buckets(np.array([[0, 0, 0], [1e-4, 0, 0], [0.03, 0, 0], [5.0, 0, 0]]), 16)
    assert b[0, 1] == 0 and b[0, 3] == 15 and 0 < b[0, 2] < 15
    assert (b == b.T).all()


def test_refine_backward_matches_finite_differences(small_aligner):
    rng = np.random.default_rng(2)
    fr, fq = rng.normal(size=(9, 8)), rng.normal(size=(7, 8))
    pr, pq = rng.uniform(-0.2, 0.2, size=(9, 3)), rng.uniform(-0.2, 0.2, size=(7, 3))
    wr, wq = rng.normal(size=(9, 8)), rng.normal(size=(7, 8))

    def objective(p, fr=fr, fq=fq):
        r, q = refine_forward(fr, fq, pr, pq, p, heads=2)
        return float((r * wr).sum() + (q * wq).sum())

    _, _, cache = refine_forward(fr, fq, pr, pq, small_aligner, heads=2, keep_cache=True)
    dfr, dfq, grads = refine_backward(wr, wq, cache, small_aligner)
    h = 1e-6
    worst = 0.0
    for name in small_aligner:
        for idx in list(np.ndindex(small_aligner[name].shape))[:6]:
            plus = {k: v.copy() for k, v in small_aligner.items()}
            minus = {k: v.copy() for k, v in small_aligner.items()}
            plus[name][idx] += h
            minus[name][idx] -= h
            fd = (objective(plus) - objective(minus)) / (2 * h)
            worst = max(worst, abs(fd - grads[name][idx]) / max(abs(fd), abs(grads[name][idx]), 1e-6))
    for i, j in [(0, 0), (3, 5), (8, 7)]:
        e = np.zeros_like(fr)
        e[i, j] = h
        fd = (objective(small_aligner, fr=fr + e) - objective(small_aligner, fr=fr - e)) / (2 * h)
        worst = max(worst, abs(fd - dfr[i, j]) / max(abs(fd), 1e-6))
    assert worst < 1e-5


# estimate loop

@pytest.fixture(scope="module")
def oracle_pair():
    return make_pair(11)


def test_estimate_with_oracle_features(oracle_pair):
    p = oracle_pair
    res = estimate(p.reference, p.query, p.intrinsics, OracleExtractor(p.gt_query_pose, seed=11), iters=3, seed=11)
    assert not res.failed and len(res.trace) == 3
    from refpose.synth.metrics import add_metric
    assert add_metric(p.object, res.pose, p.gt_query_pose) < 1e-3


def test_estimate_self_alignment(oracle_pair):
    p = oracle_pair
    ref = p.reference
    res = estimate(ref, ref, p.intrinsics, OracleExtractor(ref.pose, seed=1), iters=2, seed=1)
    np.testing.assert_allclose(res.pose.rotation, ref.pose.rotation, atol=1e-5)
    np.testing.assert_allclose(res.pose.translation, ref.pose.translation, atol=1e-5)


class ConstantExtractor:
    def reference(self, view, cam, obj):
        return np.ones((cam.n, 4), np.float32)

    def query(self, view, cam, obj, i):
        return np.ones((cam.n, 4), np.float32)


def test_degenerate_features_flag_failure(oracle_pair):
    p = oracle_pair
    res = estimate(p.reference, p.query, p.intrinsics, ConstantExtractor(), iters=3, n_points=64)
    assert res.failed and res.trace == [] and "iteration 1" in res.message


def test_estimate_argument_checks(oracle_pair):
    p = oracle_pair
    with pytest.raises(ValueError):
        estimate(p.query, p.query, p.intrinsics, ConstantExtractor())
    with pytest.raises(ValueError):
        estimate(p.reference, p.query, p.intrinsics, ConstantExtractor(), iters=0)


def test_aligner_schedule():
    aw = AlignerWeights({"a": 1}, {"b": 2})
    assert aw.for_iteration(1) is aw.initial
    assert aw.for_iteration(2) is aw.for_iteration(3) is aw.iterative


# toy training

def test_one_step_decreases_each_instance_loss():
    for seed in range(20):
        inst = make_micro_instance(500 + seed)
        state = init_toy_state(seed, lr=1e-3)
        before = instance_loss(state.aligners, inst)
        toy_train_step(state, [inst])
        assert instance_loss(state.aligners, inst) < before


def test_aligner_sets_do_not_share_storage():
    state = init_toy_state(0)
    batch = micro_dataset(2, 3)
    for _ in range(3):
        toy_train_step(state, batch)
    a, b = state.aligners.initial, state.aligners.iterative
    assert set(a) == set(b)
    for k in a:
        assert not np.shares_memory(a[k], b[k])
        assert not np.array_equal(a[k], b[k])
    assert state.step == 3 and len(state.history) == 3


def test_accuracy_is_a_fraction():
    state = init_toy_state(0)
    acc = correspondence_accuracy(state.aligners, micro_dataset(2, 9), iteration=2)
    assert 0.0 <= acc <= 1.0
