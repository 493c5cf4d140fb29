"""Micro-scale training of the two aligners through the alignment loss.

The extractors stay frozen: input features are a fixed random sinusoidal
map of object-space coordinates. Only the refinement parameters learn.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geom import DISCARD, CorrespondenceLabels, PointCloud, Pose, apply_pose, axis_angle, centroid, compose, focalize, nearest_labels
from ..seqmodel.weights import AlignerConfig
from .matching import affinity, alignment_loss, loss_gradient
from .pipeline import AlignerWeights
from .refine import init_aligner, refine_backward, refine_forward

MICRO_N = 32
MICRO_C = 16


def frozen_features(points: np.ndarray, dim: int = MICRO_C, seed: int = 7, length_scale: float = 0.05) -> np.ndarray:
    rng = np.random.default_rng(seed)
    W = rng.normal(scale=1.0 / length_scale, size=(3, dim))
    b = rng.uniform(0, 2 * np.pi, size=dim)
    return np.sin(points @ W + b)


@dataclass
class MicroInstance:
    pr_obj: PointCloud
    fr: np.ndarray
    pq_obj: list            # focalized query cloud per training iteration
    fq: list
    labels: CorrespondenceLabels


def make_micro_instance(seed: int, n: int = MICRO_N, dim: int = MICRO_C, max_rot_deg: float = 30.0) -> MicroInstance:
    from ..synth.scene import gen_object

    rng = np.random.default_rng([seed, 0x70F])
    obj = gen_object(seed, 4 * n)
    pts = obj.points
    idx = rng.permutation(len(pts))
    ref = PointCloud(pts[idx[:n]] + rng.normal(scale=1e-3, size=(n, 3)))
    q_obj = PointCloud(pts[idx[n:2 * n]] + rng.normal(scale=1e-3, size=(n, 3)))
    gt = Pose(axis_angle(rng.normal(size=3), np.deg2rad(max_rot_deg) * rng.uniform()), [0.0, 0.0, 0.8])
    q_cam = apply_pose(q_obj, gt)
    first = Pose(np.eye(3), centroid(q_cam))
    # the second iteration starts from a slightly wrong estimate
    second = compose(Pose(np.eye(3), rng.normal(scale=0.003, size=3)),
                     compose(gt, Pose(axis_angle(rng.normal(size=3), np.deg2rad(5.0)), np.zeros(3))))
    pq = [focalize(q_cam, first), focalize(q_cam, second)]
    return MicroInstance(
        pr_obj=ref, fr=frozen_features(ref.points, dim),
        pq_obj=pq, fq=[frozen_features(p.points, dim) for p in pq],
        labels=nearest_labels(q_cam, ref, gt, 0.15),
    )


def micro_dataset(n_instances: int, seed: int) -> list:
    return [make_micro_instance(seed * 1000 + i) for i in range(n_instances)]


@dataclass
class ToyState:
    aligners: AlignerWeights
    lr: float = 0.02
    step: int = 0
    history: list = field(default_factory=list)


def init_toy_state(seed: int = 0, lr: float = 0.02, dim: int = MICRO_C) -> ToyState:
    acfg = AlignerConfig(dim=dim)
    to64 = lambda p: {k: v.astype(np.float64) for k, v in p.items()}
    aw = AlignerWeights(to64(init_aligner(acfg, seed)), to64(init_aligner(acfg, seed + 1)), heads=acfg.heads)
    return ToyState(aw, lr=lr)


def instance_loss(aw: AlignerWeights, inst: MicroInstance, with_grad: bool = False):
    """Summed loss over both training iterations and, optionally, per-aligner gradients."""
    total = 0.0
    grads = []
    for i, (pq, fq) in enumerate(zip(inst.pq_obj, inst.fq), start=1):
        params = aw.for_iteration(i)
        r, q, cache = refine_forward(inst.fr, fq, inst.pr_obj, pq, params, aw.heads, keep_cache=True)
        a = affinity(q, r)
        total += alignment_loss(a, inst.labels)
        if with_grad:
            da = loss_gradient(a, inst.labels) / np.sqrt(q.shape[1])
            _, _, g = refine_backward(da.T @ q, da @ r, cache, params)
            grads.append(g)
    return (total, grads) if with_grad else total


def dataset_loss(aw: AlignerWeights, batch: list) -> float:
    return float(np.mean([instance_loss(aw, inst) for inst in batch]))


def toy_train_step(state: ToyState, batch: list) -> ToyState:
    """One full-batch gradient-descent step on both aligners."""
    g_init = {k: np.zeros_like(v) for k, v in state.aligners.initial.items()}
    g_iter = {k: np.zeros_like(v) for k, v in state.aligners.iterative.items()}
    loss = 0.0
    for inst in batch:
        l, (g1, g2) = instance_loss(state.aligners, inst, with_grad=True)
        loss += l / len(batch)
        for k in g1:
            g_init[k] += g1[k] / len(batch)
            g_iter[k] += g2[k] / len(batch)
    for params, grads in ((state.aligners.initial, g_init), (state.aligners.iterative, g_iter)):
        for k in params:
            params[k] -= state.lr * grads[k]
    state.step += 1
    state.history.append(loss)
    return state


def correspondence_accuracy(aw: AlignerWeights, batch: list, iteration: int = 1) -> float:
    """Fraction of labeled query points whose best-scoring reference is their label."""
    hit = total = 0
    for inst in batch:
        k = iteration - 1
        r, q = refine_forward(inst.fr, inst.fq[k], inst.pr_obj, inst.pq_obj[k], aw.for_iteration(iteration), aw.heads)
        best = np.argmax(affinity(q, r), axis=1)
        lab = inst.labels.query_to_ref
        ok = lab != DISCARD
        hit += int((best[ok] == lab[ok]).sum())
        total += int(ok.sum())
    return hit / max(total, 1)


def train_toy(steps: int = 500, n_train: int = 6, n_heldout: int = 6, seed: int = 0, lr: float = 0.02):
    """Run the micro training loop; returns (state, summary dict)."""
    train = micro_dataset(n_train, seed)
    held = micro_dataset(n_heldout, seed + 1)
    state = init_toy_state(seed, lr)
    summary = {
        "initial_loss": dataset_loss(state.aligners, train),
        "initial_heldout_accuracy": [correspondence_accuracy(state.aligners, held, i) for i in (1, 2)],
    }
    for _ in range(steps):
        toy_train_step(state, train)
    summary["final_loss"] = dataset_loss(state.aligners, train)
    summary["final_heldout_accuracy"] = [correspondence_accuracy(state.aligners, held, i) for i in (1, 2)]
    summary["steps"] = steps
    return state, summary
