"""Frame weighting and pyramid temporal aggregation into a fixed descriptor.

Frames are weighted by two windowed 1-D convolutions, then averaged into
2^(m-1) contiguous time slots per level m = 1..7 and concatenated into a
32x127 video descriptor that is independent of the frame count.  Slot
means use balanced pairwise summation so a temporally constant input
reproduces itself exactly in every slot regardless of T.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from nrvqa import autograd as ag
from nrvqa.autograd import Tensor, accumulate_grad, from_op
from nrvqa.initutil import fan_in_uniform

LEVELS = 7
CONV_KERNEL = 15


def slot_count(levels: int = LEVELS) -> int:
    return 2 ** levels - 1


@dataclass
class PyramidParams:
    conv1_k: Tensor  # (1, 32, 15)
    conv1_b: Tensor  # ()
    conv2_k: Tensor  # (1, 1, 15)
    conv2_b: Tensor  # ()
    fc4_w: Tensor  # (32,), shared slot-to-scalar map
    fc4_b: Tensor  # ()
    fc5_w: Tensor  # (127,), or (1,) when the pyramid is ablated to level 1
    fc5_b: Tensor  # ()
    levels: int = LEVELS

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int = 32,
             kernel: int = CONV_KERNEL, levels: int = LEVELS) -> "PyramidParams":
        if kernel % 2 == 0:
            raise ag.ShapeError(f"conv kernel size must be odd, got {kernel}")
        slots = slot_count(levels)
        return cls(
            conv1_k=fan_in_uniform(rng, (1, hidden, kernel), hidden * kernel),
            conv1_b=Tensor(np.zeros(()), requires_grad=True),
            conv2_k=fan_in_uniform(rng, (1, 1, kernel), kernel),
            conv2_b=Tensor(np.zeros(()), requires_grad=True),
            fc4_w=fan_in_uniform(rng, (hidden,), hidden),
            fc4_b=fan_in_uniform(rng, (), hidden),
            fc5_w=fan_in_uniform(rng, (slots,), slots),
            fc5_b=fan_in_uniform(rng, (), slots),
            levels=levels,
        )

    def named(self):
        return [(f"pyramid.{k}", getattr(self, k)) for k in (
            "conv1_k", "conv1_b", "conv2_k", "conv2_b",
            "fc4_w", "fc4_b", "fc5_w", "fc5_b")]


def frame_weights(f_gru: Tensor, params: PyramidParams) -> Tensor:
    """Per-frame scalar weights in (-1, 1) from two same-length convolutions."""
    x = ag.transpose(f_gru)  # (32, T)
    c1 = ag.add(ag.conv1d(x, params.conv1_k), params.conv1_b)
    c2 = ag.add(ag.conv1d(ag.relu(c1), params.conv2_k), params.conv2_b)
    return ag.reshape(ag.tanh(c2), (f_gru.shape[0],))


def weight_frames(f_gru: Tensor, w_gru: Tensor) -> Tensor:
    """Scale frame i of (T, 32) features by scalar weight w_gru[i]."""
    return ag.scale_rows(f_gru, w_gru)


def slot_plan(t: int, levels: int = LEVELS):
    """Assignment of frames to pyramid slots.

    Returns a list over the 2^levels - 1 slots, in level order, of either
    ("mean", lo, hi) covering frames lo..hi-1 or ("copy", src) pointing at
    an earlier slot in the same level.  Frame i of level m belongs to slot
    floor(i * 2^(m-1) / t); slots left empty when t < 2^(m-1) copy the
    nearest nonempty slot by slot-center distance, earlier slot on ties.
    """
    if t < 1:
        raise ag.ShapeError("need at least one frame")
    plan = []
    for m in range(1, levels + 1):
        s = 2 ** (m - 1)
        base = len(plan)
        assign = [(i * s) // t for i in range(t)]
        bounds = {}
        for i, j in enumerate(assign):
            lo, _ = bounds.get(j, (i, i))
            bounds[j] = (lo, i + 1)
        nonempty = sorted(bounds)
        for j in range(s):
            if j in bounds:
                lo, hi = bounds[j]
                plan.append(("mean", lo, hi))
            else:
                src = min(nonempty, key=lambda f: (abs(j - f), f))
                plan.append(("copy", base + src))
    return plan


def _pairwise_sum(rows: np.ndarray) -> np.ndarray:
    # balanced halving keeps slot means of identical rows bit-exact
    n = rows.shape[0]
    if n == 1:
        return rows[0].copy()
    mid = n // 2
    return _pairwise_sum(rows[:mid]) + _pairwise_sum(rows[mid:])


def aggregate_pyramid(f_wt: Tensor, levels: int = LEVELS) -> Tensor:
    """Aggregate weighted frame features (T, h) into the (h, 2^levels - 1) descriptor."""
    t, h = f_wt.shape
    plan = slot_plan(t, levels)
    slots = np.empty((len(plan), h))
    for k, entry in enumerate(plan):
        if entry[0] == "mean":
            _, lo, hi = entry
            slots[k] = _pairwise_sum(f_wt.data[lo:hi]) / (hi - lo)
    for k, entry in enumerate(plan):
        # copy sources are always "mean" slots, possibly later in the level
        if entry[0] == "copy":
            slots[k] = slots[entry[1]]

    def backprop(g):
        if not f_wt.requires_grad:
            return
        gp = np.ascontiguousarray(g.T)
        for k, entry in enumerate(plan):
            if entry[0] == "copy":
                gp[entry[1]] += gp[k]
        gx = np.zeros_like(f_wt.data)
        for k, entry in enumerate(plan):
            if entry[0] == "mean":
                _, lo, hi = entry
                gx[lo:hi] += gp[k] / (hi - lo)
        accumulate_grad(f_wt, gx)

    return from_op(slots.T.copy(), (f_wt,), backprop)


def q_vid(f_vid: Tensor, params: PyramidParams) -> Tensor:
    """Video score: shared slot-to-scalar map, then a map over the slot axis."""
    expected = slot_count(params.levels)
    if f_vid.shape != (params.fc4_w.shape[0], expected):
        raise ag.ShapeError(
            f"descriptor shape {f_vid.shape} does not match "
            f"({params.fc4_w.shape[0]}, {expected})"
        )
    per_slot = ag.add(ag.matmul(params.fc4_w, f_vid), params.fc4_b)  # (slots,)
    return ag.add(ag.matmul(per_slot, params.fc5_w), params.fc5_b)


def fuse_scores(q_vid_value: float, q_reg_value: float, lam: float) -> float:
    """Convex fusion of the two heads: (q_vid + lam * q_reg) / (1 + lam)."""
    if lam < 0:
        raise ValueError(f"fusion weight must be nonnegative, got {lam}")
    return (q_vid_value + lam * q_reg_value) / (1.0 + lam)
