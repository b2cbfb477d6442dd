"""Video-level channel attention from the temporal variance of mean features.

The attention weight vector is computed once per video from the std of the
mean-pooled features across frames, then applied to every frame's
std-pooled features channelwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from nrvqa import autograd as ag
from nrvqa.autograd import Tensor
from nrvqa.features import FEATURE_DIM
from nrvqa.initutil import fan_in_uniform

ATTENTION_HIDDEN = 320


@dataclass
class AttentionParams:
    fc1_w: Tensor  # (1472, 320)
    fc1_b: Tensor  # (320,)
    fc2_w: Tensor  # (320, 1472)
    fc2_b: Tensor  # (1472,)

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int = FEATURE_DIM,
             hidden: int = ATTENTION_HIDDEN) -> "AttentionParams":
        return cls(
            fc1_w=fan_in_uniform(rng, (dim, hidden), dim),
            fc1_b=fan_in_uniform(rng, (hidden,), dim),
            fc2_w=fan_in_uniform(rng, (hidden, dim), hidden),
            fc2_b=fan_in_uniform(rng, (dim,), hidden),
        )

    def named(self):
        return [
            ("attention.fc1_w", self.fc1_w),
            ("attention.fc1_b", self.fc1_b),
            ("attention.fc2_w", self.fc2_w),
            ("attention.fc2_b", self.fc2_b),
        ]


@dataclass
class AttendedSequence:
    quality: Tensor  # (T, 1472) attended std features
    weights: Tensor  # (1472,) channel attention, entries in (0, 1)


def temporal_variance_descriptor(mean_feats: Tensor) -> Tensor:
    """Per-channel std of mean features over frames; zero vector for T=1.

    The T-1 denominator is undefined for a single frame, so the zero-variance
    limit is used instead of failing.
    """
    if mean_feats.ndim != 2:
        raise ag.ShapeError("mean features must be (T, dim)")
    if mean_feats.shape[0] == 1:
        return Tensor(np.zeros(mean_feats.shape[1]))
    return ag.std_bessel(mean_feats, axis=0)


def attention_weights(f_att: Tensor, params: AttentionParams) -> Tensor:
    hidden = ag.relu(ag.add(ag.matmul(f_att, params.fc1_w), params.fc1_b))
    return ag.sigmoid(ag.add(ag.matmul(hidden, params.fc2_w), params.fc2_b))


def apply_attention(std_feats: Tensor, w_att: Tensor) -> AttendedSequence:
    if w_att.ndim != 1 or std_feats.shape[1] != w_att.shape[0]:
        raise ag.ShapeError(
            f"attention length {w_att.shape} does not match features {std_feats.shape}"
        )
    return AttendedSequence(ag.mul_rowvec(std_feats, w_att), w_att)


def attend(mean_feats: Tensor, std_feats: Tensor, params: AttentionParams) -> AttendedSequence:
    w_att = attention_weights(temporal_variance_descriptor(mean_feats), params)
    return apply_attention(std_feats, w_att)
