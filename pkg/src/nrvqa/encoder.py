"""Dimension-reducing FC followed by a GRU over frames.

The recurrent cell is a fused autograd op (one tape node per frame) with a
hand-derived backward; the per-gate input projections are batched over all
frames before the recurrence.  Cell equations, with h_0 = 0:

    z = sigmoid(x W_z + h U_z + b_z)
    r = sigmoid(x W_r + h U_r + b_r)
    c = tanh(x W_h + (r * h) U_h + b_h)
    h' = (1 - z) * h + z * c
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from nrvqa import autograd as ag
from nrvqa.autograd import Tensor, accumulate_grad, from_op
from nrvqa.features import FEATURE_DIM
from nrvqa.initutil import fan_in_uniform

REDUCED_DIM = 256
HIDDEN_DIM = 32


@dataclass
class EncoderParams:
    fc3_w: Tensor  # (input_dim, 256); input_dim is 1472, or 2944 when the
    fc3_b: Tensor  # attention stage is replaced by mean/std concatenation
    w_z: Tensor  # (256, 32)
    w_r: Tensor
    w_h: Tensor
    u_z: Tensor  # (32, 32)
    u_r: Tensor
    u_h: Tensor
    b_z: Tensor  # (32,)
    b_r: Tensor
    b_h: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, input_dim: int = FEATURE_DIM,
             reduced: int = REDUCED_DIM, hidden: int = HIDDEN_DIM) -> "EncoderParams":
        return cls(
            fc3_w=fan_in_uniform(rng, (input_dim, reduced), input_dim),
            fc3_b=fan_in_uniform(rng, (reduced,), input_dim),
            w_z=fan_in_uniform(rng, (reduced, hidden), reduced),
            w_r=fan_in_uniform(rng, (reduced, hidden), reduced),
            w_h=fan_in_uniform(rng, (reduced, hidden), reduced),
            u_z=fan_in_uniform(rng, (hidden, hidden), hidden),
            u_r=fan_in_uniform(rng, (hidden, hidden), hidden),
            u_h=fan_in_uniform(rng, (hidden, hidden), hidden),
            b_z=fan_in_uniform(rng, (hidden,), hidden),
            b_r=fan_in_uniform(rng, (hidden,), hidden),
            b_h=fan_in_uniform(rng, (hidden,), hidden),
        )

    def named(self):
        return [(f"encoder.{k}", getattr(self, k)) for k in (
            "fc3_w", "fc3_b", "w_z", "w_r", "w_h",
            "u_z", "u_r", "u_h", "b_z", "b_r", "b_h")]

    @property
    def hidden_dim(self) -> int:
        return self.u_z.shape[0]


def _row_grad(t: Tensor, i: int, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad[i] += g


def _gru_cell(xz: Tensor, xr: Tensor, xh: Tensor, i: int,
              h_prev: Tensor | None, p: EncoderParams) -> Tensor:
    """One recurrence step; xz/xr/xh are the (T, H) batched input projections."""
    hp = h_prev.data if h_prev is not None else np.zeros(p.hidden_dim)
    z = ag._sigmoid(xz.data[i] + hp @ p.u_z.data + p.b_z.data)
    r = ag._sigmoid(xr.data[i] + hp @ p.u_r.data + p.b_r.data)
    rh = r * hp
    c = np.tanh(xh.data[i] + rh @ p.u_h.data + p.b_h.data)
    h_new = (1.0 - z) * hp + z * c

    def backprop(g):
        dz = g * (c - hp)
        dc = g * z
        dhp = g * (1.0 - z)
        # candidate branch
        da_h = dc * (1.0 - c * c)
        _row_grad(xh, i, da_h)
        accumulate_grad(p.b_h, da_h)
        accumulate_grad(p.u_h, rh[:, None] * da_h[None, :])
        drh = da_h @ p.u_h.data.T
        dr = drh * hp
        dhp = dhp + drh * r
        # reset gate
        da_r = dr * r * (1.0 - r)
        _row_grad(xr, i, da_r)
        accumulate_grad(p.b_r, da_r)
        accumulate_grad(p.u_r, hp[:, None] * da_r[None, :])
        dhp = dhp + da_r @ p.u_r.data.T
        # update gate
        da_z = dz * z * (1.0 - z)
        _row_grad(xz, i, da_z)
        accumulate_grad(p.b_z, da_z)
        accumulate_grad(p.u_z, hp[:, None] * da_z[None, :])
        dhp = dhp + da_z @ p.u_z.data.T
        if h_prev is not None:
            accumulate_grad(h_prev, dhp)

    parents = [xz, xr, xh, p.u_z, p.u_r, p.u_h, p.b_z, p.b_r, p.b_h]
    if h_prev is not None:
        parents.append(h_prev)
    return from_op(h_new, tuple(parents), backprop)


def encode(f_q: Tensor, params: EncoderParams) -> Tensor:
    """Map attended frame features (T, input_dim) to hidden states (T, 32).

    Projections run row-by-row so the output for frame i is bitwise
    identical whether or not later frames are present (causality).
    """
    x = ag.add_rowvec(ag.matmul_rowwise(f_q, params.fc3_w), params.fc3_b)
    xz = ag.matmul_rowwise(x, params.w_z)
    xr = ag.matmul_rowwise(x, params.w_r)
    xh = ag.matmul_rowwise(x, params.w_h)
    h = None
    states = []
    for i in range(f_q.shape[0]):
        h = _gru_cell(xz, xr, xh, i, h, params)
        states.append(h)
    return ag.stack_rows(states)
