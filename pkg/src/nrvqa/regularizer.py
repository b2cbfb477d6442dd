"""Adversarial Gaussian regularization of video-level features.

Frame features are averaged into a single vector which (a) regresses the
quality score through a per-dimension Gaussian kernel with learnable
mean/scale and (b) is pushed toward a frozen reference Gaussian by a small
discriminator.  The reference distribution is refreshed from the learned
parameters on a fixed epoch schedule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from nrvqa import autograd as ag
from nrvqa.autograd import Tensor
from nrvqa.initutil import fan_in_uniform

FEATURE_LEN = 32
SIGMA_FLOOR = 1e-3


class SchedulingError(RuntimeError):
    """Prior refresh attempted outside the configured epoch schedule."""


class InvariantError(ValueError):
    pass


@dataclass
class GaussianPrior:
    """Frozen per-dimension reference Gaussian plus its sampler state."""

    mu: np.ndarray
    sigma: np.ndarray
    rng: np.random.Generator
    refresh_count: int = 0
    last_refresh_epoch: int = 0

    @classmethod
    def standard(cls, dim: int = FEATURE_LEN, seed: int = 0) -> "GaussianPrior":
        return cls(np.zeros(dim), np.ones(dim), np.random.default_rng(seed))

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if np.any(self.sigma <= 0):
            raise InvariantError("prior sigma must be strictly positive")


def sample_prior(prior: GaussianPrior, count: int) -> np.ndarray:
    """Draw `count` i.i.d. vectors from the reference Gaussian."""
    draws = prior.rng.standard_normal((count, prior.mu.shape[0]))
    return prior.mu + prior.sigma * draws


def refresh_prior(prior: GaussianPrior, learned_mu: np.ndarray,
                  learned_sigma: np.ndarray, epoch: int, period: int) -> GaussianPrior:
    """Overwrite the reference distribution with the learned parameters.

    Only valid at epoch multiples of the refresh period.
    """
    if period < 1 or epoch < 1 or epoch % period != 0:
        raise SchedulingError(
            f"refresh at epoch {epoch} is off the every-{period}-epochs schedule"
        )
    sigma = np.asarray(learned_sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise InvariantError("refusing refresh: non-positive learned sigma")
    prior.mu = np.asarray(learned_mu, dtype=np.float64).copy()
    prior.sigma = sigma.copy()
    prior.refresh_count += 1
    prior.last_refresh_epoch = epoch
    return prior


@dataclass
class DiscriminatorParams:
    """MLP over 32-dim features: ReLU hidden layers, sigmoid probability head."""

    hidden: list  # [(W, b), ...]
    head_w: Tensor
    head_b: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int = FEATURE_LEN,
             widths: tuple = (16, 8)) -> "DiscriminatorParams":
        layers = []
        prev = dim
        for w in widths:
            layers.append((fan_in_uniform(rng, (prev, w), prev),
                           fan_in_uniform(rng, (w,), prev)))
            prev = w
        return cls(layers, fan_in_uniform(rng, (prev,), prev),
                   fan_in_uniform(rng, (), prev))

    def named(self):
        out = []
        for i, (w, b) in enumerate(self.hidden):
            out.append((f"disc.w{i}", w))
            out.append((f"disc.b{i}", b))
        out.append(("disc.head_w", self.head_w))
        out.append(("disc.head_b", self.head_b))
        return out


def average_features(f_gru: Tensor) -> Tensor:
    """Arithmetic mean of the per-frame hidden states: (T, 32) -> (32,)."""
    return ag.reduce_mean(f_gru, axis=0)


def q_reg(f_avg: Tensor, mu: Tensor, sigma: Tensor) -> Tensor:
    """Mean per-dimension Gaussian kernel of the feature deviation from mu.

    Equals 1 exactly when f_avg == mu elementwise, and decays with
    |f_avg - mu| at the rate set by sigma.
    """
    if np.any(sigma.data <= 0):
        raise InvariantError("sigma must be strictly positive")
    d = ag.sub(f_avg, mu)
    return ag.reduce_mean(ag.exp(ag.neg(ag.div(ag.square(d), ag.square(sigma)))))


def discriminate(x: Tensor, params: DiscriminatorParams) -> Tensor:
    """Probability that x came from the reference Gaussian."""
    h = x
    for w, b in params.hidden:
        h = ag.relu(ag.add(ag.matmul(h, w), b))
    return ag.sigmoid(ag.add(ag.matmul(h, params.head_w), params.head_b))
