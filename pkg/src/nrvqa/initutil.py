"""Seeded parameter initialization shared by the model blocks."""

import numpy as np

from nrvqa.autograd import Tensor


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    """Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)
