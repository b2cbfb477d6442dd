"""Trainable no-reference video quality model over pre-extracted frame features."""

from nrvqa.autograd import Tensor

__all__ = ["Tensor"]
__version__ = "0.1.0"
