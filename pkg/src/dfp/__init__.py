"""Discriminative filter prediction for tracking: a learnable regularized
least-squares loss over score maps, a steepest-descent model optimizer with
Gauss-Newton step lengths, a pooling-based filter initializer, and the
online tracking loop built on top of them."""

__version__ = "0.1.0"

from .numerics import BACKEND  # noqa: F401
