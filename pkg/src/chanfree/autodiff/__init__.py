"""Minimal numpy reverse-mode differentiation for the channel-free models."""

from chanfree.autodiff import functional
from chanfree.autodiff.gradcheck import GradCheckReport, grad_check, numerical_grad
from chanfree.autodiff.nn import BatchNorm1d, Conv1d, Embedding, LayerNorm, Linear, Module
from chanfree.autodiff.optim import Adam, TrainSchedule
from chanfree.autodiff.tensor import Param, Tensor, no_grad

__all__ = [
    "functional", "GradCheckReport", "grad_check", "numerical_grad", "BatchNorm1d", "Conv1d",
    "Embedding", "LayerNorm", "Linear", "Module", "Adam", "TrainSchedule", "Param", "Tensor", "no_grad",
]
