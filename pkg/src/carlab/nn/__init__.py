"""Minimal deterministic neural-network kernel."""

from carlab.nn.gradcheck import GradCheckResult, StackProbe, grad_check, grad_check_report
from carlab.nn.kernels import BACKEND
from carlab.nn.layers import (
    Conv2D,
    Dense,
    Flatten,
    Layer,
    MeanPool2D,
    ReLU,
    Reshape,
    Sigmoid,
    Upsample2D,
    relu,
    sigmoid,
)
from carlab.nn.losses import bce_loss, mse_loss
from carlab.nn.network import ParamStore, Sequential, corrupt
from carlab.nn.optim import SGD, Adam, OptimizerState, adam_step, sgd_step

__all__ = [
    "BACKEND", "Conv2D", "Dense", "Flatten", "Layer", "MeanPool2D", "ReLU", "Reshape",
    "Sigmoid", "Upsample2D", "relu", "sigmoid", "bce_loss", "mse_loss", "ParamStore",
    "Sequential", "corrupt", "SGD", "Adam", "OptimizerState", "adam_step", "sgd_step",
    "GradCheckResult", "StackProbe", "grad_check", "grad_check_report",
]
