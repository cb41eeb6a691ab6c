"""Flow-matching prior: velocity network, training, ODE sampling, denoiser."""

from .field import (
    TrainingDivergedError,
    VelocityField,
    denoise,
    euler_integrate,
    fm_loss,
    interpolate_path,
    loss_gradient,
    sample,
    train,
    zero_field_loss,
)
from .network import Architecture, ConvNet

__all__ = [
    "Architecture",
    "ConvNet",
    "TrainingDivergedError",
    "VelocityField",
    "denoise",
    "euler_integrate",
    "fm_loss",
    "interpolate_path",
    "loss_gradient",
    "sample",
    "train",
    "zero_field_loss",
]
