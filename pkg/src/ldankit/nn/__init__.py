"""Small numpy network engine: layers, losses, optimizers, checkpoints."""
from .layers import (
    LayerSpec,
    batchnorm,
    conv3x3,
    dropout,
    fc,
    global_flatten,
    relu,
    residual_block,
    tanh,
)
from .losses import CriticLosses, critic_losses, mse_loss
from .network import Network, Tape, backward, forward
from .optim import OptimState, adadelta, adadelta_step, clip_weights, rmsprop, rmsprop_step

__all__ = [
    "LayerSpec", "batchnorm", "conv3x3", "dropout", "fc", "global_flatten", "relu",
    "residual_block", "tanh", "CriticLosses", "critic_losses", "mse_loss", "Network",
    "Tape", "backward", "forward", "OptimState", "adadelta", "adadelta_step",
    "clip_weights", "rmsprop", "rmsprop_step",
]
