"""
SGD with momentum, L2 weight decay and a step learning rate schedule
"""
from dataclasses import dataclass, field

import numpy as np

from ..sliceattn_errors import SliceattnConfigError, SliceattnTrainingDivergedError
from ..configkeys import ParameterNames

@dataclass
class TrainConfig:
    """
    Training settings

    Epochs are numbered from 1.  The learning rate of epoch e is lr / lr_drop_factor ** n where n
    is the number of entries of lr_drop_epochs below e; with the defaults the rate drops after the
    4th and the 5th epoch.
    """
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 5e-5
    epochs: int = 6
    lr_drop_epochs: list = field(default_factory=lambda: [4, 5])
    lr_drop_factor: float = 10.0
    batch_size: int = 2
    seed: int = 0

    def __post_init__(self):
        self.lr_drop_epochs = [int(epoch) for epoch in self.lr_drop_epochs]
        if self.lr < 0.0:
            raise SliceattnConfigError("lr must not be negative, got {}".format(self.lr))
        if not self.lr_drop_factor > 1.0:
            raise SliceattnConfigError("lr_drop_factor must exceed 1, got {}".format(self.lr_drop_factor))
        if not 0.0 <= self.momentum < 1.0 or self.weight_decay < 0.0:
            raise SliceattnConfigError("momentum must lie in [0, 1) and weight_decay must not be negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise SliceattnConfigError("epochs and batch_size must be at least 1")

def learning_rate(config, epoch):
    """
    Learning rate in effect during epoch (1-based)
    """
    drops = sum(1 for drop in config.lr_drop_epochs if drop < epoch)
    return config.lr / config.lr_drop_factor ** drops

def decays(name):
    """
    True if weight decay applies to the named parameter

    Biases and the attention convolutions are not decayed.
    """
    return not ParameterNames.is_bias(name) and not ParameterNames.is_attention(name)

class SgdState(object):
    """
    Momentum buffers, one per parameter name
    """

    def __init__(self):
        self.velocity = {}

def sgd_step(params, grads, state, config, lr=None):
    """
    One SGD update in place

    v <- momentum * v + grad + weight_decay * param (weights only), param <- param - lr * v

    :param params: mapping name -> Tensor
    :param grads: mapping name -> numpy gradient (a missing entry counts as zero)
    :param state: SgdState, updated in place
    :param config: TrainConfig
    :param lr: learning rate, config.lr when None
    :raises SliceattnTrainingDivergedError: if a gradient holds NaN or Inf; nothing is updated then
    """
    lr = config.lr if lr is None else lr
    for name, grad in grads.items():
        if grad is not None and not np.all(np.isfinite(grad)):
            raise SliceattnTrainingDivergedError("Non-finite gradient for '{}' ({} bad entries)".format(
                name, int(np.sum(~np.isfinite(grad)))))
    for name, tensor in params.items():
        grad = grads.get(name)
        step = np.zeros_like(tensor.data) if grad is None else np.array(grad, dtype=np.float64)
        if decays(name) and config.weight_decay:
            step = step + config.weight_decay * tensor.data
        velocity = state.velocity.get(name)
        if velocity is not None:
            step = config.momentum * velocity + step
        state.velocity[name] = step
        tensor.data = tensor.data - lr * step
