"""
Training: SGD optimizer and the end-to-end training loop
"""
from .optimizer import TrainConfig, SgdState, sgd_step, learning_rate
from .trainer import Trainer, TrainResult, sample_gradients
