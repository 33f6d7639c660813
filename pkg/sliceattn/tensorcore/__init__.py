"""
Minimal dense tensors with reverse-mode automatic differentiation
"""
from .tensor import Tensor, Graph, backward, no_grad, is_grad_enabled
from .ops import conv2d, softmax_over_axis, max_normalize_over_axis, mul, add, scale, relu, reshape, flatten
from .ops import transpose, matmul, concat_along_channel, sum_all, binary_cross_entropy_with_logits, smooth_l1
