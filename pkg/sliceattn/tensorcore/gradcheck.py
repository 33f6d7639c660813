"""
Finite difference verification of analytic gradients

Central differences with step eps are compared against the gradients backward() produces.  The
error is norm-wise per tensor, so tiny individual entries dominated by round-off do not fail the
check.  The norm scaling the error is floored, so a tensor whose exact gradient is zero (e.g. a
bias constant along a softmax axis) is judged by the absolute size of its round-off.
"""
from collections import namedtuple
from logging import getLogger

import numpy as np

from .tensor import backward, no_grad

DEFAULT_STEP = 1e-5
# Gradient norms below this are compared in absolute terms
DEFAULT_NORM_FLOOR = 1e-4

GradcheckResult = namedtuple('GradcheckResult', 'name relative_error checked passed')

def relative_error(analytic, numeric, norm_floor=DEFAULT_NORM_FLOOR):
    """
    Norm-wise relative error ||analytic - numeric|| / max(||analytic||, ||numeric||, norm_floor)

    :param analytic: array of analytic gradient entries
    :param numeric: array of finite difference estimates for the same entries
    :param norm_floor: smallest norm the difference is scaled by
    :returns: relative error
    :rtype: float
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), norm_floor)
    return float(np.linalg.norm(analytic - numeric) / scale)

def numerical_gradient(func, tensor, indices, step=DEFAULT_STEP):
    """
    Central difference estimate of d func() / d tensor at the given flat indices

    The tensor is perturbed in place and restored afterwards.

    :param func: callable returning a scalar Tensor, reading tensor's current content
    :param tensor: Tensor to perturb
    :param indices: flat indices to estimate
    :param step: finite difference step
    :returns: numpy array of estimates, one per index
    """
    tensor.data = np.ascontiguousarray(tensor.data)
    flat = tensor.data.reshape(-1)
    estimates = np.empty(len(indices))
    with no_grad():
        for position, index in enumerate(indices):
            original = flat[index]
            flat[index] = original + step
            plus = func().item()
            flat[index] = original - step
            minus = func().item()
            flat[index] = original
            estimates[position] = (plus - minus) / (2.0 * step)
    return estimates

def gradcheck(func, tensors, step=DEFAULT_STEP, tolerance=1e-4, max_samples=None, seed=0,
              norm_floor=DEFAULT_NORM_FLOOR):
    """
    Compare analytic and finite difference gradients of func() for each tensor

    :param func: callable without arguments returning a scalar Tensor computed from tensors
    :param tensors: list of leaf tensors with requires_grad set
    :param step: finite difference step
    :param tolerance: maximum accepted relative error
    :param max_samples: check at most this many seeded random entries per tensor (None checks all)
    :param seed: seed for the entry sampling
    :param norm_floor: smallest gradient norm the error is scaled by
    :returns: list of GradcheckResult, one per tensor
    """
    logger = getLogger(__name__)
    for tensor in tensors:
        tensor.zero_grad()
    backward(func())
    rng = np.random.default_rng(seed)

    results = []
    for number, tensor in enumerate(tensors):
        name = tensor.name or "tensor{}".format(number)
        analytic = np.zeros(tensor.size) if tensor.grad is None else np.asarray(tensor.grad).reshape(-1)
        if max_samples is None or tensor.size <= max_samples:
            indices = np.arange(tensor.size)
        else:
            indices = np.sort(rng.choice(tensor.size, size=max_samples, replace=False))
        numeric = numerical_gradient(func, tensor, indices, step)
        error = relative_error(analytic[indices], numeric, norm_floor)
        results.append(GradcheckResult(name, error, len(indices), error < tolerance))
        logger.info("Gradient check %s: relative error %.3e over %d entries", name, error, len(indices))
    return results
