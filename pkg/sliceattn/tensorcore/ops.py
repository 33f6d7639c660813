"""
Differentiable tensor operations

Every function takes Tensor inputs, computes the forward result with numpy and records a backward
closure on the result (see Tensor.from_op).  Broadcasting is limited to what the attention and
detection heads need: add() expands a trailing-shape operand (bias rows), the normalizations expand
their axis-wise reductions internally.  Everything else needs identical shapes.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from ..sliceattn_errors import SliceattnDimensionError, SliceattnContractError
from ..sliceattn_errors import SliceattnDegenerateNormalizationError
from .tensor import Tensor

# Softmax entries are kept at or above the smallest normal float64 so that they stay strictly
# positive when exp() underflows for logits far below the axis maximum
SOFTMAX_FLOOR = np.finfo(np.float64).tiny

def _normalize_axis(axis, ndim, op):
    if not -ndim <= axis < ndim:
        raise SliceattnDimensionError("{}: axis {} out of range for rank {}".format(op, axis, ndim))
    return axis % ndim

def _check_same_shape(first, second, op):
    if first.shape != second.shape:
        raise SliceattnDimensionError("{}: shape mismatch {} vs {}".format(op, first.shape, second.shape))

def conv2d(inputs, weights, bias=None, stride=1, padding=0):
    """
    2D cross-correlation with zero padding

    The input is either a single image [C_in, H, W] or a batch [N, C_in, H, W] sharing the weights.

    :param inputs: Tensor [C_in, H, W] or [N, C_in, H, W]
    :param weights: Tensor [C_out, C_in, k, k]
    :param bias: Tensor [C_out] or None
    :param stride: positive step between output cells
    :param padding: zero rows/columns added on every side
    :returns: Tensor [C_out, H', W'] (or [N, C_out, H', W']) with H' = (H + 2*padding - k) // stride + 1
    :raises SliceattnDimensionError: on incompatible shapes or a kernel larger than the padded input
    """
    batched = inputs.ndim == 4
    if inputs.ndim not in (3, 4) or weights.ndim != 4:
        raise SliceattnDimensionError("conv2d: expected input rank 3 or 4 and weight rank 4, got {} and {}".format(
            inputs.ndim, weights.ndim))
    if stride < 1 or padding < 0:
        raise SliceattnDimensionError("conv2d: invalid stride {} or padding {}".format(stride, padding))
    images = inputs.data if batched else inputs.data[np.newaxis]
    _, channels, height, width = images.shape
    out_channels, weight_channels, kernel, kernel_w = weights.shape
    if weight_channels != channels:
        raise SliceattnDimensionError("conv2d: weights expect {} input channels, input has {}".format(
            weight_channels, channels))
    if kernel != kernel_w:
        raise SliceattnDimensionError("conv2d: only square kernels are supported, got {}x{}".format(kernel, kernel_w))
    if kernel > height + 2 * padding or kernel > width + 2 * padding:
        raise SliceattnDimensionError("conv2d: kernel {} larger than padded input {}x{}".format(
            kernel, height + 2 * padding, width + 2 * padding))
    if bias is not None and bias.shape != (out_channels,):
        raise SliceattnDimensionError("conv2d: bias shape {} does not match {} output channels".format(
            bias.shape, out_channels))

    out_height = (height + 2 * padding - kernel) // stride + 1
    out_width = (width + 2 * padding - kernel) // stride + 1
    padded = np.pad(images, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    # windows[n, c, y, x, i, j] = padded[n, c, y*stride + i, x*stride + j]
    windows = sliding_window_view(padded, (kernel, kernel), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride][:, :, :out_height, :out_width]
    result = np.tensordot(windows, weights.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        result = result + bias.data[np.newaxis, :, np.newaxis, np.newaxis]
    result = np.ascontiguousarray(result)

    def _backward(grad):
        grad4 = grad if batched else grad[np.newaxis]
        grad_weights = np.tensordot(grad4, windows, axes=([0, 2, 3], [0, 2, 3]))
        grad_bias = grad4.sum(axis=(0, 2, 3)) if bias is not None else None
        # cols[n, y, x, c, i, j]: contribution of output cell (y, x) to input tap (i, j)
        cols = np.tensordot(grad4, weights.data, axes=([1], [0]))
        grad_padded = np.zeros_like(padded)
        for i in range(kernel):
            for j in range(kernel):
                grad_padded[:, :, i:i + stride * out_height:stride, j:j + stride * out_width:stride] += \
                    cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        grad_inputs = grad_padded[:, :, padding:padding + height, padding:padding + width]
        if not batched:
            grad_inputs = grad_inputs[0]
        return (grad_inputs, grad_weights, grad_bias)

    parents = (inputs, weights) if bias is None else (inputs, weights, bias)
    return Tensor.from_op(result if batched else result[0], parents, _backward, "conv2d")

def softmax_over_axis(inputs, axis, temperature=1.0):
    """
    Softmax along one axis with temperature

    Logits are divided by the temperature, shifted by their axis-wise maximum and exponentiated.

    :param inputs: Tensor of logits
    :param axis: axis to normalize over
    :param temperature: positive temperature; large values flatten the distribution
    :returns: Tensor of the same shape whose entries along axis are positive and sum to 1
    :raises SliceattnDimensionError: if axis is out of range
    :raises SliceattnContractError: if temperature is not positive
    """
    if not temperature > 0:
        raise SliceattnContractError("softmax_over_axis: temperature must be positive, got {}".format(temperature))
    axis = _normalize_axis(axis, inputs.ndim, "softmax_over_axis")
    scaled = inputs.data / temperature
    shifted = scaled - scaled.max(axis=axis, keepdims=True)
    exponentials = np.exp(shifted)
    probabilities = exponentials / exponentials.sum(axis=axis, keepdims=True)
    probabilities = np.maximum(probabilities, SOFTMAX_FLOOR)

    def _backward(grad):
        inner = (grad * probabilities).sum(axis=axis, keepdims=True)
        return (probabilities * (grad - inner) / temperature,)

    return Tensor.from_op(probabilities, (inputs,), _backward, "softmax_over_axis")

def max_normalize_over_axis(inputs, axis):
    """
    Divide by the axis-wise maximum absolute value

    :param inputs: Tensor
    :param axis: axis to normalize over
    :returns: Tensor of the same shape whose maximum absolute value along axis is 1
    :raises SliceattnDimensionError: if axis is out of range
    :raises SliceattnDegenerateNormalizationError: if an axis slice is all zero
    """
    axis = _normalize_axis(axis, inputs.ndim, "max_normalize_over_axis")
    magnitude = np.abs(inputs.data)
    peak_index = np.expand_dims(np.argmax(magnitude, axis=axis), axis)
    peak = np.take_along_axis(magnitude, peak_index, axis=axis)
    if np.any(peak == 0.0):
        raise SliceattnDegenerateNormalizationError(
            "max_normalize_over_axis: {} all-zero slices along axis {}".format(int(np.sum(peak == 0.0)), axis))
    result = inputs.data / peak

    def _backward(grad):
        grad_inputs = grad / peak
        # The peak element also scales every other element of its slice
        peak_sign = np.take_along_axis(np.sign(inputs.data), peak_index, axis=axis)
        through_peak = -(grad * inputs.data).sum(axis=axis, keepdims=True) * peak_sign / (peak * peak)
        selector = np.zeros_like(inputs.data)
        np.put_along_axis(selector, peak_index, 1.0, axis=axis)
        return (grad_inputs + selector * through_peak,)

    return Tensor.from_op(result, (inputs,), _backward, "max_normalize_over_axis")

def mul(first, second):
    """
    Elementwise product of two tensors of identical shape
    """
    _check_same_shape(first, second, "mul")

    def _backward(grad):
        return (grad * second.data, grad * first.data)

    return Tensor.from_op(first.data * second.data, (first, second), _backward, "mul")

def add(first, second):
    """
    Elementwise sum

    second either has the shape of first or the shape of first's trailing axes (a bias row added
    to every leading index).
    """
    trailing = first.shape[first.ndim - second.ndim:] if second.ndim <= first.ndim else None
    if trailing != second.shape:
        raise SliceattnDimensionError("add: shape mismatch {} vs {}".format(first.shape, second.shape))
    leading_axes = tuple(range(first.ndim - second.ndim))

    def _backward(grad):
        return (grad, grad.sum(axis=leading_axes) if leading_axes else grad)

    return Tensor.from_op(first.data + second.data, (first, second), _backward, "add")

def scale(inputs, factor):
    """
    Multiply by a constant
    """
    factor = float(factor)

    def _backward(grad):
        return (grad * factor,)

    return Tensor.from_op(inputs.data * factor, (inputs,), _backward, "scale")

def relu(inputs):
    """
    Rectified linear unit
    """
    active = inputs.data > 0.0

    def _backward(grad):
        return (grad * active,)

    return Tensor.from_op(np.where(active, inputs.data, 0.0), (inputs,), _backward, "relu")

def reshape(inputs, shape):
    """
    Same data in a new shape (row-major order is kept)
    """
    try:
        result = inputs.data.reshape(shape)
    except ValueError as error:
        raise SliceattnDimensionError("reshape: {}".format(error))
    original = inputs.shape

    def _backward(grad):
        return (grad.reshape(original),)

    return Tensor.from_op(result, (inputs,), _backward, "reshape")

def flatten(inputs, start_axis=0):
    """
    Merge all axes from start_axis on into one
    """
    start_axis = _normalize_axis(start_axis, max(inputs.ndim, 1), "flatten")
    return reshape(inputs, inputs.shape[:start_axis] + (-1,))

def transpose(inputs, axes):
    """
    Permute the axes
    """
    axes = tuple(axes)
    if sorted(axes) != list(range(inputs.ndim)):
        raise SliceattnDimensionError("transpose: {} is not a permutation of {} axes".format(axes, inputs.ndim))
    inverse = tuple(np.argsort(axes))

    def _backward(grad):
        return (grad.transpose(inverse),)

    return Tensor.from_op(np.ascontiguousarray(inputs.data.transpose(axes)), (inputs,), _backward, "transpose")

def matmul(first, second):
    """
    Matrix product [m, k] x [k, n] -> [m, n]
    """
    if first.ndim != 2 or second.ndim != 2 or first.shape[1] != second.shape[0]:
        raise SliceattnDimensionError("matmul: incompatible shapes {} and {}".format(first.shape, second.shape))

    def _backward(grad):
        return (grad @ second.data.T, first.data.T @ grad)

    return Tensor.from_op(first.data @ second.data, (first, second), _backward, "matmul")

def concat_along_channel(inputs):
    """
    Concatenate tensors along their first (channel) axis

    :param inputs: list of Tensor [D_i, H, W]
    :returns: Tensor [sum(D_i), H, W] with the blocks in list order
    """
    if not inputs:
        raise SliceattnDimensionError("concat_along_channel: nothing to concatenate")
    trailing = inputs[0].shape[1:]
    for tensor in inputs:
        if tensor.ndim != inputs[0].ndim or tensor.shape[1:] != trailing:
            raise SliceattnDimensionError("concat_along_channel: shape {} does not match {}".format(
                tensor.shape, inputs[0].shape))
    boundaries = np.cumsum([tensor.shape[0] for tensor in inputs])[:-1]

    def _backward(grad):
        return tuple(np.split(grad, boundaries, axis=0))

    result = np.concatenate([tensor.data for tensor in inputs], axis=0)
    return Tensor.from_op(result, tuple(inputs), _backward, "concat_along_channel")

def sum_all(inputs):
    """
    Sum of all elements as a scalar tensor
    """
    shape = inputs.shape

    def _backward(grad):
        return (np.broadcast_to(grad, shape).copy(),)

    return Tensor.from_op(np.array(inputs.data.sum()), (inputs,), _backward, "sum_all")

def binary_cross_entropy_with_logits(logits, targets, weights):
    """
    Weighted binary cross entropy computed from logits

    loss = sum(weights * (max(x, 0) - x * t + log(1 + exp(-|x|)))), which never overflows

    :param logits: Tensor of raw scores
    :param targets: numpy array of 0/1 labels, same shape as logits
    :param weights: numpy array of per-element weights (0 ignores an element), same shape
    :returns: scalar Tensor
    """
    targets = np.asarray(targets, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if targets.shape != logits.shape or weights.shape != logits.shape:
        raise SliceattnDimensionError("binary_cross_entropy_with_logits: shapes {}, {}, {} differ".format(
            logits.shape, targets.shape, weights.shape))
    values = logits.data
    elementwise = np.maximum(values, 0.0) - values * targets + np.log1p(np.exp(-np.abs(values)))

    def _backward(grad):
        return (grad * weights * (expit(values) - targets),)

    return Tensor.from_op(np.array(np.sum(weights * elementwise)), (logits,), _backward,
                          "binary_cross_entropy_with_logits")

def smooth_l1(predictions, targets, weights, beta=1.0 / 9.0):
    """
    Weighted smooth-L1 (Huber) loss

    Quadratic below beta, linear above.

    :param predictions: Tensor [N, 4]
    :param targets: numpy array [N, 4]
    :param weights: numpy array broadcastable to [N, 4] (typically [N, 1])
    :param beta: transition point
    :returns: scalar Tensor
    """
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != predictions.shape:
        raise SliceattnDimensionError("smooth_l1: shapes {} and {} differ".format(predictions.shape, targets.shape))
    try:
        weights = np.broadcast_to(np.asarray(weights, dtype=np.float64), predictions.shape)
    except ValueError:
        raise SliceattnDimensionError("smooth_l1: weights do not broadcast to {}".format(predictions.shape))
    difference = predictions.data - targets
    magnitude = np.abs(difference)
    quadratic = magnitude < beta
    elementwise = np.where(quadratic, 0.5 * difference * difference / beta, magnitude - 0.5 * beta)

    def _backward(grad):
        return (grad * weights * np.where(quadratic, difference / beta, np.sign(difference)),)

    return Tensor.from_op(np.array(np.sum(weights * elementwise)), (predictions,), _backward, "smooth_l1")
