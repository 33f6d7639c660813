"""
Cross-slice contextual attention and intra-slice spatial attention

Both modules follow the same recipe on a FeatureStack X of shape [M, D, H, W] (M grouped images):

* a shared same-padding convolution phi maps every X_i from D to D channels (the logits),
* a softmax with temperature normalizes the logits along one axis,
* the softmax weights are divided by their maximum along the same axis so the largest is 1,
* the result reweights the input elementwise.

The contextual module normalizes across the M images for every (d, h, w); the spatial module
normalizes across all H*W positions for every (i, d).  The absolute value in the max
normalization is a no-op after softmax (all weights are positive) but is kept as stated.
"""
from dataclasses import dataclass
from logging import getLogger

import numpy as np

from .sliceattn_errors import SliceattnDimensionError, SliceattnConfigError
from .configkeys import ParameterNames
from .tensorcore import Tensor, conv2d, softmax_over_axis, max_normalize_over_axis, mul, reshape

class AttentionKinds(object):
    """
    Kinds of attention field
    """
    CONTEXTUAL = 'contextual'
    SPATIAL = 'spatial'

@dataclass
class AttentionConfig:
    """
    Attention settings; temperatures default to 2 (contextual) and 3 (spatial)
    """
    contextual_temperature: float = 2.0
    spatial_temperature: float = 3.0
    enable_contextual: bool = True
    enable_spatial: bool = True
    attention_conv_kernel: int = 3

    def __post_init__(self):
        if not self.contextual_temperature > 0 or not self.spatial_temperature > 0:
            raise SliceattnConfigError("Attention temperatures must be positive, got {} and {}".format(
                self.contextual_temperature, self.spatial_temperature))
        if self.attention_conv_kernel < 1 or self.attention_conv_kernel % 2 == 0:
            raise SliceattnConfigError("attention_conv_kernel must be a positive odd integer, got {}".format(
                self.attention_conv_kernel))

class FeatureStack(object):
    """
    Per-image backbone features X_i stacked as a Tensor [M, D, H, W]
    """

    def __init__(self, data):
        if data.ndim != 4 or data.shape[0] < 1:
            raise SliceattnDimensionError("FeatureStack needs a [M, D, H, W] tensor with M >= 1, got {}".format(
                data.shape))
        self.data = data

    @property
    def images(self):
        """
        Number of grouped images M
        """
        return self.data.shape[0]

    @property
    def channels(self):
        """
        Number of feature channels D
        """
        return self.data.shape[1]

    @property
    def spatial_shape(self):
        """
        (H, W) of every feature plane
        """
        return self.data.shape[2:]

class AttentionField(object):
    """
    Normalized attention weights [M, D, H, W] produced by one attention module

    contextual: for every (d, h, w) the maximum over the M images is 1
    spatial: for every (i, d) the maximum over the (h, w) positions is 1
    """

    def __init__(self, weights, kind):
        self.weights = weights
        self.kind = kind

class AttentionParams(object):
    """
    Convolution parameters of phi_C and phi_S

    Only the modules enabled in the config own parameters; a disabled module's entries are None.
    """

    def __init__(self, contextual_weights=None, contextual_bias=None, spatial_weights=None, spatial_bias=None):
        self.contextual_weights = contextual_weights
        self.contextual_bias = contextual_bias
        self.spatial_weights = spatial_weights
        self.spatial_bias = spatial_bias

    @classmethod
    def zeros(cls, channels, config):
        """
        Zero-initialized parameters, so that an untrained module is the identity mapping

        :param channels: feature channel count D
        :param config: AttentionConfig
        """
        kernel = config.attention_conv_kernel
        params = cls()
        if config.enable_contextual:
            params.contextual_weights = Tensor(_zeros(channels, kernel), requires_grad=True,
                                               name=ParameterNames.CONTEXTUAL_WEIGHT)
            params.contextual_bias = Tensor(_zeros(channels), requires_grad=True, name=ParameterNames.CONTEXTUAL_BIAS)
        if config.enable_spatial:
            params.spatial_weights = Tensor(_zeros(channels, kernel), requires_grad=True,
                                            name=ParameterNames.SPATIAL_WEIGHT)
            params.spatial_bias = Tensor(_zeros(channels), requires_grad=True, name=ParameterNames.SPATIAL_BIAS)
        return params

    def tensors(self):
        """
        The parameter tensors that exist, in a fixed order
        """
        candidates = [self.contextual_weights, self.contextual_bias, self.spatial_weights, self.spatial_bias]
        return [tensor for tensor in candidates if tensor is not None]

def _zeros(channels, kernel=None):
    if kernel is None:
        return np.zeros(channels)
    return np.zeros((channels, channels, kernel, kernel))

def _attention_logits(stack, weights, bias):
    kernel = weights.shape[-1]
    logits = conv2d(stack.data, weights, bias, stride=1, padding=kernel // 2)
    if logits.shape != stack.data.shape:
        raise SliceattnDimensionError("Attention convolution maps {} to {}, expected same shape".format(
            stack.data.shape, logits.shape))
    return logits

def contextual_attention(stack, weights, bias, temperature):
    """
    Reweight features across the M grouped images

    C = phi_C(X_i); C' = softmax over the M axis; C'' = C' / max_i |C'|; X' = C'' * X

    :param stack: FeatureStack [M, D, H, W]
    :param weights: phi_C weights [D, D, k, k] (stride 1, same padding)
    :param bias: phi_C bias [D]
    :param temperature: softmax temperature
    :returns: tuple (refined FeatureStack, contextual AttentionField)
    :raises SliceattnDimensionError: if phi_C does not map D channels to D channels
    """
    logits = _attention_logits(stack, weights, bias)
    weights_across_images = softmax_over_axis(logits, 0, temperature)
    field = max_normalize_over_axis(weights_across_images, 0)
    refined = mul(field, stack.data)
    return FeatureStack(refined), AttentionField(field, AttentionKinds.CONTEXTUAL)

def spatial_attention(stack, weights, bias, temperature):
    """
    Reweight the positions of every feature plane

    S = phi_S(X'_i); S' = softmax over all (h, w) of each (i, d); S'' = S' / max_(h,w) |S'|; X'' = S'' * X'

    :param stack: FeatureStack [M, D, H, W]
    :param weights: phi_S weights [D, D, k, k], shared by all M images
    :param bias: phi_S bias [D]
    :param temperature: softmax temperature
    :returns: tuple (refined FeatureStack, spatial AttentionField)
    :raises SliceattnDimensionError: if phi_S does not map D channels to D channels
    """
    logits = _attention_logits(stack, weights, bias)
    images, channels, height, width = logits.shape
    planes = reshape(logits, (images, channels, height * width))
    weights_across_positions = softmax_over_axis(planes, 2, temperature)
    field = reshape(max_normalize_over_axis(weights_across_positions, 2), (images, channels, height, width))
    refined = mul(field, stack.data)
    return FeatureStack(refined), AttentionField(field, AttentionKinds.SPATIAL)

def dual_attention(stack, config, params):
    """
    Contextual attention followed by spatial attention

    A disabled module is the identity.  With both disabled the input stack is returned untouched.

    :param stack: FeatureStack
    :param config: AttentionConfig
    :param params: AttentionParams holding the parameters of the enabled modules
    :returns: tuple (refined FeatureStack, list of the AttentionFields produced, in order)
    """
    logger = getLogger(__name__)
    fields = []
    if (config.enable_contextual and params.contextual_weights is None) or \
            (config.enable_spatial and params.spatial_weights is None):
        raise SliceattnConfigError("An enabled attention module has no parameters")
    if config.enable_contextual:
        stack, field = contextual_attention(stack, params.contextual_weights, params.contextual_bias,
                                            config.contextual_temperature)
        fields.append(field)
    if config.enable_spatial:
        stack, field = spatial_attention(stack, params.spatial_weights, params.spatial_bias,
                                         config.spatial_temperature)
        fields.append(field)
    logger.debug("Dual attention produced %d fields", len(fields))
    return stack, fields
