"""
(2+1)D lesion detection pipeline

A SliceDeck of 3M slices around a key slice is grouped into M three-channel images.  A shared
convolutional backbone maps every image to a feature plane stack, the dual attention modules
reweight the stack, and the M refined stacks are concatenated along the channel axis.  A region
proposal network and a position-sensitive ROI head then predict scored lesion boxes on the key
slice.
"""
import math
from collections import OrderedDict, namedtuple
from dataclasses import dataclass, field
from logging import getLogger

import numpy as np
from scipy.special import expit

from ..sliceattn_errors import SliceattnConfigError, SliceattnInputError, SliceattnDimensionError
from ..configkeys import ParameterNames
from ..attention import AttentionConfig, AttentionParams, FeatureStack, dual_attention
from ..tensorcore import Tensor, no_grad, conv2d, relu, reshape, transpose, matmul, add
from .anchors import base_anchors, anchor_grid
from .boxes import Box, Detection, decode_deltas, clip_boxes, nms, score_order
from .psroipool import psroi_pool

SLICES_PER_IMAGE = 3

# Layers whose outputs are predictions start with small weights
PREDICTION_LAYERS = ('rpn.cls', 'rpn.reg', 'head.cls', 'head.reg')
PREDICTION_GAIN = 0.1

@dataclass
class PipelineConfig:
    """
    Detection pipeline settings

    num_images is M, the number of three-channel images grouped around the key slice (3M slices).
    The backbone is a stack of 3x3 convolutions with ReLU, one entry per layer in backbone_channels
    and backbone_strides; the total stride is the product of the layer strides.
    """
    num_images: int = 3
    backbone_channels: tuple = (8, 16, 16, 16)
    backbone_strides: tuple = (1, 2, 1, 2)
    anchor_sizes: tuple = (6.0, 12.0, 24.0)
    anchor_ratios: tuple = (0.5, 1.0, 2.0)
    rpn_channels: int = 32
    psroi_bins: int = 3
    psroi_group_channels: int = 8
    hidden_units: int = 64
    pre_nms_top: int = 300
    proposal_nms_iou: float = 0.7
    proposals_per_image: int = 32
    min_proposal_size: float = 2.0
    nms_iou: float = 0.5
    score_threshold: float = 0.0
    detections_per_image: int = 32
    rpn_positive_iou: float = 0.7
    rpn_negative_iou: float = 0.3
    rpn_force_best_match: bool = True
    positive_weight: float = 0.5
    roi_fg_iou: float = 0.5
    roi_bg_iou: float = 0.5
    init_seed: int = 0
    attention: AttentionConfig = field(default_factory=AttentionConfig)

    def __post_init__(self):
        self.backbone_channels = tuple(int(value) for value in self.backbone_channels)
        self.backbone_strides = tuple(int(value) for value in self.backbone_strides)
        self.anchor_sizes = tuple(float(value) for value in self.anchor_sizes)
        self.anchor_ratios = tuple(float(value) for value in self.anchor_ratios)
        if self.num_images < 1 or self.num_images % 2 == 0:
            raise SliceattnConfigError("num_images (M) must be a positive odd integer, got {}".format(self.num_images))
        if not self.backbone_channels or len(self.backbone_channels) != len(self.backbone_strides):
            raise SliceattnConfigError("backbone_channels and backbone_strides need one entry per layer")
        if any(stride not in (1, 2) for stride in self.backbone_strides) or self.stride not in (1, 2, 4):
            raise SliceattnConfigError("Backbone layer strides must be 1 or 2 with a total stride of 1, 2 or 4, "
                                       "got {}".format(self.backbone_strides))
        if self.psroi_bins < 1 or self.psroi_group_channels < 1:
            raise SliceattnConfigError("psroi_bins and psroi_group_channels must be at least 1")
        if not self.anchor_sizes or not self.anchor_ratios or min(self.anchor_sizes + self.anchor_ratios) <= 0:
            raise SliceattnConfigError("Anchor sizes and ratios must be non-empty and positive")
        if not 0.0 < self.positive_weight < 1.0:
            raise SliceattnConfigError("positive_weight must lie in (0, 1), got {}".format(self.positive_weight))
        if self.roi_bg_iou > self.roi_fg_iou or self.rpn_negative_iou > self.rpn_positive_iou:
            raise SliceattnConfigError("Background overlap thresholds must not exceed foreground thresholds")
        if min(self.pre_nms_top, self.proposals_per_image, self.detections_per_image) < 1:
            raise SliceattnConfigError("Proposal and detection counts must be at least 1")

    @property
    def stride(self):
        """
        Total backbone stride in image pixels per feature cell
        """
        return int(np.prod(self.backbone_strides))

    @property
    def slice_count(self):
        """
        3M, the number of slices in a deck
        """
        return SLICES_PER_IMAGE * self.num_images

    @property
    def feature_channels(self):
        """
        D, the channel count of every image's feature stack
        """
        return self.backbone_channels[-1]

    @property
    def anchors_per_cell(self):
        """
        A, anchors per feature cell
        """
        return len(self.anchor_sizes) * len(self.anchor_ratios)

class SliceDeck(object):
    """
    Consecutive CT slices around an annotated key slice

    :param slices: array-like [S, H, W] of intensities
    :param key_index: position of the key slice inside slices
    :param slice_interval_mm: distance between neighbouring slices
    :param volume_id: identifier of the source volume
    :raises SliceattnInputError: on an empty deck or a key index outside the deck
    """

    def __init__(self, slices, key_index, slice_interval_mm=1.0, volume_id=""):
        slices = slices.data if isinstance(slices, Tensor) else np.asarray(slices, dtype=np.float64)
        if slices.ndim != 3 or slices.shape[0] == 0:
            raise SliceattnInputError("A slice deck needs a non-empty [S, H, W] array, got shape {}".format(
                slices.shape))
        if not 0 <= key_index < slices.shape[0]:
            raise SliceattnInputError("Key slice {} outside the deck of {} slices".format(key_index, slices.shape[0]))
        self.slices = Tensor(slices)
        self.key_index = int(key_index)
        self.slice_interval_mm = float(slice_interval_mm)
        self.volume_id = volume_id

    @classmethod
    def from_volume(cls, volume, key_slice, num_images, slice_interval_mm=1.0, volume_id=""):
        """
        Cut the 3M slices centred on key_slice out of a volume, repeating the first or last slice
        where the window extends past the volume

        :param volume: numpy [S, H, W]
        :param key_slice: index of the key slice in the volume
        :param num_images: M
        :raises SliceattnInputError: if key_slice is outside the volume
        """
        volume = np.asarray(volume, dtype=np.float64)
        if volume.ndim != 3 or not 0 <= key_slice < volume.shape[0]:
            raise SliceattnInputError("Key slice {} outside the volume of {} slices".format(
                key_slice, volume.shape[0] if volume.ndim == 3 else 0))
        half = (SLICES_PER_IMAGE * num_images - 1) // 2
        indices = np.clip(np.arange(key_slice - half, key_slice + half + 1), 0, volume.shape[0] - 1)
        return cls(volume[indices], half, slice_interval_mm, volume_id)

    @property
    def slice_count(self):
        """
        Number of slices held
        """
        return self.slices.shape[0]

    @property
    def image_shape(self):
        """
        (H, W) of every slice
        """
        return self.slices.shape[1:]

    @property
    def key_slice(self):
        """
        The annotated slice as numpy [H, W]
        """
        return self.slices.data[self.key_index]

def group_slices(deck, num_images):
    """
    Group the 3M slices around the key slice into M three-channel images

    Image j holds window slices 3j, 3j+1 and 3j+2, so the key slice is the middle channel of the
    middle image.  Window positions before the first or after the last deck slice repeat that slice.

    :param deck: SliceDeck
    :param num_images: M (odd)
    :returns: list of M Tensor [3, H, W]
    :raises SliceattnInputError: if M is not a positive odd integer
    """
    if num_images < 1 or num_images % 2 == 0:
        raise SliceattnInputError("Cannot group a deck into {} images, M must be positive and odd".format(num_images))
    half = (SLICES_PER_IMAGE * num_images - 1) // 2
    window = np.clip(np.arange(deck.key_index - half, deck.key_index + half + 1), 0, deck.slice_count - 1)
    slices = deck.slices.data[window]
    return [Tensor(slices[SLICES_PER_IMAGE * image:SLICES_PER_IMAGE * (image + 1)]) for image in range(num_images)]

def backbone_forward(images, params, config):
    """
    Run the shared backbone on every grouped image

    All M images pass through the same weights as one batch.

    :param images: list of M Tensor [3, H, W]
    :param params: mapping of parameter names to tensors
    :param config: PipelineConfig
    :returns: FeatureStack [M, D, H / stride, W / stride]
    :raises SliceattnDimensionError: if the images differ in shape
    """
    shapes = set(image.shape for image in images)
    if len(shapes) != 1:
        raise SliceattnDimensionError("Backbone images differ in shape: {}".format(sorted(shapes)))
    activations = Tensor(np.stack([image.data for image in images]))
    for layer, stride in enumerate(config.backbone_strides, start=1):
        activations = relu(conv2d(activations, params[ParameterNames.backbone_weight(layer)],
                                  params[ParameterNames.backbone_bias(layer)], stride=stride, padding=1))
    return FeatureStack(activations)

def aggregate_features(stack):
    """
    Concatenate the M refined feature stacks along the channel axis, image 0 first

    :param stack: FeatureStack [M, D, H, W]
    :returns: Tensor [M * D, H, W]
    """
    images, channels, height, width = stack.data.shape
    # Row-major [M, D, H, W] -> [M * D, H, W] is exactly the block layout of a channel concatenation
    return reshape(stack.data, (images * channels, height, width))

def attention_params(params):
    """
    AttentionParams view of the attention entries of a parameter mapping
    """
    return AttentionParams(contextual_weights=params.get(ParameterNames.CONTEXTUAL_WEIGHT),
                           contextual_bias=params.get(ParameterNames.CONTEXTUAL_BIAS),
                           spatial_weights=params.get(ParameterNames.SPATIAL_WEIGHT),
                           spatial_bias=params.get(ParameterNames.SPATIAL_BIAS))

RpnOutput = namedtuple('RpnOutput', 'logits deltas anchors')

def rpn_forward(features, params, config):
    """
    Objectness logits and box deltas for every anchor

    :param features: Tensor [C, H, W]
    :returns: RpnOutput with logits Tensor [H*W*A], deltas Tensor [H*W*A, 4] and anchors numpy
        [H*W*A, 4], all in (y, x, anchor) order
    """
    _, height, width = features.shape
    anchors_per_cell = config.anchors_per_cell
    hidden = relu(conv2d(features, params[ParameterNames.RPN_CONV_WEIGHT], params[ParameterNames.RPN_CONV_BIAS],
                         stride=1, padding=1))
    logits = conv2d(hidden, params[ParameterNames.RPN_CLS_WEIGHT], params[ParameterNames.RPN_CLS_BIAS])
    logits = reshape(transpose(logits, (1, 2, 0)), (height * width * anchors_per_cell,))
    deltas = conv2d(hidden, params[ParameterNames.RPN_REG_WEIGHT], params[ParameterNames.RPN_REG_BIAS])
    deltas = transpose(reshape(deltas, (anchors_per_cell, 4, height, width)), (2, 3, 0, 1))
    deltas = reshape(deltas, (height * width * anchors_per_cell, 4))
    anchors = anchor_grid(height, width, config.stride, base_anchors(config.anchor_sizes, config.anchor_ratios))
    return RpnOutput(logits, deltas, anchors)

def generate_proposals(rpn, image_shape, config):
    """
    Turn RPN outputs into region proposals

    Anchors are moved by their deltas and clipped to the image; proposals narrower or lower than
    min_proposal_size are dropped, the pre_nms_top best scoring survive into NMS at proposal_nms_iou
    and at most proposals_per_image are kept.

    :param rpn: RpnOutput
    :param image_shape: (H, W) of the image in pixels
    :returns: numpy [P, 4] proposals in descending objectness order
    """
    height, width = image_shape
    boxes = clip_boxes(decode_deltas(rpn.anchors, rpn.deltas.data), height, width)
    sizes_ok = np.logical_and(boxes[:, 2] - boxes[:, 0] >= config.min_proposal_size,
                              boxes[:, 3] - boxes[:, 1] >= config.min_proposal_size)
    candidates = np.flatnonzero(sizes_ok)
    if candidates.size == 0:
        return np.zeros((0, 4))
    scores = rpn.logits.data[candidates]
    top = candidates[score_order(scores)[:config.pre_nms_top]]
    keep = nms(boxes[top], rpn.logits.data[top], config.proposal_nms_iou)[:config.proposals_per_image]
    return boxes[top[keep]]

HeadOutput = namedtuple('HeadOutput', 'logits deltas rois')

def head_forward(features, rois, params, config):
    """
    Position-sensitive ROI head

    A 1x1 convolution maps the features to k*k*G score maps, every ROI is pooled into a k*k*G
    vector, one hidden fully connected layer with ReLU follows, and two parallel fully connected
    layers give the lesion logit and the box refinement.

    :param features: Tensor [C, H, W]
    :param rois: numpy [R, 4] regions in image pixels, R >= 1
    :returns: HeadOutput with logits Tensor [R, 1], deltas Tensor [R, 4] and the rois
    """
    score_maps = conv2d(features, params[ParameterNames.PSROI_WEIGHT], params[ParameterNames.PSROI_BIAS])
    pooled = psroi_pool(score_maps, rois, config.stride, config.psroi_bins, config.psroi_group_channels)
    hidden = relu(add(matmul(pooled, params[ParameterNames.FC1_WEIGHT]), params[ParameterNames.FC1_BIAS]))
    logits = add(matmul(hidden, params[ParameterNames.HEAD_CLS_WEIGHT]), params[ParameterNames.HEAD_CLS_BIAS])
    deltas = add(matmul(hidden, params[ParameterNames.HEAD_REG_WEIGHT]), params[ParameterNames.HEAD_REG_BIAS])
    return HeadOutput(logits, deltas, rois)

def detections_from_head(head, image_shape, config, image_id=""):
    """
    Scored, suppressed detections from head outputs

    Scores are the sigmoid of the lesion logits; boxes are the ROIs refined by the head deltas and
    clipped to the image.  Boxes scoring at or below score_threshold or collapsing to zero extent
    are dropped before NMS at nms_iou; at most detections_per_image are returned.

    :returns: list of Detection in descending score order
    """
    height, width = image_shape
    scores = expit(head.logits.data[:, 0])
    boxes = clip_boxes(decode_deltas(head.rois, head.deltas.data), height, width)
    valid = np.flatnonzero((scores > config.score_threshold) &
                           (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1]))
    if valid.size == 0:
        return []
    keep = valid[nms(boxes[valid], scores[valid], config.nms_iou)][:config.detections_per_image]
    return [Detection(Box.from_array(boxes[index]), float(scores[index]), image_id) for index in keep]

def propose_and_detect(features, params, config, image_shape, image_id=""):
    """
    Proposals, ROI head and NMS on aggregated features, without recording a graph

    :param features: Tensor [M * D, H, W]
    :param params: mapping of parameter names to tensors
    :param config: PipelineConfig
    :param image_shape: (H, W) of the key slice in pixels
    :param image_id: identifier copied into every detection
    :returns: list of Detection, possibly empty
    """
    with no_grad():
        rpn = rpn_forward(features, params, config)
        proposals = generate_proposals(rpn, image_shape, config)
        if proposals.shape[0] == 0:
            return []
        head = head_forward(features, proposals, params, config)
        return detections_from_head(head, image_shape, config, image_id)

PipelineOutput = namedtuple('PipelineOutput', 'features fields rpn head proposals')

def _uniform(rng, shape, fan_in, gain=1.0):
    limit = gain * math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)

def parameter_shapes(config):
    """
    Shapes of the parameters a configuration owns, in initialization order

    :param config: PipelineConfig
    :returns: OrderedDict name -> shape
    """
    shapes = OrderedDict()
    in_channels = SLICES_PER_IMAGE
    for layer, out_channels in enumerate(config.backbone_channels, start=1):
        shapes[ParameterNames.backbone_weight(layer)] = (out_channels, in_channels, 3, 3)
        shapes[ParameterNames.backbone_bias(layer)] = (out_channels,)
        in_channels = out_channels
    aggregated = config.num_images * config.feature_channels
    anchors_per_cell = config.anchors_per_cell
    pooled = config.psroi_bins * config.psroi_bins * config.psroi_group_channels
    shapes[ParameterNames.RPN_CONV_WEIGHT] = (config.rpn_channels, aggregated, 3, 3)
    shapes[ParameterNames.RPN_CONV_BIAS] = (config.rpn_channels,)
    shapes[ParameterNames.RPN_CLS_WEIGHT] = (anchors_per_cell, config.rpn_channels, 1, 1)
    shapes[ParameterNames.RPN_CLS_BIAS] = (anchors_per_cell,)
    shapes[ParameterNames.RPN_REG_WEIGHT] = (4 * anchors_per_cell, config.rpn_channels, 1, 1)
    shapes[ParameterNames.RPN_REG_BIAS] = (4 * anchors_per_cell,)
    shapes[ParameterNames.PSROI_WEIGHT] = (pooled, aggregated, 1, 1)
    shapes[ParameterNames.PSROI_BIAS] = (pooled,)
    shapes[ParameterNames.FC1_WEIGHT] = (pooled, config.hidden_units)
    shapes[ParameterNames.FC1_BIAS] = (config.hidden_units,)
    shapes[ParameterNames.HEAD_CLS_WEIGHT] = (config.hidden_units, 1)
    shapes[ParameterNames.HEAD_CLS_BIAS] = (1,)
    shapes[ParameterNames.HEAD_REG_WEIGHT] = (config.hidden_units, 4)
    shapes[ParameterNames.HEAD_REG_BIAS] = (4,)
    kernel = config.attention.attention_conv_kernel
    channels = config.feature_channels
    if config.attention.enable_contextual:
        shapes[ParameterNames.CONTEXTUAL_WEIGHT] = (channels, channels, kernel, kernel)
        shapes[ParameterNames.CONTEXTUAL_BIAS] = (channels,)
    if config.attention.enable_spatial:
        shapes[ParameterNames.SPATIAL_WEIGHT] = (channels, channels, kernel, kernel)
        shapes[ParameterNames.SPATIAL_BIAS] = (channels,)
    return shapes

def initial_parameters(config):
    """
    Freshly initialized parameters

    Weights are drawn in a fixed order from numpy.random.default_rng(init_seed), uniform in
    +-sqrt(6 / fan_in) (scaled down for the prediction layers).  Biases start at zero.  The
    attention convolutions start at zero, which makes them the identity and draws nothing from the
    generator, so enabling attention leaves every other initial value unchanged.

    :param config: PipelineConfig
    :returns: OrderedDict name -> Tensor
    """
    rng = np.random.default_rng(config.init_seed)
    params = OrderedDict()
    for name, shape in parameter_shapes(config).items():
        if ParameterNames.is_attention(name) or ParameterNames.is_bias(name):
            values = np.zeros(shape)
        else:
            # conv weights are [out, in, k, k], fully connected weights are [in, out]
            fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            gain = PREDICTION_GAIN if name.startswith(PREDICTION_LAYERS) else 1.0
            values = _uniform(rng, shape, fan_in, gain)
        params[name] = Tensor(values, requires_grad=True, name=name)
    return params

class SliceAttentionDetector(object):
    """
    The detection pipeline with its parameters

    :param config: PipelineConfig
    :param params: OrderedDict name -> Tensor, freshly initialized when None
    :raises SliceattnConfigError: if the attention parameters do not match the enabled modules
    """

    def __init__(self, config, params=None):
        self.logger = getLogger(__name__)
        self.config = config
        self.params = initial_parameters(config) if params is None else OrderedDict(params)
        expected = parameter_shapes(config)
        if set(self.params) != set(expected):
            raise SliceattnConfigError("Parameters do not match the pipeline configuration; missing {}, "
                                       "unexpected {}".format(sorted(set(expected) - set(self.params)),
                                                              sorted(set(self.params) - set(expected))))
        for name, shape in expected.items():
            if self.params[name].shape != tuple(shape):
                raise SliceattnConfigError("Parameter '{}' has shape {}, the pipeline needs {}".format(
                    name, self.params[name].shape, tuple(shape)))
        self.logger.debug("Detector with %d parameter tensors", len(self.params))

    def parameters(self):
        """
        Parameter tensors in their fixed order
        """
        return list(self.params.values())

    def replicate(self):
        """
        Detector sharing the configuration and holding independent copies of the parameters

        Used to compute the gradients of several samples on separate threads.
        """
        copies = OrderedDict((name, Tensor(tensor.data, requires_grad=True, name=name))
                             for name, tensor in self.params.items())
        return SliceAttentionDetector(self.config, copies)

    def extract_features(self, deck):
        """
        Backbone, dual attention and aggregation for one deck

        :returns: tuple (aggregated features Tensor [M * D, H', W'], list of AttentionField)
        """
        images = group_slices(deck, self.config.num_images)
        stack = backbone_forward(images, self.params, self.config)
        refined, fields = dual_attention(stack, self.config.attention, attention_params(self.params))
        return aggregate_features(refined), fields

    def forward(self, deck, ground_truth=None, proposals=None):
        """
        Full forward pass recording the graph needed by the losses

        Proposals come from the RPN unless given.  Ground truth boxes, when given, are appended to
        the proposals so that the head always sees foreground regions during training.

        :param deck: SliceDeck
        :param ground_truth: numpy [K, 4] boxes or None
        :param proposals: numpy [P, 4] fixed proposals or None
        :returns: PipelineOutput
        """
        features, fields = self.extract_features(deck)
        rpn = rpn_forward(features, self.params, self.config)
        if proposals is None:
            proposals = generate_proposals(rpn, deck.image_shape, self.config)
        rois = np.asarray(proposals, dtype=np.float64).reshape(-1, 4)
        if ground_truth is not None and len(ground_truth):
            rois = np.concatenate([rois, np.asarray(ground_truth, dtype=np.float64).reshape(-1, 4)])
        head = head_forward(features, rois, self.params, self.config) if rois.shape[0] else None
        return PipelineOutput(features, fields, rpn, head, rois)

    def detect(self, deck):
        """
        Detections on the key slice of a deck

        :param deck: SliceDeck
        :returns: list of Detection in descending score order
        """
        with no_grad():
            features, _ = self.extract_features(deck)
            return propose_and_detect(features, self.params, self.config, deck.image_shape, deck.volume_id)

    def attention_fields(self, deck):
        """
        Attention fields produced for a deck, without recording a graph
        """
        with no_grad():
            return self.extract_features(deck)[1]

