"""
Multi-slice lesion detection pipeline: boxes, anchors, PSROI pooling, model and losses
"""
from .boxes import Box, Detection, pairwise_iou, encode_deltas, decode_deltas, clip_boxes, nms
from .model import PipelineConfig, SliceDeck, SliceAttentionDetector, group_slices, backbone_forward
from .model import aggregate_features, propose_and_detect
from .loss import detection_loss, LossBreakdown
