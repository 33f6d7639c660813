"""
Joint classification and box regression losses of the RPN and the ROI head
"""
from collections import namedtuple

import numpy as np

from ..tensorcore import Tensor, add, binary_cross_entropy_with_logits, smooth_l1
from .anchors import label_anchors, POSITIVE, NEGATIVE, IGNORED
from .boxes import encode_deltas, pairwise_iou

LossBreakdown = namedtuple('LossBreakdown', 'rpn_cls rpn_reg head_cls head_reg cls reg total')

def classification_weights(labels, positive_weight):
    """
    Per-element weights of the classification loss

    Positives share positive_weight and negatives share 1 - positive_weight of the total weight.
    When only one kind is present its elements share a total weight of 1, so the loss is their mean
    cross entropy.  Ignored elements get weight 0.

    :param labels: numpy array of POSITIVE / NEGATIVE / IGNORED
    :param positive_weight: share of the positives
    :returns: numpy array of weights
    """
    positives = labels == POSITIVE
    negatives = labels == NEGATIVE
    count_positive = int(positives.sum())
    count_negative = int(negatives.sum())
    weights = np.zeros(labels.shape)
    if count_positive and count_negative:
        weights[positives] = positive_weight / count_positive
        weights[negatives] = (1.0 - positive_weight) / count_negative
    elif count_positive:
        weights[positives] = 1.0 / count_positive
    elif count_negative:
        weights[negatives] = 1.0 / count_negative
    return weights

def regression_targets(references, matched_boxes, positives):
    """
    Deltas from references to their matched boxes for the positive rows, zero elsewhere

    :returns: tuple (targets numpy [N, 4], weights numpy [N, 1] averaging over the positives)
    """
    targets = np.zeros((references.shape[0], 4))
    weights = np.zeros((references.shape[0], 1))
    count = int(positives.sum())
    if count:
        targets[positives] = encode_deltas(references[positives], matched_boxes[positives])
        weights[positives] = 1.0 / count
    return targets, weights

def rpn_loss(rpn, ground_truth, config):
    """
    RPN classification and regression losses

    Anchors are labelled by label_anchors(); without ground truth every anchor is negative and the
    regression loss is zero.

    :param rpn: RpnOutput
    :param ground_truth: numpy [K, 4]
    :param config: PipelineConfig
    :returns: tuple (classification loss, regression loss) scalar Tensors
    """
    matching = label_anchors(rpn.anchors, ground_truth, config.rpn_positive_iou, config.rpn_negative_iou,
                             config.rpn_force_best_match)
    cls_loss = binary_cross_entropy_with_logits(rpn.logits, (matching.labels == POSITIVE).astype(np.float64),
                                                classification_weights(matching.labels, config.positive_weight))
    targets, weights = regression_targets(rpn.anchors, matching.matched_boxes, matching.labels == POSITIVE)
    return cls_loss, smooth_l1(rpn.deltas, targets, weights)

def roi_labels(rois, ground_truth, config):
    """
    Foreground / background labels of head regions

    :returns: tuple (labels numpy [R], best overlapping ground truth box numpy [R, 4])
    """
    if ground_truth.shape[0] == 0:
        return np.full(rois.shape[0], NEGATIVE, dtype=np.int64), np.zeros_like(rois)
    overlaps = pairwise_iou(rois, ground_truth)
    best = np.argmax(overlaps, axis=1)
    best_overlap = overlaps[np.arange(rois.shape[0]), best]
    labels = np.full(rois.shape[0], IGNORED, dtype=np.int64)
    labels[best_overlap < config.roi_bg_iou] = NEGATIVE
    labels[best_overlap >= config.roi_fg_iou] = POSITIVE
    return labels, ground_truth[best]

def head_loss(head, ground_truth, config):
    """
    ROI head classification and regression losses

    :param head: HeadOutput
    :param ground_truth: numpy [K, 4]
    :param config: PipelineConfig
    :returns: tuple (classification loss, regression loss) scalar Tensors
    """
    labels, matched = roi_labels(head.rois, ground_truth, config)
    targets = (labels == POSITIVE).astype(np.float64).reshape(-1, 1)
    weights = classification_weights(labels, config.positive_weight).reshape(-1, 1)
    cls_loss = binary_cross_entropy_with_logits(head.logits, targets, weights)
    reg_targets, reg_weights = regression_targets(head.rois, matched, labels == POSITIVE)
    return cls_loss, smooth_l1(head.deltas, reg_targets, reg_weights)

def _zero():
    return Tensor(np.array(0.0))

def detection_loss(output, ground_truth, config):
    """
    Summed RPN and head losses of one forward pass

    :param output: PipelineOutput
    :param ground_truth: numpy [K, 4] boxes on the key slice, possibly empty
    :param config: PipelineConfig
    :returns: LossBreakdown of scalar Tensors; total is the value to differentiate
    """
    ground_truth = np.asarray(ground_truth, dtype=np.float64).reshape(-1, 4)
    rpn_cls, rpn_reg = rpn_loss(output.rpn, ground_truth, config)
    if output.head is None:
        head_cls, head_reg = _zero(), _zero()
    else:
        head_cls, head_reg = head_loss(output.head, ground_truth, config)
    cls_loss = add(rpn_cls, head_cls)
    reg_loss = add(rpn_reg, head_reg)
    return LossBreakdown(rpn_cls, rpn_reg, head_cls, head_reg, cls_loss, reg_loss, add(cls_loss, reg_loss))
