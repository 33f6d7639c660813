"""
Anchor generation and anchor/ground truth matching
"""
from collections import namedtuple

import numpy as np

from .boxes import pairwise_iou

POSITIVE = 1
NEGATIVE = 0
IGNORED = -1

AnchorLabels = namedtuple('AnchorLabels', 'labels matched_boxes')

def base_anchors(sizes, ratios):
    """
    Anchor shapes centred on the origin, one per (size, ratio) pair in size-major order

    A ratio is height / width; every anchor keeps the area size * size.

    :param sizes: anchor side lengths in pixels
    :param ratios: aspect ratios
    :returns: numpy [len(sizes) * len(ratios), 4]
    """
    shapes = []
    for size in sizes:
        for ratio in ratios:
            width = size / np.sqrt(ratio)
            height = size * np.sqrt(ratio)
            shapes.append([-0.5 * width, -0.5 * height, 0.5 * width, 0.5 * height])
    return np.array(shapes, dtype=np.float64)

def anchor_grid(feature_height, feature_width, stride, shapes):
    """
    Tile anchor shapes over every feature cell

    The anchor of cell (y, x) is centred on the image pixel position ((x + 0.5) * stride, (y + 0.5) * stride).

    :param feature_height: feature map rows
    :param feature_width: feature map columns
    :param stride: image pixels per feature cell
    :param shapes: numpy [A, 4] from base_anchors()
    :returns: numpy [feature_height * feature_width * A, 4] in (y, x, anchor) order
    """
    centres_y = (np.arange(feature_height) + 0.5) * stride
    centres_x = (np.arange(feature_width) + 0.5) * stride
    grid_y, grid_x = np.meshgrid(centres_y, centres_x, indexing='ij')
    offsets = np.stack([grid_x, grid_y, grid_x, grid_y], axis=-1).reshape(-1, 1, 4)
    return (offsets + shapes[np.newaxis, :, :]).reshape(-1, 4)

def label_anchors(anchors, ground_truth, positive_iou=0.7, negative_iou=0.3, force_best_match=True):
    """
    Classify anchors against ground truth boxes

    An anchor is positive when its best IoU reaches positive_iou, negative when its best IoU is at
    most negative_iou, ignored otherwise.  With force_best_match the best anchor of every ground
    truth box is positive as well, so small boxes always get at least one positive.  Without ground
    truth every anchor is negative.

    :param anchors: numpy [N, 4]
    :param ground_truth: numpy [K, 4]
    :returns: AnchorLabels with labels (numpy [N] of POSITIVE/NEGATIVE/IGNORED) and matched_boxes
        (numpy [N, 4], the best overlapping ground truth box of every anchor)
    """
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    ground_truth = np.asarray(ground_truth, dtype=np.float64).reshape(-1, 4)
    if ground_truth.shape[0] == 0:
        return AnchorLabels(np.full(anchors.shape[0], NEGATIVE, dtype=np.int64), np.zeros_like(anchors))

    overlaps = pairwise_iou(anchors, ground_truth)
    best_box = np.argmax(overlaps, axis=1)
    best_overlap = overlaps[np.arange(anchors.shape[0]), best_box]

    labels = np.full(anchors.shape[0], IGNORED, dtype=np.int64)
    labels[best_overlap <= negative_iou] = NEGATIVE
    labels[best_overlap >= positive_iou] = POSITIVE
    if force_best_match:
        for box_index in range(ground_truth.shape[0]):
            anchor_index = int(np.argmax(overlaps[:, box_index]))
            if overlaps[anchor_index, box_index] > 0.0:
                labels[anchor_index] = POSITIVE
                best_box[anchor_index] = box_index
    return AnchorLabels(labels, ground_truth[best_box])
