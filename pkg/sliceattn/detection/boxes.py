"""
Box types and box arithmetic

Boxes are pixel rectangles [x1, x2) x [y1, y2) (half-open), arrays of boxes are numpy [N, 4]
in (x1, y1, x2, y2) column order.  Width is x2 - x1 and the centre is x1 + width / 2.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from ..sliceattn_errors import SliceattnInputError

# Largest log-scale delta accepted when decoding; exp() of larger values only produces boxes far
# outside any image
DELTA_SCALE_CLAMP = math.log(1000.0 / 16.0)

@dataclass(frozen=True)
class Box:
    """
    Pixel box [x1, x2) x [y1, y2)
    """
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise SliceattnInputError("Invalid box ({}, {}, {}, {}): needs x2 > x1 and y2 > y1".format(
                self.x1, self.y1, self.x2, self.y2))

    @property
    def width(self):
        """
        x2 - x1
        """
        return self.x2 - self.x1

    @property
    def height(self):
        """
        y2 - y1
        """
        return self.y2 - self.y1

    @property
    def area(self):
        """
        Pixel area of the half-open box
        """
        return self.width * self.height

    def as_array(self):
        """
        The box as numpy array [x1, y1, x2, y2]
        """
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)

    @classmethod
    def from_array(cls, values):
        """
        Box from a sequence (x1, y1, x2, y2)
        """
        return cls(float(values[0]), float(values[1]), float(values[2]), float(values[3]))

@dataclass(frozen=True)
class Detection:
    """
    Scored box predicted on the key slice of one image
    """
    box: Box
    score: float
    image_id: str = field(default="")

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise SliceattnInputError("Detection score {} outside [0, 1]".format(self.score))

def boxes_to_array(boxes):
    """
    Stack a list of Box into a numpy [N, 4] array
    """
    if not boxes:
        return np.zeros((0, 4))
    return np.stack([box.as_array() for box in boxes])

def areas(boxes):
    """
    Areas of a [N, 4] box array
    """
    return (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])

def pairwise_iou(first, second):
    """
    Intersection over union of every box in first with every box in second

    :param first: numpy [N, 4]
    :param second: numpy [K, 4]
    :returns: numpy [N, K]
    """
    first = np.asarray(first, dtype=np.float64).reshape(-1, 4)
    second = np.asarray(second, dtype=np.float64).reshape(-1, 4)
    left = np.maximum(first[:, np.newaxis, 0], second[np.newaxis, :, 0])
    top = np.maximum(first[:, np.newaxis, 1], second[np.newaxis, :, 1])
    right = np.minimum(first[:, np.newaxis, 2], second[np.newaxis, :, 2])
    bottom = np.minimum(first[:, np.newaxis, 3], second[np.newaxis, :, 3])
    intersection = np.maximum(right - left, 0.0) * np.maximum(bottom - top, 0.0)
    union = areas(first)[:, np.newaxis] + areas(second)[np.newaxis, :] - intersection
    return np.where(union > 0.0, intersection / np.where(union > 0.0, union, 1.0), 0.0)

def _centre_size(boxes):
    widths = boxes[:, 2] - boxes[:, 0]
    heights = boxes[:, 3] - boxes[:, 1]
    return boxes[:, 0] + 0.5 * widths, boxes[:, 1] + 0.5 * heights, widths, heights

def encode_deltas(references, targets):
    """
    Regression deltas (dx, dy, dw, dh) moving reference boxes onto target boxes

    dx = (cx_t - cx_r) / w_r, dy likewise, dw = log(w_t / w_r), dh likewise

    :param references: numpy [N, 4] anchors or proposals
    :param targets: numpy [N, 4] boxes to reach
    :returns: numpy [N, 4]
    """
    ref_x, ref_y, ref_w, ref_h = _centre_size(np.asarray(references, dtype=np.float64).reshape(-1, 4))
    tgt_x, tgt_y, tgt_w, tgt_h = _centre_size(np.asarray(targets, dtype=np.float64).reshape(-1, 4))
    return np.stack([(tgt_x - ref_x) / ref_w,
                     (tgt_y - ref_y) / ref_h,
                     np.log(tgt_w / ref_w),
                     np.log(tgt_h / ref_h)], axis=1)

def decode_deltas(references, deltas):
    """
    Apply regression deltas to reference boxes, the inverse of encode_deltas()

    :param references: numpy [N, 4]
    :param deltas: numpy [N, 4]
    :returns: numpy [N, 4] boxes
    """
    ref_x, ref_y, ref_w, ref_h = _centre_size(np.asarray(references, dtype=np.float64).reshape(-1, 4))
    deltas = np.asarray(deltas, dtype=np.float64).reshape(-1, 4)
    centre_x = ref_x + deltas[:, 0] * ref_w
    centre_y = ref_y + deltas[:, 1] * ref_h
    widths = ref_w * np.exp(np.minimum(deltas[:, 2], DELTA_SCALE_CLAMP))
    heights = ref_h * np.exp(np.minimum(deltas[:, 3], DELTA_SCALE_CLAMP))
    return np.stack([centre_x - 0.5 * widths,
                     centre_y - 0.5 * heights,
                     centre_x + 0.5 * widths,
                     centre_y + 0.5 * heights], axis=1)

def clip_boxes(boxes, height, width):
    """
    Clip a [N, 4] box array to the image [0, width) x [0, height)
    """
    clipped = np.array(boxes, dtype=np.float64).reshape(-1, 4)
    clipped[:, 0::2] = np.clip(clipped[:, 0::2], 0.0, float(width))
    clipped[:, 1::2] = np.clip(clipped[:, 1::2], 0.0, float(height))
    return clipped

def score_order(scores):
    """
    Indices sorting scores descending; equal scores keep ascending index order
    """
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind='stable')

def nms(boxes, scores, iou_threshold):
    """
    Greedy non-maximum suppression

    Boxes are visited by descending score (ties by ascending index); a box is dropped when its IoU
    with an already kept box reaches iou_threshold.

    :param boxes: numpy [N, 4]
    :param scores: numpy [N]
    :param iou_threshold: suppression overlap
    :returns: numpy array of kept indices, in descending score order
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    order = score_order(scores)
    keep = []
    while order.size > 0:
        current = order[0]
        keep.append(current)
        if order.size == 1:
            break
        overlaps = pairwise_iou(boxes[current:current + 1], boxes[order[1:]])[0]
        order = order[1:][overlaps < iou_threshold]
    return np.array(keep, dtype=np.int64)
