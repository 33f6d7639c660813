"""
Colour overlays of detections on the key slice, written as binary PPM (P6) images
"""
import math

import numpy as np

from ..utils import write_bytes_atomic
from .froc import match_detections

GROUND_TRUTH_COLOUR = (0, 0, 255)
TRUE_POSITIVE_COLOUR = (0, 255, 0)
FALSE_POSITIVE_COLOUR = (255, 0, 0)

def encode_ppm(rgb):
    """
    Binary PPM bytes of a uint8 [H, W, 3] image
    """
    height, width, _ = rgb.shape
    return "P6\n{} {}\n255\n".format(width, height).encode("ascii") + np.ascontiguousarray(rgb, dtype=np.uint8).tobytes()

def grey_to_rgb(image):
    """
    [H, W] intensities in [0, 1] as a uint8 [H, W, 3] grey image
    """
    grey = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    return np.repeat(grey[:, :, np.newaxis], 3, axis=2)

def draw_box(rgb, box, colour):
    """
    Draw the one pixel outline of a box in place, clipped to the image
    """
    height, width, _ = rgb.shape
    left = min(max(int(math.floor(box.x1)), 0), width - 1)
    top = min(max(int(math.floor(box.y1)), 0), height - 1)
    right = min(max(int(math.ceil(box.x2)) - 1, left), width - 1)
    bottom = min(max(int(math.ceil(box.y2)) - 1, top), height - 1)
    rgb[top, left:right + 1] = colour
    rgb[bottom, left:right + 1] = colour
    rgb[top:bottom + 1, left] = colour
    rgb[top:bottom + 1, right] = colour

def render_overlay(sample, detections, threshold, iou_threshold):
    """
    Key slice with ground truth and the detections scoring at least threshold

    Ground truth is drawn first so that detections on top of it stay visible.

    :param threshold: score threshold of the operating point, None draws no detections
    :returns: uint8 [H, W, 3]
    """
    rgb = grey_to_rgb(sample.deck.key_slice)
    for box in sample.ground_truth:
        draw_box(rgb, box, GROUND_TRUTH_COLOUR)
    kept = [] if threshold is None else [detection for detection in detections if detection.score >= threshold]
    labels = match_detections(kept, sample.ground_truth, iou_threshold).true_positive
    for detection, positive in zip(kept, labels):
        draw_box(rgb, detection.box, TRUE_POSITIVE_COLOUR if positive else FALSE_POSITIVE_COLOUR)
    return rgb

def write_overlay(path, sample, detections, threshold, iou_threshold):
    """
    Write render_overlay() as a PPM file
    """
    write_bytes_atomic(path, encode_ppm(render_overlay(sample, detections, threshold, iou_threshold)))
