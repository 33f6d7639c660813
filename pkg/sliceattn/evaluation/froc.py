"""
Detection matching and free-response ROC analysis

A detection is a true positive when it overlaps a not yet matched ground truth box with IoU
strictly above the threshold.  Detections are matched greedily in descending score order, so
thresholding the scores keeps a prefix of every image's match list; the whole FROC curve therefore
comes from one matching per image followed by a sweep over the distinct scores.
"""
from collections import namedtuple, OrderedDict
from dataclasses import dataclass, field
from logging import getLogger

import numpy as np

from ..sliceattn_errors import SliceattnEvaluationError, SliceattnConfigError
from ..detection.boxes import pairwise_iou, boxes_to_array, score_order

DEFAULT_FP_RATES = (0.5, 1.0, 2.0, 4.0, 8.0, 16.0)
DEFAULT_IOU_THRESHOLD = 0.5

FrocPoint = namedtuple('FrocPoint', 'threshold fp_per_image sensitivity')
MatchResult = namedtuple('MatchResult', 'true_positive ground_truth_hit')

@dataclass
class EvalConfig:
    """
    Evaluation settings

    operating_fp_rate selects the score threshold used for overlays and for the labels of the
    detections file.
    """
    fp_rates: tuple = DEFAULT_FP_RATES
    iou_threshold: float = DEFAULT_IOU_THRESHOLD
    operating_fp_rate: float = 4.0

    def __post_init__(self):
        self.fp_rates = tuple(sorted(float(rate) for rate in self.fp_rates))
        if not self.fp_rates or self.fp_rates[0] < 0.0:
            raise SliceattnConfigError("fp_rates must be a non-empty list of non-negative rates")
        if not 0.0 <= self.iou_threshold < 1.0:
            raise SliceattnConfigError("iou_threshold must lie in [0, 1), got {}".format(self.iou_threshold))

@dataclass
class EvalReport:
    """
    Sensitivity at fixed false positive rates, the FROC curve and optional per-stratum reports
    """
    sensitivity_at: OrderedDict
    froc: list
    image_count: int
    ground_truth_count: int
    strata: OrderedDict = field(default_factory=OrderedDict)

def iou(first, second):
    """
    Intersection over union of two Box
    """
    return float(pairwise_iou(first.as_array(), second.as_array())[0, 0])

def match_detections(detections, ground_truth, iou_threshold=DEFAULT_IOU_THRESHOLD):
    """
    Greedy one-to-one matching of the detections of one image

    Detections are visited by descending score, equal scores in input order.  Each takes the
    unmatched ground truth box it overlaps most (lowest index on ties) if that IoU exceeds
    iou_threshold; every ground truth box is matched at most once.

    :param detections: list of Detection
    :param ground_truth: list of Box
    :returns: MatchResult with true_positive (list of bool per detection, input order) and
        ground_truth_hit (list of bool per ground truth box)
    """
    true_positive = [False] * len(detections)
    hit = [False] * len(ground_truth)
    if not detections or not ground_truth:
        return MatchResult(true_positive, hit)
    overlaps = pairwise_iou(boxes_to_array([detection.box for detection in detections]), boxes_to_array(ground_truth))
    for index in score_order([detection.score for detection in detections]):
        candidates = np.where(np.array(hit), -1.0, overlaps[index])
        best = int(np.argmax(candidates))
        if candidates[best] > iou_threshold:
            hit[best] = True
            true_positive[index] = True
    return MatchResult(true_positive, hit)

def sensitivity_at(curve, fp_rate):
    """
    Step-function readout: the highest sensitivity among curve points with fp_per_image <= fp_rate

    :returns: sensitivity, 0 when no point qualifies
    """
    qualifying = [point.sensitivity for point in curve if point.fp_per_image <= fp_rate]
    return max(qualifying) if qualifying else 0.0

def operating_threshold(curve, fp_rate):
    """
    Lowest score threshold whose fp_per_image stays within fp_rate

    :returns: threshold, or None if even the highest threshold exceeds fp_rate or the curve is empty
    """
    qualifying = [point.threshold for point in curve if point.fp_per_image <= fp_rate]
    return min(qualifying) if qualifying else None

def froc(detections, ground_truth, fp_rates=DEFAULT_FP_RATES, iou_threshold=DEFAULT_IOU_THRESHOLD):
    """
    FROC curve and sensitivities of a set of images

    :param detections: mapping image id -> list of Detection (images without entry have none)
    :param ground_truth: mapping image id -> list of Box, one entry per evaluated image
    :param fp_rates: false positive rates per image to read the sensitivity at
    :param iou_threshold: matching overlap
    :returns: EvalReport; the curve has one point per distinct score, highest threshold first
    :raises SliceattnEvaluationError: if there is no image or no ground truth box
    """
    image_count = len(ground_truth)
    ground_truth_count = sum(len(boxes) for boxes in ground_truth.values())
    if image_count == 0:
        raise SliceattnEvaluationError("FROC needs at least one image")
    if ground_truth_count == 0:
        raise SliceattnEvaluationError("Sensitivity is undefined without ground truth boxes ({} images)".format(
            image_count))

    scores = []
    outcomes = []
    for image_id, boxes in ground_truth.items():
        image_detections = list(detections.get(image_id, []))
        matching = match_detections(image_detections, boxes, iou_threshold)
        scores.extend(detection.score for detection in image_detections)
        outcomes.extend(matching.true_positive)
    scores = np.array(scores, dtype=np.float64)
    outcomes = np.array(outcomes, dtype=bool)

    curve = []
    if scores.size:
        order = score_order(scores)
        sorted_scores = scores[order]
        cumulative_tp = np.cumsum(outcomes[order])
        cumulative_fp = np.cumsum(~outcomes[order])
        # Last position of every distinct score: thresholding at s keeps every score >= s
        ends = np.flatnonzero(np.append(sorted_scores[1:] != sorted_scores[:-1], True))
        for end in ends:
            curve.append(FrocPoint(float(sorted_scores[end]), cumulative_fp[end] / float(image_count),
                                   cumulative_tp[end] / float(ground_truth_count)))

    table = OrderedDict((rate, sensitivity_at(curve, rate)) for rate in fp_rates)
    getLogger(__name__).debug("FROC over %d images, %d boxes, %d detections", image_count, ground_truth_count,
                              scores.size)
    return EvalReport(table, curve, image_count, ground_truth_count)
