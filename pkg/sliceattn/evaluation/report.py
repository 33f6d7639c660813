"""
Evaluation of a detector on a data set and the report files
"""
import csv
import io
from collections import OrderedDict
from logging import getLogger
from pathlib import Path

from ..sliceattn_errors import SliceattnEvaluationError
from ..synthdata.strata import Criteria, stratify
from ..utils import write_text_atomic
from .froc import froc, match_detections

ALL_STRATUM = 'all'
REPORT_FILENAME = "report.csv"
FROC_FILENAME = "froc.csv"
DETECTIONS_FILENAME = "detections.csv"
REPORT_FIELDS = ('stratum', 'fp_rate', 'sensitivity')
FROC_FIELDS = ('threshold', 'fp_per_image', 'sensitivity')
DETECTIONS_FIELDS = ('volume_id', 'x1', 'y1', 'x2', 'y2', 'score', 'label')

def collect_detections(samples, detect):
    """
    Run a detector over samples

    :param samples: list of Sample
    :param detect: callable Sample -> list of Detection
    :returns: OrderedDict volume id -> list of Detection
    """
    return OrderedDict((sample.volume_id, list(detect(sample))) for sample in samples)

def evaluate_detections(samples, detections, config):
    """
    Overall and per-stratum FROC reports

    Strata are the lesion diameter bins followed by the slice interval bins.  A stratum without
    ground truth boxes is skipped (logged) instead of failing.

    :param samples: list of Sample
    :param detections: mapping volume id -> list of Detection
    :param config: EvalConfig
    :returns: EvalReport of all samples with strata filled in
    :raises SliceattnEvaluationError: if samples is empty or holds no ground truth at all
    """
    logger = getLogger(__name__)
    if not samples:
        raise SliceattnEvaluationError("Nothing to evaluate: the data set is empty")
    ground_truth = OrderedDict((sample.volume_id, list(sample.ground_truth)) for sample in samples)
    report = froc(detections, ground_truth, config.fp_rates, config.iou_threshold)
    for criterion in (Criteria.DIAMETER, Criteria.SLICE_INTERVAL):
        for name, members in stratify(samples, criterion).items():
            stratum_truth = OrderedDict((sample.volume_id, list(sample.ground_truth)) for sample in members)
            if not sum(len(boxes) for boxes in stratum_truth.values()):
                logger.info("Stratum %s %s has no lesions, skipped", criterion, name)
                continue
            report.strata["{}:{}".format(criterion, name)] = froc(detections, stratum_truth, config.fp_rates,
                                                                   config.iou_threshold)
    for name, stratum in [(ALL_STRATUM, report)] + list(report.strata.items()):
        logger.info("%-22s %s", name, "  ".join("{:g}FP {:.3f}".format(rate, value)
                                                for rate, value in stratum.sensitivity_at.items()))
    return report

def _rows_to_csv(fields, rows):
    text = io.StringIO()
    writer = csv.writer(text, lineterminator="\n")
    writer.writerow(fields)
    writer.writerows(rows)
    return text.getvalue()

def format_report(report):
    """
    report.csv content: one row per stratum and false positive rate, overall stratum first
    """
    rows = []
    for name, stratum in [(ALL_STRATUM, report)] + list(report.strata.items()):
        rows.extend([name, "{:g}".format(rate), repr(float(value))] for rate, value in stratum.sensitivity_at.items())
    return _rows_to_csv(REPORT_FIELDS, rows)

def format_froc(report):
    """
    froc.csv content: the overall curve, highest threshold first
    """
    return _rows_to_csv(FROC_FIELDS, [[repr(point.threshold), repr(float(point.fp_per_image)),
                                       repr(float(point.sensitivity))] for point in report.froc])

def format_detections(samples, detections, config):
    """
    detections.csv content with every detection labelled TP or FP by the matching at config.iou_threshold
    """
    rows = []
    for sample in samples:
        image_detections = detections.get(sample.volume_id, [])
        labels = match_detections(image_detections, sample.ground_truth, config.iou_threshold).true_positive
        for detection, positive in zip(image_detections, labels):
            box = detection.box
            rows.append([sample.volume_id, repr(box.x1), repr(box.y1), repr(box.x2), repr(box.y2),
                         repr(detection.score), "TP" if positive else "FP"])
    return _rows_to_csv(DETECTIONS_FIELDS, rows)

def write_report_files(directory, samples, detections, report, config):
    """
    Write report.csv, froc.csv and detections.csv

    :returns: list of the paths written
    """
    directory = Path(directory)
    contents = [(REPORT_FILENAME, format_report(report)), (FROC_FILENAME, format_froc(report)),
                (DETECTIONS_FILENAME, format_detections(samples, detections, config))]
    paths = []
    for filename, text in contents:
        write_text_atomic(directory / filename, text)
        paths.append(directory / filename)
    return paths
