# The intention is to make the test names descriptive enough to not need any docstrings for most of them
#pylint: disable=missing-docstring
import os
import shutil
import tempfile
import unittest
from collections import OrderedDict
from pathlib import Path

import numpy as np
from parameterized import parameterized

from sliceattn.backend import oracle_detections
from sliceattn.detection.boxes import Box, Detection, pairwise_iou, score_order
from sliceattn.detection.model import SliceDeck
from sliceattn.evaluation.froc import EvalConfig, match_detections, froc, sensitivity_at, operating_threshold
from sliceattn.evaluation.froc import FrocPoint
from sliceattn.evaluation.overlay import render_overlay, encode_ppm, GROUND_TRUTH_COLOUR, TRUE_POSITIVE_COLOUR
from sliceattn.evaluation.overlay import FALSE_POSITIVE_COLOUR
from sliceattn.evaluation.report import evaluate_detections, collect_detections, write_report_files
from sliceattn.evaluation.report import REPORT_FILENAME, FROC_FILENAME, DETECTIONS_FILENAME
from sliceattn.sliceattn_errors import SliceattnEvaluationError, SliceattnConfigError
from sliceattn.synthdata.phantom import Sample

TESTFILE_FOLDER = os.path.realpath(os.path.normpath("{}//testsliceattnevaluation".format(tempfile.gettempdir())))

LESION = Box(0.0, 0.0, 10.0, 10.0)

def detection(x1, y1, x2, y2, score, image_id=""):
    return Detection(Box(float(x1), float(y1), float(x2), float(y2)), score, image_id)

def make_sample(volume_id, boxes, diameter=5.0, slice_interval_mm=1.0, size=16):
    deck = SliceDeck(np.full((3, size, size), 0.5), 1, slice_interval_mm, volume_id)
    return Sample(deck, list(boxes), diameter, 1, slice_interval_mm, volume_id)

def hand_fixture():
    """
    Five images, five lesions and eight detections

    Threshold sweep (TP, FP): 0.95 (1, 0), 0.9 (2, 0), 0.8 (2, 1), 0.7 (2, 2), 0.6 (3, 2), 0.5 (3, 3),
    0.4 (4, 4)
    """
    ground_truth = OrderedDict([
        ('a', [LESION]),
        ('b', [LESION, Box(20.0, 20.0, 30.0, 30.0)]),
        ('c', [LESION]),
        ('d', []),
        ('e', [LESION]),
    ])
    detections = {
        'a': [detection(0, 0, 10, 10, 0.95), detection(0, 0, 10, 10, 0.7)],
        'b': [detection(20, 20, 30, 30, 0.9), detection(0, 0, 10, 10, 0.4)],
        'c': [detection(1, 1, 11, 11, 0.6), detection(50, 50, 60, 60, 0.4)],
        'd': [detection(0, 0, 5, 5, 0.8)],
        'e': [detection(0, 0, 10, 3, 0.5)],
    }
    return detections, ground_truth

def brute_force_match(detections, ground_truth, iou_threshold):
    """
    Enumerate every one-to-one assignment and keep the one that is best for the highest scoring
    detection first, then the next (higher IoU first, lower box index on ties)
    """
    overlaps = pairwise_iou(np.array([d.box.as_array() for d in detections]).reshape(-1, 4),
                            np.array([box.as_array() for box in ground_truth]).reshape(-1, 4))
    order = list(score_order([d.score for d in detections]))
    best_key, best_assignment = None, None

    def search(position, used, key, assignment):
        nonlocal best_key, best_assignment
        if position == len(order):
            if best_key is None or key > best_key:
                best_key, best_assignment = key, dict(assignment)
            return
        index = order[position]
        search(position + 1, used, key + ((-1.0, 0),), assignment)
        for box in range(len(ground_truth)):
            if box not in used and overlaps[index, box] > iou_threshold:
                assignment[index] = box
                search(position + 1, used | {box}, key + ((overlaps[index, box], -box),), assignment)
                del assignment[index]

    search(0, frozenset(), (), {})
    return [index in best_assignment for index in range(len(detections))]

class TestMatching(unittest.TestCase):

    def test_iou_must_exceed_threshold(self):
        # IoU of exactly one half does not match
        result = match_detections([detection(0, 0, 10, 5, 0.9)], [LESION], 0.5)
        self.assertEqual(result.true_positive, [False])
        self.assertEqual(result.ground_truth_hit, [False])

    def test_every_lesion_matches_once(self):
        result = match_detections([detection(0, 0, 10, 10, 0.5), detection(0, 0, 10, 10, 0.9)], [LESION], 0.5)
        self.assertEqual(result.true_positive, [False, True])
        self.assertEqual(result.ground_truth_hit, [True])

    def test_detection_takes_the_best_overlapping_lesion(self):
        lesions = [Box(0.0, 0.0, 10.0, 10.0), Box(1.0, 0.0, 11.0, 10.0)]
        result = match_detections([detection(1, 0, 11, 10, 0.9), detection(0, 0, 10, 10, 0.8)], lesions, 0.5)
        self.assertEqual(result.true_positive, [True, True])

    def test_crafted_three_detection_fixture_matches_enumeration(self):
        lesions = [Box(0.0, 0.0, 10.0, 10.0), Box(4.0, 0.0, 14.0, 10.0)]
        detections = [detection(2, 0, 12, 10, 0.9), detection(0, 0, 10, 10, 0.8), detection(4, 0, 14, 10, 0.7)]
        result = match_detections(detections, lesions, 0.5)
        self.assertEqual(result.true_positive, brute_force_match(detections, lesions, 0.5))
        self.assertEqual(result.true_positive, [True, False, True])

    def test_matching_equals_enumeration_on_random_fixtures(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            lesions = []
            for _ in range(int(rng.integers(1, 4))):
                x1, y1 = rng.integers(0, 6, size=2)
                lesions.append(Box(float(x1), float(y1), float(x1 + rng.integers(2, 6)), float(y1 + rng.integers(2, 6))))
            detections = []
            for _ in range(int(rng.integers(0, 5))):
                x1, y1 = rng.integers(0, 6, size=2)
                detections.append(detection(float(x1), float(y1), float(x1 + rng.integers(2, 6)),
                                            float(y1 + rng.integers(2, 6)), float(rng.choice([0.3, 0.5, 0.9]))))
            self.assertEqual(match_detections(detections, lesions, 0.5).true_positive,
                             brute_force_match(detections, lesions, 0.5))

class TestFroc(unittest.TestCase):

    def test_hand_fixture_curve(self):
        detections, ground_truth = hand_fixture()
        report = froc(detections, ground_truth, (0.1, 0.25, 0.5, 1.0))
        self.assertEqual(report.image_count, 5)
        self.assertEqual(report.ground_truth_count, 5)
        np.testing.assert_allclose([point.threshold for point in report.froc], [0.95, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4])
        np.testing.assert_allclose([point.fp_per_image for point in report.froc], [0.0, 0.0, 0.2, 0.4, 0.4, 0.6, 0.8])
        np.testing.assert_allclose([point.sensitivity for point in report.froc], [0.2, 0.4, 0.4, 0.4, 0.6, 0.6, 0.8])
        np.testing.assert_allclose(list(report.sensitivity_at.values()), [0.4, 0.4, 0.6, 0.8])

    def test_hand_fixture_default_rates(self):
        detections, ground_truth = hand_fixture()
        report = froc(detections, ground_truth)
        self.assertEqual(list(report.sensitivity_at), [0.5, 1.0, 2.0, 4.0, 8.0, 16.0])
        np.testing.assert_allclose(list(report.sensitivity_at.values()), [0.6, 0.8, 0.8, 0.8, 0.8, 0.8])

    def test_perfect_detector_has_full_sensitivity(self):
        ground_truth = OrderedDict([('a', [LESION]), ('b', [LESION, Box(20.0, 20.0, 30.0, 30.0)])])
        detections = {image: [Detection(box, 0.9) for box in boxes] for image, boxes in ground_truth.items()}
        report = froc(detections, ground_truth)
        self.assertEqual(list(report.sensitivity_at.values()), [1.0] * 6)

    def test_silent_detector_has_zero_sensitivity(self):
        report = froc({}, OrderedDict([('a', [LESION])]))
        self.assertEqual(report.froc, [])
        self.assertEqual(list(report.sensitivity_at.values()), [0.0] * 6)

    def test_no_lesions_raises_evaluation_error(self):
        with self.assertRaises(SliceattnEvaluationError):
            froc({'a': [detection(0, 0, 1, 1, 0.5)]}, OrderedDict([('a', [])]))

    def test_no_images_raises_evaluation_error(self):
        with self.assertRaises(SliceattnEvaluationError):
            froc({}, OrderedDict())

    def test_curve_and_table_are_monotone(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            ground_truth = OrderedDict()
            detections = {}
            for image in range(int(rng.integers(1, 6))):
                corners = rng.integers(0, 20, size=(int(rng.integers(1, 3)), 2)).astype(float)
                ground_truth[image] = [Box(x, y, x + 6.0, y + 6.0) for x, y in corners]
                detections[image] = [detection(float(x), float(y), float(x) + 6.0, float(y) + 6.0,
                                               float(rng.integers(1, 10)) / 10.0)
                                     for x, y in rng.integers(0, 20, size=(int(rng.integers(0, 6)), 2))]
            report = froc(detections, ground_truth)
            fp_rates = [point.fp_per_image for point in report.froc]
            sensitivities = [point.sensitivity for point in report.froc]
            self.assertEqual(fp_rates, sorted(fp_rates))
            self.assertEqual(sensitivities, sorted(sensitivities))
            table = list(report.sensitivity_at.values())
            self.assertEqual(table, sorted(table))
            self.assertTrue(all(0.0 <= value <= 1.0 for value in table))

    def test_step_readout(self):
        curve = [FrocPoint(0.9, 0.0, 0.25), FrocPoint(0.5, 1.0, 0.5), FrocPoint(0.2, 3.0, 0.75)]
        self.assertEqual(sensitivity_at(curve, 0.5), 0.25)
        self.assertEqual(sensitivity_at(curve, 1.0), 0.5)
        self.assertEqual(sensitivity_at(curve, 2.9), 0.5)
        self.assertEqual(sensitivity_at([], 4.0), 0.0)
        self.assertEqual(operating_threshold(curve, 2.0), 0.5)
        self.assertIsNone(operating_threshold([FrocPoint(0.9, 2.0, 0.5)], 1.0))

    @parameterized.expand([
        ("no_rates", {'fp_rates': ()}),
        ("negative_rate", {'fp_rates': (-1.0, 1.0)}),
        ("iou_one", {'iou_threshold': 1.0}),
    ])
    def test_invalid_settings_raise_config_error(self, _, settings):
        with self.assertRaises(SliceattnConfigError):
            EvalConfig(**settings)

class TestReport(unittest.TestCase):

    def setUp(self):
        # Make sure no relics from previous tests mess up the current test
        try:
            shutil.rmtree(TESTFILE_FOLDER)
        except FileNotFoundError:
            # Folder is already gone
            pass
        Path(TESTFILE_FOLDER).mkdir(exist_ok=True, parents=True)

    def tearDown(self):
        shutil.rmtree(TESTFILE_FOLDER, ignore_errors=True)

    def test_oracle_detections_give_full_sensitivity_in_every_stratum(self):
        samples = [make_sample("vol_00000", [LESION], diameter=5.0, slice_interval_mm=1.0),
                   make_sample("vol_00001", [Box(2.0, 2.0, 14.0, 14.0)], diameter=12.0, slice_interval_mm=3.0)]
        detections = collect_detections(samples, oracle_detections)
        report = evaluate_detections(samples, detections, EvalConfig())
        self.assertEqual(list(report.sensitivity_at.values()), [1.0] * 6)
        self.assertEqual(list(report.strata), ['diameter:<10', 'diameter:10~30', 'slice_interval:<2.5',
                                               'slice_interval:>2.5'])
        for stratum in report.strata.values():
            self.assertEqual(list(stratum.sensitivity_at.values()), [1.0] * 6)

    def test_empty_sample_list_raises_evaluation_error(self):
        with self.assertRaises(SliceattnEvaluationError):
            evaluate_detections([], {}, EvalConfig())

    def test_report_files(self):
        samples = [make_sample("vol_00000", [LESION]), make_sample("vol_00001", [LESION])]
        detections = OrderedDict([("vol_00000", [detection(0, 0, 10, 10, 0.75)]),
                                  ("vol_00001", [detection(30, 30, 40, 40, 0.5)])])
        config = EvalConfig()
        report = evaluate_detections(samples, detections, config)
        paths = write_report_files(TESTFILE_FOLDER, samples, detections, report, config)
        self.assertEqual([os.path.basename(str(path)) for path in paths],
                         [REPORT_FILENAME, FROC_FILENAME, DETECTIONS_FILENAME])
        with open(os.path.join(TESTFILE_FOLDER, REPORT_FILENAME)) as csvfile:
            report_lines = csvfile.read().splitlines()
        self.assertEqual(report_lines[0], "stratum,fp_rate,sensitivity")
        self.assertEqual(report_lines[1], "all,0.5,0.5")
        with open(os.path.join(TESTFILE_FOLDER, FROC_FILENAME)) as csvfile:
            froc_lines = csvfile.read().splitlines()
        self.assertEqual(froc_lines, ["threshold,fp_per_image,sensitivity", "0.75,0.0,0.5", "0.5,0.5,0.5"])
        with open(os.path.join(TESTFILE_FOLDER, DETECTIONS_FILENAME)) as csvfile:
            detection_lines = csvfile.read().splitlines()
        self.assertEqual(detection_lines[1], "vol_00000,0.0,0.0,10.0,10.0,0.75,TP")
        self.assertEqual(detection_lines[2], "vol_00001,30.0,30.0,40.0,40.0,0.5,FP")

class TestOverlay(unittest.TestCase):

    def test_overlay_colours(self):
        sample = make_sample("vol_00000", [Box(2.0, 2.0, 6.0, 6.0)], size=16)
        detections = [detection(2, 2, 6, 6, 0.9), detection(9, 9, 14, 14, 0.8), detection(0, 10, 4, 14, 0.1)]
        rgb = render_overlay(sample, detections, 0.5, 0.5)
        self.assertEqual(rgb.shape, (16, 16, 3))
        # the true positive is drawn over the ground truth outline
        self.assertEqual(tuple(rgb[2, 2]), TRUE_POSITIVE_COLOUR)
        self.assertEqual(tuple(rgb[9, 9]), FALSE_POSITIVE_COLOUR)
        self.assertEqual(tuple(rgb[13, 13]), FALSE_POSITIVE_COLOUR)
        # below the operating threshold
        self.assertEqual(tuple(rgb[10, 0]), (128, 128, 128))
        self.assertEqual(tuple(rgb[7, 7]), (128, 128, 128))

    def test_overlay_without_threshold_draws_only_ground_truth(self):
        sample = make_sample("vol_00000", [Box(2.0, 2.0, 6.0, 6.0)])
        rgb = render_overlay(sample, [detection(2, 2, 6, 6, 0.9)], None, 0.5)
        self.assertEqual(tuple(rgb[2, 2]), GROUND_TRUTH_COLOUR)
        self.assertEqual(tuple(rgb[5, 5]), GROUND_TRUTH_COLOUR)

    def test_ppm_header(self):
        content = encode_ppm(np.zeros((2, 3, 3), dtype=np.uint8))
        self.assertTrue(content.startswith(b"P6\n3 2\n255\n"))
        self.assertEqual(len(content), len(b"P6\n3 2\n255\n") + 18)
