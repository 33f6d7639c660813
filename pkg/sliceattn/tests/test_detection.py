# The intention is to make the test names descriptive enough to not need any docstrings for most of them
#pylint: disable=missing-docstring
import math
import struct
import unittest
from collections import OrderedDict

import numpy as np
from parameterized import parameterized

from sliceattn.attention import AttentionConfig
from sliceattn.checkpoint import encode_checkpoint, decode_checkpoint, parameters_from_checkpoint
from sliceattn.configkeys import ParameterNames
from sliceattn.detection.anchors import base_anchors, anchor_grid, label_anchors, POSITIVE, NEGATIVE, IGNORED
from sliceattn.detection.boxes import Box, Detection, pairwise_iou, encode_deltas, decode_deltas, clip_boxes, nms
from sliceattn.detection.loss import classification_weights, roi_labels, detection_loss, rpn_loss
from sliceattn.detection.model import PipelineConfig, SliceDeck, SliceAttentionDetector, group_slices, RpnOutput
from sliceattn.detection.model import parameter_shapes, initial_parameters
from sliceattn.detection.psroipool import roi_to_cells, bin_edges, psroi_pool
from sliceattn.sliceattn_errors import SliceattnInputError, SliceattnConfigError, SliceattnDimensionError
from sliceattn.sliceattn_errors import SliceattnFileFormatError
from sliceattn.tensorcore import Tensor, sum_all, mul
from sliceattn.tensorcore.gradcheck import gradcheck

def small_config(attention=True, **settings):
    """
    Pipeline small enough to run on 16 x 16 decks in a unit test
    """
    return PipelineConfig(backbone_channels=(4, 4), backbone_strides=(1, 2), rpn_channels=8,
                          psroi_group_channels=2, hidden_units=8,
                          attention=AttentionConfig(enable_contextual=attention, enable_spatial=attention),
                          **settings)

def blob_deck(slices=9, size=16, seed=0):
    rng = np.random.default_rng(seed)
    volume = 0.1 * rng.normal(size=(slices, size, size))
    volume[:, 5:10, 6:11] += 1.0
    return SliceDeck(volume, slices // 2, volume_id="vol_00000")

class TestBoxes(unittest.TestCase):

    def test_box_needs_positive_extent(self):
        with self.assertRaises(SliceattnInputError):
            Box(2.0, 0.0, 2.0, 4.0)

    def test_box_measures(self):
        box = Box(1.0, 2.0, 4.0, 6.0)
        self.assertEqual(box.width, 3.0)
        self.assertEqual(box.height, 4.0)
        self.assertEqual(box.area, 12.0)
        self.assertEqual(Box.from_array(box.as_array()), box)

    @parameterized.expand([
        ("negative", -0.1),
        ("above_one", 1.5),
    ])
    def test_detection_score_outside_unit_interval_raises(self, _, score):
        with self.assertRaises(SliceattnInputError):
            Detection(Box(0.0, 0.0, 1.0, 1.0), score)

    def test_pairwise_iou(self):
        first = np.array([[0.0, 0.0, 2.0, 2.0], [0.0, 0.0, 1.0, 1.0]])
        second = np.array([[1.0, 1.0, 3.0, 3.0], [0.0, 0.0, 2.0, 2.0], [5.0, 5.0, 6.0, 6.0]])
        expected = np.array([[1.0 / 7.0, 1.0, 0.0], [0.0, 0.25, 0.0]])
        np.testing.assert_allclose(pairwise_iou(first, second), expected)

    def test_decode_inverts_encode(self):
        rng = np.random.default_rng(0)
        references = np.concatenate([rng.uniform(0, 20, size=(30, 2)), rng.uniform(0, 20, size=(30, 2))], axis=1)
        references[:, 2:] = references[:, :2] + rng.uniform(1, 10, size=(30, 2))
        targets = references + rng.uniform(-2, 2, size=(30, 4))
        targets[:, 2:] = targets[:, :2] + rng.uniform(1, 10, size=(30, 2))
        np.testing.assert_allclose(decode_deltas(references, encode_deltas(references, targets)), targets,
                                   atol=1e-9)

    def test_decode_two_anchor_fixture(self):
        anchors = np.array([[0.0, 0.0, 10.0, 10.0], [10.0, 10.0, 30.0, 20.0]])
        deltas = np.array([[0.1, 0.0, 0.0, 0.0], [0.0, 0.5, math.log(2.0), 0.0]])
        np.testing.assert_allclose(decode_deltas(anchors, deltas),
                                   [[1.0, 0.0, 11.0, 10.0], [0.0, 15.0, 40.0, 25.0]], atol=1e-12)

    def test_zero_deltas_keep_references(self):
        references = np.array([[1.0, 2.0, 5.0, 8.0]])
        np.testing.assert_allclose(decode_deltas(references, np.zeros((1, 4))), references)

    def test_clip_boxes(self):
        clipped = clip_boxes(np.array([[-3.0, 2.0, 20.0, 30.0]]), 16, 12)
        np.testing.assert_array_equal(clipped, [[0.0, 2.0, 12.0, 16.0]])

    def test_nms_drops_overlapping_lower_scores(self):
        boxes = np.array([[0.0, 0.0, 10.0, 10.0], [1.0, 1.0, 11.0, 11.0], [20.0, 20.0, 30.0, 30.0]])
        keep = nms(boxes, np.array([0.9, 0.8, 0.7]), 0.5)
        np.testing.assert_array_equal(keep, [0, 2])

    def test_nms_suppresses_at_exact_threshold(self):
        boxes = np.array([[0.0, 0.0, 2.0, 1.0], [1.0, 0.0, 3.0, 1.0]])
        np.testing.assert_array_equal(nms(boxes, np.array([0.9, 0.8]), 1.0 / 3.0), [0])
        np.testing.assert_array_equal(nms(boxes, np.array([0.9, 0.8]), 0.34), [0, 1])

    def test_nms_equal_scores_keep_lower_index(self):
        boxes = np.array([[0.0, 0.0, 4.0, 4.0], [0.0, 0.0, 4.0, 4.0]])
        np.testing.assert_array_equal(nms(boxes, np.array([0.5, 0.5]), 0.5), [0])

    def test_nms_of_nothing(self):
        self.assertEqual(nms(np.zeros((0, 4)), np.zeros(0), 0.5).size, 0)

class TestAnchors(unittest.TestCase):

    def test_base_anchors_keep_area_and_ratio(self):
        shapes = base_anchors((6.0, 12.0), (0.5, 1.0, 2.0))
        self.assertEqual(shapes.shape, (6, 4))
        widths = shapes[:, 2] - shapes[:, 0]
        heights = shapes[:, 3] - shapes[:, 1]
        np.testing.assert_allclose(widths * heights, [36.0] * 3 + [144.0] * 3)
        np.testing.assert_allclose(heights / widths, [0.5, 1.0, 2.0] * 2)

    def test_anchor_grid_layout(self):
        shapes = base_anchors((4.0,), (1.0, 2.0))
        anchors = anchor_grid(3, 5, 2, shapes)
        self.assertEqual(anchors.shape, (3 * 5 * 2, 4))
        centres = 0.5 * (anchors[:, :2] + anchors[:, 2:])
        np.testing.assert_allclose(centres[0], [1.0, 1.0])
        # cell (y=0, x=1) follows the two anchors of cell (0, 0)
        np.testing.assert_allclose(centres[2], [3.0, 1.0])
        np.testing.assert_allclose(centres[-1], [9.0, 5.0])

    def test_label_anchors_by_overlap(self):
        anchors = np.array([[0.0, 0.0, 10.0, 10.0], [0.0, 0.0, 10.0, 5.0], [50.0, 50.0, 60.0, 60.0]])
        matching = label_anchors(anchors, np.array([[0.0, 0.0, 10.0, 10.0]]), force_best_match=False)
        np.testing.assert_array_equal(matching.labels, [POSITIVE, IGNORED, NEGATIVE])
        np.testing.assert_array_equal(matching.matched_boxes[0], [0.0, 0.0, 10.0, 10.0])

    def test_force_best_match_gives_small_boxes_a_positive(self):
        anchors = np.array([[0.0, 0.0, 4.0, 4.0], [10.0, 10.0, 14.0, 14.0]])
        ground_truth = np.array([[0.0, 0.0, 2.0, 2.0]])
        forced = label_anchors(anchors, ground_truth, force_best_match=True)
        plain = label_anchors(anchors, ground_truth, force_best_match=False)
        np.testing.assert_array_equal(forced.labels, [POSITIVE, NEGATIVE])
        np.testing.assert_array_equal(plain.labels, [NEGATIVE, NEGATIVE])

    def test_no_ground_truth_makes_every_anchor_negative(self):
        anchors = anchor_grid(2, 2, 4, base_anchors((4.0,), (1.0,)))
        matching = label_anchors(anchors, np.zeros((0, 4)))
        np.testing.assert_array_equal(matching.labels, [NEGATIVE] * 4)

class TestPsroiPool(unittest.TestCase):

    def test_roi_to_cells(self):
        self.assertEqual(roi_to_cells((0.0, 0.0, 8.0, 8.0), 2, 16, 16), (0, 0, 4, 4))
        self.assertEqual(roi_to_cells((1.0, 3.0, 2.0, 3.5), 2, 16, 16), (0, 1, 1, 2))
        self.assertEqual(roi_to_cells((-5.0, -5.0, 100.0, 100.0), 2, 8, 6), (0, 0, 6, 8))

    @parameterized.expand([
        ("even_split", 0, 6, 3, [(0, 2), (2, 4), (4, 6)]),
        ("fewer_cells_than_bins", 0, 2, 3, [(0, 1), (0, 2), (1, 2)]),
        ("single_cell", 4, 5, 3, [(4, 5), (4, 5), (4, 5)]),
    ])
    def test_bin_edges(self, _, start, stop, bins, expected):
        self.assertEqual(bin_edges(start, stop, bins), expected)

    def test_every_channel_group_pools_its_own_bin(self):
        rng = np.random.default_rng(0)
        data = rng.normal(size=(2 * 2 * 3, 4, 4))
        pooled = psroi_pool(Tensor(data), np.array([[0.0, 0.0, 4.0, 4.0]]), 1, 2, 3)
        self.assertEqual(pooled.shape, (1, 12))
        bins = [(0, 2, 0, 2), (0, 2, 2, 4), (2, 4, 0, 2), (2, 4, 2, 4)]
        for bin_index, (y_begin, y_end, x_begin, x_end) in enumerate(bins):
            for group in range(3):
                channel = bin_index * 3 + group
                self.assertAlmostEqual(pooled.data[0, channel],
                                       data[channel, y_begin:y_end, x_begin:x_end].mean(), places=12)

    def test_wrong_channel_count_raises_dimension_error(self):
        with self.assertRaises(SliceattnDimensionError):
            psroi_pool(Tensor(np.zeros((5, 4, 4))), np.array([[0.0, 0.0, 4.0, 4.0]]), 1, 2, 1)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(1)
        score_map = Tensor(rng.normal(size=(8, 6, 6)), requires_grad=True, name='score_map')
        rois = np.array([[0.0, 0.0, 12.0, 12.0], [2.0, 4.0, 7.0, 9.0], [5.0, 5.0, 6.0, 6.0]])
        readout = Tensor(rng.normal(size=(3, 8)))
        results = gradcheck(lambda: sum_all(mul(readout, psroi_pool(score_map, rois, 2, 2, 2))), [score_map])
        self.assertTrue(results[0].passed, results[0])

class TestPipelineConfig(unittest.TestCase):

    def test_defaults(self):
        config = PipelineConfig()
        self.assertEqual(config.stride, 4)
        self.assertEqual(config.slice_count, 9)
        self.assertEqual(config.feature_channels, 16)
        self.assertEqual(config.anchors_per_cell, 9)

    @parameterized.expand([
        ("even_num_images", {'num_images': 2}),
        ("zero_num_images", {'num_images': 0}),
        ("layer_count_mismatch", {'backbone_channels': (4, 4), 'backbone_strides': (1,)}),
        ("total_stride_eight", {'backbone_channels': (4, 4, 4), 'backbone_strides': (2, 2, 2)}),
        ("stride_three", {'backbone_channels': (4,), 'backbone_strides': (3,)}),
        ("positive_weight_one", {'positive_weight': 1.0}),
        ("negative_anchor_size", {'anchor_sizes': (-6.0,)}),
        ("background_above_foreground", {'roi_bg_iou': 0.6, 'roi_fg_iou': 0.5}),
        ("no_detections", {'detections_per_image': 0}),
    ])
    def test_invalid_settings_raise_config_error(self, _, settings):
        with self.assertRaises(SliceattnConfigError):
            PipelineConfig(**settings)

class TestSliceDeck(unittest.TestCase):

    def test_empty_deck_raises_input_error(self):
        with self.assertRaises(SliceattnInputError):
            SliceDeck(np.zeros((0, 4, 4)), 0)

    def test_key_outside_deck_raises_input_error(self):
        with self.assertRaises(SliceattnInputError):
            SliceDeck(np.zeros((3, 4, 4)), 3)

    def test_from_volume_repeats_edge_slices(self):
        volume = np.arange(5, dtype=np.float64)[:, np.newaxis, np.newaxis] * np.ones((5, 2, 2))
        deck = SliceDeck.from_volume(volume, 0, 3)
        self.assertEqual(deck.slice_count, 9)
        self.assertEqual(deck.key_index, 4)
        np.testing.assert_array_equal(deck.slices.data[:, 0, 0], [0, 0, 0, 0, 0, 1, 2, 3, 4])

    def test_from_volume_key_outside_volume_raises_input_error(self):
        with self.assertRaises(SliceattnInputError):
            SliceDeck.from_volume(np.zeros((5, 2, 2)), 5, 3)

    def test_group_slices_puts_key_slice_in_the_middle(self):
        volume = np.arange(9, dtype=np.float64)[:, np.newaxis, np.newaxis] * np.ones((9, 2, 2))
        images = group_slices(SliceDeck(volume, 4), 3)
        self.assertEqual(len(images), 3)
        for number, image in enumerate(images):
            self.assertEqual(image.shape, (3, 2, 2))
            np.testing.assert_array_equal(image.data[:, 0, 0], [3 * number, 3 * number + 1, 3 * number + 2])
        self.assertEqual(images[1].data[1, 0, 0], 4.0)

    def test_group_slices_single_image(self):
        volume = np.arange(9, dtype=np.float64)[:, np.newaxis, np.newaxis] * np.ones((9, 2, 2))
        images = group_slices(SliceDeck(volume, 4), 1)
        np.testing.assert_array_equal(images[0].data[:, 0, 0], [3, 4, 5])

    def test_group_slices_even_count_raises_input_error(self):
        with self.assertRaises(SliceattnInputError):
            group_slices(SliceDeck(np.zeros((9, 2, 2)), 4), 2)

class TestDetector(unittest.TestCase):

    def test_attention_parameters_follow_enabled_modules(self):
        without = parameter_shapes(small_config(attention=False))
        with_both = parameter_shapes(small_config(attention=True))
        self.assertFalse([name for name in without if ParameterNames.is_attention(name)])
        self.assertEqual([name for name in with_both if ParameterNames.is_attention(name)],
                         [ParameterNames.CONTEXTUAL_WEIGHT, ParameterNames.CONTEXTUAL_BIAS,
                          ParameterNames.SPATIAL_WEIGHT, ParameterNames.SPATIAL_BIAS])
        self.assertEqual(with_both[ParameterNames.CONTEXTUAL_WEIGHT], (4, 4, 3, 3))
        self.assertEqual(with_both[ParameterNames.RPN_CONV_WEIGHT], (8, 12, 3, 3))

    def test_enabling_attention_leaves_other_initial_values_unchanged(self):
        without = initial_parameters(small_config(attention=False))
        with_both = initial_parameters(small_config(attention=True))
        for name, tensor in without.items():
            np.testing.assert_array_equal(with_both[name].data, tensor.data)
        for name in with_both:
            if ParameterNames.is_attention(name):
                np.testing.assert_array_equal(with_both[name].data, 0.0)

    def test_initialization_is_seeded(self):
        first = initial_parameters(small_config(init_seed=3))
        second = initial_parameters(small_config(init_seed=3))
        other = initial_parameters(small_config(init_seed=4))
        name = ParameterNames.backbone_weight(1)
        np.testing.assert_array_equal(first[name].data, second[name].data)
        self.assertFalse(np.array_equal(first[name].data, other[name].data))

    def test_mismatched_parameters_raise_config_error(self):
        params = initial_parameters(small_config(attention=False))
        with self.assertRaises(SliceattnConfigError):
            SliceAttentionDetector(small_config(attention=True), params)

    def test_wrong_parameter_shape_raises_config_error(self):
        params = initial_parameters(small_config())
        params[ParameterNames.FC1_BIAS] = Tensor(np.zeros(3), requires_grad=True)
        with self.assertRaises(SliceattnConfigError):
            SliceAttentionDetector(small_config(), params)

    def test_forward_shapes(self):
        detector = SliceAttentionDetector(small_config())
        output = detector.forward(blob_deck(), ground_truth=np.array([[6.0, 5.0, 11.0, 10.0]]))
        self.assertEqual(output.features.shape, (12, 8, 8))
        self.assertEqual(output.rpn.logits.shape, (8 * 8 * 9,))
        self.assertEqual(output.rpn.deltas.shape, (8 * 8 * 9, 4))
        self.assertEqual(len(output.fields), 2)
        self.assertIsNotNone(output.head)
        np.testing.assert_array_equal(output.proposals[-1], [6.0, 5.0, 11.0, 10.0])
        self.assertEqual(output.head.logits.shape, (output.proposals.shape[0], 1))

    def test_detections_are_scored_and_ordered(self):
        detector = SliceAttentionDetector(small_config())
        detections = detector.detect(blob_deck())
        self.assertLessEqual(len(detections), detector.config.detections_per_image)
        scores = [detection.score for detection in detections]
        self.assertEqual(scores, sorted(scores, reverse=True))
        for detection in detections:
            self.assertEqual(detection.image_id, "vol_00000")
            self.assertGreaterEqual(detection.box.x1, 0.0)
            self.assertLessEqual(detection.box.x2, 16.0)

    def test_zero_initialized_attention_does_not_change_outputs(self):
        deck = blob_deck(seed=5)
        plain = SliceAttentionDetector(small_config(attention=False))
        attended = SliceAttentionDetector(small_config(attention=True))
        plain_features, _ = plain.extract_features(deck)
        attended_features, fields = attended.extract_features(deck)
        np.testing.assert_array_equal(attended_features.data, plain_features.data)
        for field in fields:
            np.testing.assert_array_equal(field.weights.data, 1.0)
        self.assertEqual(plain.detect(deck), attended.detect(deck))

    def test_replicate_copies_parameters(self):
        detector = SliceAttentionDetector(small_config())
        copy = detector.replicate()
        for name, tensor in detector.params.items():
            self.assertIsNot(copy.params[name], tensor)
            np.testing.assert_array_equal(copy.params[name].data, tensor.data)
        copy.params[ParameterNames.FC1_BIAS].data += 1.0
        np.testing.assert_array_equal(detector.params[ParameterNames.FC1_BIAS].data, 0.0)

class TestLoss(unittest.TestCase):

    @parameterized.expand([
        ("mixed", [1, 0, 0, -1], [0.5, 0.25, 0.25, 0.0]),
        ("only_negatives", [0, 0], [0.5, 0.5]),
        ("only_positives", [1, -1, 1, 1], [1.0 / 3.0, 0.0, 1.0 / 3.0, 1.0 / 3.0]),
        ("only_ignored", [-1, -1], [0.0, 0.0]),
    ])
    def test_classification_weights(self, _, labels, expected):
        np.testing.assert_allclose(classification_weights(np.array(labels), 0.5), expected)

    def test_roi_labels_foreground_at_threshold(self):
        rois = np.array([[0.0, 0.0, 4.0, 2.0], [0.0, 0.0, 4.0, 1.0], [10.0, 10.0, 12.0, 12.0]])
        labels, matched = roi_labels(rois, np.array([[0.0, 0.0, 4.0, 4.0]]), small_config())
        np.testing.assert_array_equal(labels, [POSITIVE, NEGATIVE, NEGATIVE])
        np.testing.assert_array_equal(matched[0], [0.0, 0.0, 4.0, 4.0])

    def test_single_anchor_rpn_loss(self):
        rpn = RpnOutput(Tensor(np.array([0.5])), Tensor(np.array([[0.1, 0.0, 0.0, 0.0]])),
                        np.array([[0.0, 0.0, 10.0, 10.0]]))
        cls_loss, reg_loss = rpn_loss(rpn, np.array([[0.0, 0.0, 10.0, 10.0]]), small_config())
        self.assertAlmostEqual(cls_loss.item(), math.log1p(math.exp(-0.5)), places=12)
        # |0.1| is below the smooth-L1 transition 1/9
        self.assertAlmostEqual(reg_loss.item(), 0.5 * 0.1 * 0.1 * 9.0, places=12)

    def test_loss_without_lesions_is_twice_log_two_for_silent_classifiers(self):
        detector = SliceAttentionDetector(small_config())
        for name in (ParameterNames.RPN_CLS_WEIGHT, ParameterNames.HEAD_CLS_WEIGHT):
            detector.params[name].data[...] = 0.0
        output = detector.forward(blob_deck())
        self.assertIsNotNone(output.head)
        losses = detection_loss(output, np.zeros((0, 4)), detector.config)
        self.assertAlmostEqual(losses.rpn_cls.item(), math.log(2.0), places=12)
        self.assertAlmostEqual(losses.head_cls.item(), math.log(2.0), places=12)
        self.assertEqual(losses.reg.item(), 0.0)
        self.assertAlmostEqual(losses.total.item(), 2.0 * math.log(2.0), places=12)

    def test_loss_with_lesion_is_finite_and_positive(self):
        detector = SliceAttentionDetector(small_config())
        ground_truth = np.array([[6.0, 5.0, 11.0, 10.0]])
        losses = detection_loss(detector.forward(blob_deck(), ground_truth), ground_truth, detector.config)
        self.assertTrue(np.isfinite(losses.total.item()))
        self.assertGreater(losses.cls.item(), 0.0)
        self.assertAlmostEqual(losses.total.item(), losses.cls.item() + losses.reg.item(), places=12)

class TestCheckpoint(unittest.TestCase):

    def test_encode_decode_preserves_names_order_and_values(self):
        params = initial_parameters(small_config())
        decoded = decode_checkpoint(encode_checkpoint(params))
        self.assertEqual(list(decoded), list(params))
        for name, tensor in params.items():
            np.testing.assert_array_equal(decoded[name], tensor.data)

    def test_bad_magic_raises_file_format_error(self):
        content = encode_checkpoint(initial_parameters(small_config()))
        with self.assertRaises(SliceattnFileFormatError):
            decode_checkpoint(b"XXXX" + content[4:])

    def test_truncated_checkpoint_raises_file_format_error(self):
        content = encode_checkpoint(initial_parameters(small_config()))
        with self.assertRaises(SliceattnFileFormatError):
            decode_checkpoint(content[:-3])

    def test_checkpoint_bytes(self):
        content = encode_checkpoint(OrderedDict([('w', np.array([[1.5, -2.0]]))]))
        expected = (b"SATN" + struct.pack("<I", 1) + struct.pack("<I", 1) + b"w" + struct.pack("<III", 2, 1, 2)
                    + struct.pack("<dd", 1.5, -2.0))
        self.assertEqual(content, expected)
        np.testing.assert_array_equal(decode_checkpoint(content)['w'], [[1.5, -2.0]])

    def test_trailing_bytes_raise_file_format_error(self):
        content = encode_checkpoint(initial_parameters(small_config()))
        with self.assertRaises(SliceattnFileFormatError):
            decode_checkpoint(content + b"\x00")

    def test_attention_mismatch_raises_config_error(self):
        tensors = decode_checkpoint(encode_checkpoint(initial_parameters(small_config(attention=False))))
        config = small_config(attention=True)
        with self.assertRaises(SliceattnConfigError):
            parameters_from_checkpoint(tensors, parameter_shapes(config), config.attention)

    def test_checkpoint_parameters_build_an_identical_detector(self):
        config = small_config()
        detector = SliceAttentionDetector(config)
        tensors = decode_checkpoint(encode_checkpoint(detector.params))
        restored = SliceAttentionDetector(config, parameters_from_checkpoint(tensors, parameter_shapes(config),
                                                                             config.attention))
        deck = blob_deck(seed=2)
        self.assertEqual(restored.detect(deck), detector.detect(deck))
