"""
Backend interface for the sliceattn utility.

This module is the boundary between the Command Line Interface (CLI) part and the backend part
that does the actual job.  Any external utility or script that needs access to the functionality
provided by sliceattn should connect to the interface provided by this backend module.
"""
import dataclasses
from collections import OrderedDict
from logging import getLogger
from pathlib import Path

import numpy as np

from .sliceattn_errors import SliceattnUsageError
from .attention import AttentionParams, FeatureStack, dual_attention
from .checkpoint import read_checkpoint, parameters_from_checkpoint
from .configkeys import AttentionModes, ConfigSections, ParameterNames
from .detection.boxes import Detection, boxes_to_array
from .detection.loss import detection_loss
from .detection.model import SliceAttentionDetector, SliceDeck, parameter_shapes
from .evaluation.froc import operating_threshold
from .evaluation.overlay import write_overlay
from .evaluation.report import collect_detections, evaluate_detections, write_report_files
from .manifest import RunManifest, write_manifest, manifest_for_checkpoint
from .synthdata.phantom import generate, generate_sample
from .synthdata.strata import Criteria, stratify
from .synthdata.volumefile import write_dataset, read_dataset, read_volume, ANNOTATIONS_FILENAME, VOLUME_SUFFIX
from .tensorcore import Tensor, mul, sum_all, no_grad
from .tensorcore.gradcheck import gradcheck
from .training.trainer import Trainer, CHECKPOINT_FILENAME, LOSS_LOG_FILENAME
from .attentiondump import dump_attention
from .utils import ensure_directory, thread_limit, write_text_atomic

GRADCHECK_MODULES = ['attention', 'pipeline']
ATTENTION_TOLERANCE = 1e-4
PIPELINE_TOLERANCE = 1e-3
DEFAULT_GRADCHECK_SAMPLES = 24
GRADCHECK_FILENAME = "gradcheck.csv"
# Output directory of gradcheck when none is given
DEFAULT_GRADCHECK_DIR = "gradcheck"
OVERLAY_FILENAME_FORMAT = "overlay_{}.ppm"

# Shape of the random feature stack of the attention gradient check, [M, D, H, W]
ATTENTION_CHECK_SHAPE = (3, 4, 5, 6)
# Phantom size of the pipeline gradient check
PIPELINE_CHECK_IMAGE_SIZE = 24
PIPELINE_CHECK_DIAMETER = (4.0, 12.0)

def attention_flags(mode):
    """
    (enable_contextual, enable_spatial) of an --attention value

    :raises SliceattnUsageError: on an unknown mode
    """
    flags = {AttentionModes.NONE: (False, False),
             AttentionModes.CONTEXTUAL: (True, False),
             AttentionModes.SPATIAL: (False, True),
             AttentionModes.BOTH: (True, True)}
    if mode not in flags:
        raise SliceattnUsageError("Unknown attention mode '{}', expected one of {}".format(
            mode, ", ".join(sorted(flags))))
    return flags[mode]

def attention_overrides(mode):
    """
    Config overrides selecting the attention modules of an --attention value
    """
    contextual, spatial = attention_flags(mode)
    return {ConfigSections.ATTENTION: {'enable_contextual': contextual, 'enable_spatial': spatial}}

def oracle_detections(sample):
    """
    Detector substitute echoing the ground truth with score 1
    """
    return [Detection(box, 1.0, sample.volume_id) for box in sample.ground_truth]

def format_gradcheck(results, tolerance):
    """
    Pass/fail table of gradient check results as CSV text
    """
    lines = ["tensor,relative_error,checked,tolerance,result"]
    for result in results:
        lines.append("{},{:.6e},{},{:g},{}".format(result.name, result.relative_error, result.checked, tolerance,
                                                   "pass" if result.passed else "FAIL"))
    return "\n".join(lines) + "\n"

class Backend(object):
    """
    Backend interface of the sliceattn utility.
    This class provides access to all the functionality provided by sliceattn

    :param run_config: RunConfig with the settings of every module
    :param threads: worker threads, from SLICEATTN_THREADS when None
    """
    API_VERSION = '1.0'

    def __init__(self, run_config, threads=None):
        # Hook onto logger
        self.logger = getLogger(__name__)
        self.run_config = run_config
        self.threads = thread_limit() if threads is None else threads

    def get_api_version(self):
        """
        Returns the current sliceattn API version
        """
        return self.API_VERSION

    def _write_manifest(self, command, directory, artifacts, run_config=None):
        return write_manifest(directory, RunManifest(command, run_config or self.run_config, artifacts))

    def generate(self, count, out_dir, start=0):
        """
        Generate a synthetic data set

        :param count: number of volumes, at least 1
        :param out_dir: output directory, created if needed
        :param start: index of the first volume
        :returns: OrderedDict stratum name -> number of volumes, diameter strata then interval strata
        :raises SliceattnSpecError: if count is below 1
        :raises SliceattnIOError: if the directory cannot be written
        """
        samples = generate(self.run_config.phantom, count, start)
        directory = ensure_directory(out_dir)
        written = write_dataset(samples, directory)
        summary = OrderedDict()
        for criterion in (Criteria.DIAMETER, Criteria.SLICE_INTERVAL):
            for name, members in stratify(written, criterion).items():
                summary["{}:{}".format(criterion, name)] = len(members)
                self.logger.info("Stratum %s %s: %d volumes", criterion, name, len(members))
        artifacts = [directory / (sample.volume_id + VOLUME_SUFFIX) for sample in written]
        artifacts.append(directory / ANNOTATIONS_FILENAME)
        self._write_manifest('generate', directory, artifacts)
        return summary

    def load_samples(self, data_dir, num_images=None):
        """
        Read a data set cut for the configured (or the given) number of grouped images
        """
        return read_dataset(data_dir, num_images or self.run_config.pipeline.num_images)

    def train(self, data_dir, out_dir):
        """
        Train a detector and write checkpoints, loss log and manifest into out_dir

        :returns: TrainResult
        :raises SliceattnIOError: if the data set is missing
        """
        samples = self.load_samples(data_dir)
        directory = ensure_directory(out_dir)
        # The manifest describes the configuration of every checkpoint written during training
        self._write_manifest('train', directory, [])
        trainer = Trainer(self.run_config.pipeline, self.run_config.train, directory, self.threads)
        result = trainer.train(samples)
        self._write_manifest('train', directory, result.checkpoints + [directory / CHECKPOINT_FILENAME,
                                                                       directory / LOSS_LOG_FILENAME])
        return result

    def load_detector(self, checkpoint_path):
        """
        Detector of a checkpoint, configured from the manifest next to it

        :returns: SliceAttentionDetector
        :raises SliceattnIOError: if the checkpoint or its manifest cannot be read
        :raises SliceattnConfigError: if the checkpoint does not match the manifest configuration
        """
        pipeline = manifest_for_checkpoint(checkpoint_path).run_config.pipeline
        tensors = read_checkpoint(checkpoint_path)
        params = parameters_from_checkpoint(tensors, parameter_shapes(pipeline), pipeline.attention)
        self.logger.info("Loaded %d tensors from %s", len(params), checkpoint_path)
        return SliceAttentionDetector(pipeline, params)

    def evaluate(self, detector, data_dir, out_dir, overlays=0):
        """
        Evaluate a detector, or the ground truth oracle when detector is None

        :param detector: SliceAttentionDetector or None
        :param overlays: number of volumes to write overlay images for
        :returns: EvalReport
        :raises SliceattnIOError: if the data set is missing or empty
        :raises SliceattnEvaluationError: if the data set holds no lesion
        """
        eval_config = self.run_config.eval
        run_config = self.run_config
        if detector is None:
            samples = self.load_samples(data_dir)
            detect = oracle_detections
        else:
            samples = self.load_samples(data_dir, detector.config.num_images)
            detect = lambda sample: detector.detect(sample.deck)
            run_config = run_config._replace(pipeline=detector.config)
        detections = collect_detections(samples, detect)
        report = evaluate_detections(samples, detections, eval_config)
        directory = ensure_directory(out_dir)
        artifacts = write_report_files(directory, samples, detections, report, eval_config)
        if overlays > 0:
            threshold = operating_threshold(report.froc, eval_config.operating_fp_rate)
            for sample in samples[:overlays]:
                path = directory / OVERLAY_FILENAME_FORMAT.format(sample.volume_id)
                write_overlay(path, sample, detections[sample.volume_id], threshold, eval_config.iou_threshold)
                artifacts.append(path)
        self._write_manifest('eval', directory, artifacts, run_config)
        return report

    def gradcheck_attention(self, seed=0):
        """
        Finite difference check of both attention modules on a random feature stack

        The loss is the weighted sum of the refined features with fixed random weights.

        :returns: list of GradcheckResult for the stack and the four attention parameters
        """
        config = dataclasses.replace(self.run_config.pipeline.attention, enable_contextual=True,
                                     enable_spatial=True)
        rng = np.random.default_rng(seed)
        images, channels, height, width = ATTENTION_CHECK_SHAPE
        kernel = config.attention_conv_kernel
        stack = Tensor(rng.normal(size=ATTENTION_CHECK_SHAPE), requires_grad=True, name='stack')
        params = AttentionParams(
            Tensor(0.2 * rng.normal(size=(channels, channels, kernel, kernel)), requires_grad=True,
                   name=ParameterNames.CONTEXTUAL_WEIGHT),
            Tensor(0.2 * rng.normal(size=channels), requires_grad=True, name=ParameterNames.CONTEXTUAL_BIAS),
            Tensor(0.2 * rng.normal(size=(channels, channels, kernel, kernel)), requires_grad=True,
                   name=ParameterNames.SPATIAL_WEIGHT),
            Tensor(0.2 * rng.normal(size=channels), requires_grad=True, name=ParameterNames.SPATIAL_BIAS))
        weights = Tensor(rng.normal(size=(images, channels, height, width)))

        def loss():
            refined, _ = dual_attention(FeatureStack(stack), config, params)
            return sum_all(mul(weights, refined.data))

        return gradcheck(loss, [stack] + params.tensors(), tolerance=ATTENTION_TOLERANCE, seed=seed)

    def gradcheck_pipeline(self, samples=DEFAULT_GRADCHECK_SAMPLES, seed=0):
        """
        Finite difference check of the full training loss with respect to every parameter

        Proposals are computed once and frozen, so the integer PSROI bins and the ROI labels stay
        fixed under the perturbations.

        :param samples: entries checked per parameter tensor
        :returns: list of GradcheckResult, one per parameter tensor
        """
        pipeline = self.run_config.pipeline
        phantom = dataclasses.replace(self.run_config.phantom, image_size=PIPELINE_CHECK_IMAGE_SIZE,
                                      lesion_diameter_px=PIPELINE_CHECK_DIAMETER, num_images=pipeline.num_images)
        sample = generate_sample(phantom, 0)
        deck = sample.deck
        ground_truth = boxes_to_array(sample.ground_truth)
        detector = SliceAttentionDetector(pipeline)
        with no_grad():
            frozen = detector.forward(deck).proposals

        def loss():
            output = detector.forward(deck, ground_truth, proposals=frozen)
            return detection_loss(output, ground_truth, pipeline).total

        return gradcheck(loss, detector.parameters(), tolerance=PIPELINE_TOLERANCE, max_samples=samples, seed=seed)

    def gradcheck(self, module, samples=DEFAULT_GRADCHECK_SAMPLES, out_dir=None):
        """
        Gradient check of the attention modules or the whole pipeline

        :param module: 'attention' or 'pipeline'
        :param samples: entries checked per tensor (pipeline only)
        :param out_dir: directory receiving gradcheck.csv and a manifest, DEFAULT_GRADCHECK_DIR when None
        :returns: tuple (list of GradcheckResult, tolerance)
        :raises SliceattnUsageError: on an unknown module
        """
        if module == 'attention':
            results, tolerance = self.gradcheck_attention(), ATTENTION_TOLERANCE
        elif module == 'pipeline':
            results, tolerance = self.gradcheck_pipeline(samples), PIPELINE_TOLERANCE
        else:
            raise SliceattnUsageError("Unknown gradient check module '{}', expected one of {}".format(
                module, ", ".join(GRADCHECK_MODULES)))
        directory = ensure_directory(DEFAULT_GRADCHECK_DIR if out_dir is None else out_dir)
        path = directory / GRADCHECK_FILENAME
        write_text_atomic(path, format_gradcheck(results, tolerance))
        self._write_manifest('gradcheck', directory, [path])
        return results, tolerance

    def dump_attention(self, checkpoint_path, volume_path, key_slice, out_dir, channel=0, region=None):
        """
        Write the attention fields a checkpoint produces for the deck around key_slice of a volume

        :returns: list of paths written
        :raises SliceattnInputError: if key_slice is outside the volume or channel out of range
        """
        detector = self.load_detector(checkpoint_path)
        volume = read_volume(volume_path)
        deck = SliceDeck.from_volume(volume.voxels, key_slice, detector.config.num_images, volume.slice_interval_mm,
                                     Path(volume_path).stem)
        fields = detector.attention_fields(deck)
        directory = ensure_directory(out_dir)
        paths = dump_attention(fields, directory, detector.config.stride, channel, region)
        self._write_manifest('dump-attention', directory, paths,
                             self.run_config._replace(pipeline=detector.config))
        return paths
