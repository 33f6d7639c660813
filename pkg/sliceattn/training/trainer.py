"""
End-to-end training loop

Samples are visited in a seeded shuffle order, grouped into mini-batches; the gradients of the
samples of a batch are averaged and applied with sgd_step().  Every sample is differentiated on a
private copy of the parameters, so samples may run on worker threads while the batch gradient is
still summed in sample order and stays bitwise reproducible.
"""
import csv
import io
from collections import namedtuple, OrderedDict
from concurrent.futures import ThreadPoolExecutor
from logging import getLogger
from pathlib import Path

import numpy as np

from ..sliceattn_errors import SliceattnInputError, SliceattnNumericError, SliceattnTrainingDivergedError
from ..checkpoint import write_checkpoint
from ..detection.boxes import boxes_to_array
from ..detection.loss import detection_loss
from ..detection.model import SliceAttentionDetector
from ..tensorcore import backward
from ..utils import write_text_atomic, write_bytes_atomic, read_bytes
from .optimizer import SgdState, sgd_step, learning_rate

LOSS_LOG_FILENAME = "loss_log.csv"
LOSS_LOG_FIELDS = ('epoch', 'step', 'loss_cls', 'loss_reg', 'loss_total', 'lr')
CHECKPOINT_FILENAME = "checkpoint.satn"
EPOCH_CHECKPOINT_FORMAT = "epoch_{:03d}.satn"

LossRecord = namedtuple('LossRecord', LOSS_LOG_FIELDS)
SampleResult = namedtuple('SampleResult', 'grads loss_cls loss_reg loss_total')
TrainResult = namedtuple('TrainResult', 'detector records checkpoints')

def sample_gradients(detector, sample):
    """
    Loss and parameter gradients of one sample, computed on a private parameter copy

    :param detector: SliceAttentionDetector holding the current parameters (not modified)
    :param sample: Sample with deck and ground_truth
    :returns: SampleResult with grads as OrderedDict name -> numpy array
    """
    replica = detector.replicate()
    ground_truth = boxes_to_array(sample.ground_truth)
    output = replica.forward(sample.deck, ground_truth)
    losses = detection_loss(output, ground_truth, replica.config)
    backward(losses.total)
    grads = OrderedDict((name, np.zeros_like(tensor.data) if tensor.grad is None else tensor.grad)
                        for name, tensor in replica.params.items())
    return SampleResult(grads, losses.cls.item(), losses.reg.item(), losses.total.item())

def format_loss_log(records):
    """
    Loss records as CSV text with header
    """
    text = io.StringIO()
    writer = csv.writer(text, lineterminator="\n")
    writer.writerow(LOSS_LOG_FIELDS)
    for record in records:
        writer.writerow([record.epoch, record.step, repr(record.loss_cls), repr(record.loss_reg),
                         repr(record.loss_total), repr(record.lr)])
    return text.getvalue()

class Trainer(object):
    """
    Trains a SliceAttentionDetector on a list of samples

    :param pipeline_config: PipelineConfig of the detector
    :param train_config: TrainConfig
    :param output_dir: directory receiving checkpoints and the loss log, nothing is written when None
    :param threads: worker threads computing the sample gradients of a batch
    """

    def __init__(self, pipeline_config, train_config, output_dir=None, threads=1):
        self.logger = getLogger(__name__)
        self.pipeline_config = pipeline_config
        self.train_config = train_config
        self.output_dir = None if output_dir is None else Path(output_dir)
        self.threads = max(1, int(threads))

    def batch_gradients(self, detector, batch):
        """
        Averaged gradients and mean losses of a batch

        :returns: tuple (OrderedDict name -> numpy gradient, mean cls loss, mean reg loss, mean total loss)
        """
        if self.threads > 1 and len(batch) > 1:
            with ThreadPoolExecutor(max_workers=min(self.threads, len(batch))) as pool:
                results = list(pool.map(lambda sample: sample_gradients(detector, sample), batch))
        else:
            results = [sample_gradients(detector, sample) for sample in batch]
        count = float(len(results))
        grads = OrderedDict()
        for name in detector.params:
            total = np.zeros_like(detector.params[name].data)
            for result in results:
                total = total + result.grads[name]
            grads[name] = total / count
        return (grads, sum(result.loss_cls for result in results) / count,
                sum(result.loss_reg for result in results) / count,
                sum(result.loss_total for result in results) / count)

    def train(self, samples, detector=None):
        """
        Run every epoch of the schedule

        A checkpoint and the loss log are written after every epoch.  If the loss or a gradient
        becomes non-finite training stops with SliceattnTrainingDivergedError; the checkpoint of the
        last completed epoch is kept.

        :param samples: non-empty list of Sample
        :param detector: detector to continue training, a freshly initialized one when None
        :returns: TrainResult with the trained detector, the loss records and the checkpoint paths
        :raises SliceattnInputError: if samples is empty
        """
        if not samples:
            raise SliceattnInputError("Cannot train on an empty data set")
        config = self.train_config
        detector = SliceAttentionDetector(self.pipeline_config) if detector is None else detector
        shuffle = np.random.default_rng(config.seed)
        state = SgdState()
        records = []
        checkpoints = []
        step = 0
        for epoch in range(1, config.epochs + 1):
            lr = learning_rate(config, epoch)
            order = shuffle.permutation(len(samples))
            epoch_losses = []
            for start in range(0, len(order), config.batch_size):
                step += 1
                batch = [samples[index] for index in order[start:start + config.batch_size]]
                try:
                    grads, loss_cls, loss_reg, loss_total = self.batch_gradients(detector, batch)
                except SliceattnNumericError as error:
                    raise SliceattnTrainingDivergedError("Training diverged at epoch {} step {}: {}{}".format(
                        epoch, step, error, self._last_checkpoint_note(checkpoints)))
                if not np.isfinite(loss_total):
                    raise SliceattnTrainingDivergedError("Training loss is {} at epoch {} step {}{}".format(
                        loss_total, epoch, step, self._last_checkpoint_note(checkpoints)))
                sgd_step(detector.params, grads, state, config, lr)
                record = LossRecord(epoch, step, loss_cls, loss_reg, loss_total, lr)
                records.append(record)
                epoch_losses.append(record)
                self.logger.debug("Epoch %d step %d: cls %.6f reg %.6f total %.6f", epoch, step, loss_cls,
                                  loss_reg, loss_total)
            self.logger.info("Epoch %d/%d: mean loss cls %.6f reg %.6f total %.6f, lr %g", epoch, config.epochs,
                             np.mean([record.loss_cls for record in epoch_losses]),
                             np.mean([record.loss_reg for record in epoch_losses]),
                             np.mean([record.loss_total for record in epoch_losses]), lr)
            if self.output_dir is not None:
                checkpoints.append(self.save_epoch(detector, epoch, records))
        return TrainResult(detector, records, checkpoints)

    def save_epoch(self, detector, epoch, records):
        """
        Write the epoch checkpoint, refresh the latest checkpoint and the loss log

        :returns: path of the epoch checkpoint
        """
        epoch_path = self.output_dir / EPOCH_CHECKPOINT_FORMAT.format(epoch)
        write_checkpoint(epoch_path, detector.params)
        write_bytes_atomic(self.output_dir / CHECKPOINT_FILENAME, read_bytes(epoch_path))
        write_text_atomic(self.output_dir / LOSS_LOG_FILENAME, format_loss_log(records))
        return epoch_path

    @staticmethod
    def _last_checkpoint_note(checkpoints):
        if not checkpoints:
            return ""
        return "; last good checkpoint {}".format(checkpoints[-1])
