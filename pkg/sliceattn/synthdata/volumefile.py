"""
Volume and annotation files of a generated data set

Volume file (.svol), integers u32 little-endian:

* magic b"SVOL", format version
* slice count, height, width
* slice interval in mm as little-endian 64-bit real
* voxels as little-endian 32-bit reals, slice by slice in row-major order

All annotations of a data set are in one CSV file, annotations.csv, next to the volumes.
"""
import csv
import io
from collections import OrderedDict, namedtuple
from logging import getLogger
from pathlib import Path

import numpy as np

from ..sliceattn_errors import SliceattnFileFormatError, SliceattnIOError
from ..detection.boxes import Box
from ..detection.model import SliceDeck
from ..utils import ByteReader, u32_bytes, write_bytes_atomic, write_text_atomic, read_bytes
from .phantom import Sample

VOLUME_MAGIC = b"SVOL"
VOLUME_VERSION = 1
VOLUME_SUFFIX = ".svol"
ANNOTATIONS_FILENAME = "annotations.csv"
ANNOTATION_FIELDS = ('volume_id', 'key_slice', 'x1', 'y1', 'x2', 'y2', 'diameter', 'slice_span')

Annotation = namedtuple('Annotation', ANNOTATION_FIELDS)
VolumeData = namedtuple('VolumeData', 'voxels slice_interval_mm')

def encode_volume(voxels, slice_interval_mm):
    """
    Serialize a volume

    :param voxels: array-like [S, H, W]
    :param slice_interval_mm: slice distance
    :returns: bytes
    """
    voxels = np.asarray(voxels)
    if voxels.ndim != 3:
        raise SliceattnFileFormatError("A volume needs shape [S, H, W], got {}".format(voxels.shape))
    return b"".join([VOLUME_MAGIC, u32_bytes(VOLUME_VERSION, *voxels.shape),
                     np.array([slice_interval_mm], dtype='<f8').tobytes(),
                     np.ascontiguousarray(voxels, dtype='<f4').tobytes()])

def decode_volume(content, source=""):
    """
    Parse volume bytes

    :returns: VolumeData with voxels as numpy.float64 [S, H, W]
    :raises SliceattnFileFormatError: on a bad magic, version or size
    """
    reader = ByteReader(content, source)
    if reader.take(len(VOLUME_MAGIC)) != VOLUME_MAGIC:
        raise SliceattnFileFormatError("'{}' is not a volume file (bad magic)".format(source))
    version = reader.u32()
    if version != VOLUME_VERSION:
        raise SliceattnFileFormatError("'{}' has unsupported volume version {}".format(source, version))
    shape = (reader.u32(), reader.u32(), reader.u32())
    interval = reader.f64()
    voxels = reader.array('<f4', int(np.prod(shape))).astype(np.float64).reshape(shape)
    if not reader.at_end():
        raise SliceattnFileFormatError("'{}' has trailing bytes after the voxels".format(source))
    return VolumeData(voxels, interval)

def write_volume(path, voxels, slice_interval_mm):
    """
    Write a volume file
    """
    write_bytes_atomic(path, encode_volume(voxels, slice_interval_mm))

def read_volume(path):
    """
    Read a volume file

    :returns: VolumeData
    """
    return decode_volume(read_bytes(path), str(path))

def annotations_of(sample):
    """
    Annotation rows of a generated sample
    """
    return [Annotation(sample.volume_id, sample.deck.key_index, box.x1, box.y1, box.x2, box.y2,
                       sample.diameter, sample.slice_span) for box in sample.ground_truth]

def format_annotations(annotations):
    """
    Annotation rows as CSV text with header
    """
    text = io.StringIO()
    writer = csv.writer(text, lineterminator="\n")
    writer.writerow(ANNOTATION_FIELDS)
    for row in annotations:
        writer.writerow([row.volume_id, row.key_slice, repr(float(row.x1)), repr(float(row.y1)),
                         repr(float(row.x2)), repr(float(row.y2)), repr(float(row.diameter)), row.slice_span])
    return text.getvalue()

def read_annotations(path):
    """
    Read annotations.csv

    :returns: list of Annotation in file order
    :raises SliceattnFileFormatError: on a wrong header or malformed rows
    """
    try:
        with open(path, newline="") as csvfile:
            rows = list(csv.reader(csvfile))
    except OSError as error:
        raise SliceattnIOError("Unable to read '{}': {}".format(path, error))
    if not rows or tuple(rows[0]) != ANNOTATION_FIELDS:
        raise SliceattnFileFormatError("'{}' does not start with the header {}".format(path, ",".join(ANNOTATION_FIELDS)))
    annotations = []
    for number, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            annotations.append(Annotation(row[0], int(row[1]), float(row[2]), float(row[3]), float(row[4]),
                                          float(row[5]), float(row[6]), int(row[7])))
        except (ValueError, IndexError):
            raise SliceattnFileFormatError("'{}' line {} is malformed: {}".format(path, number, ",".join(row)))
    return annotations

def write_dataset(samples, directory):
    """
    Write every sample as <volume_id>.svol plus one annotations.csv

    :param samples: iterable of Sample
    :param directory: existing output directory
    :returns: list of the samples written
    """
    directory = Path(directory)
    written = []
    annotations = []
    for sample in samples:
        write_volume(directory / (sample.volume_id + VOLUME_SUFFIX), sample.deck.slices.data, sample.slice_interval_mm)
        annotations.extend(annotations_of(sample))
        written.append(sample)
    write_text_atomic(directory / ANNOTATIONS_FILENAME, format_annotations(annotations))
    getLogger(__name__).info("Wrote %d volumes to %s", len(written), directory)
    return written

def read_dataset(directory, num_images):
    """
    Load a data set written by write_dataset()

    Every annotated volume becomes one Sample whose deck holds the 3M slices around its key slice.

    :param directory: data directory
    :param num_images: M of the pipeline the decks are cut for
    :returns: list of Sample ordered by volume id
    :raises SliceattnIOError: if the directory or its annotations file is missing or lists no volume
    """
    directory = Path(directory)
    annotations_path = directory / ANNOTATIONS_FILENAME
    if not directory.is_dir() or not annotations_path.is_file():
        raise SliceattnIOError("No data set found in '{}' ({} missing)".format(directory, ANNOTATIONS_FILENAME))
    by_volume = OrderedDict()
    for row in read_annotations(annotations_path):
        by_volume.setdefault(row.volume_id, []).append(row)
    if not by_volume:
        raise SliceattnIOError("Data set '{}' has no annotated volumes".format(directory))

    samples = []
    for identifier in sorted(by_volume):
        rows = by_volume[identifier]
        volume = read_volume(directory / (identifier + VOLUME_SUFFIX))
        deck = SliceDeck.from_volume(volume.voxels, rows[0].key_slice, num_images, volume.slice_interval_mm,
                                     identifier)
        boxes = [Box(row.x1, row.y1, row.x2, row.y2) for row in rows]
        samples.append(Sample(deck, boxes, rows[0].diameter, rows[0].slice_span, volume.slice_interval_mm,
                              identifier))
    return samples
