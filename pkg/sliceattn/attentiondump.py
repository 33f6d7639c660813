"""
Attention field dumps

Contextual fields are written as a CSV with one row per grouped image and one column per feature
cell (y, x) of the selected channel.  Spatial fields are written as one 8-bit binary PGM (P5) per
grouped image, scaled so that the maximum of each map is 255.
"""
import csv
import io
import math
from collections import namedtuple
from logging import getLogger
from pathlib import Path

import numpy as np

from .sliceattn_errors import SliceattnInputError, SliceattnUsageError
from .attention import AttentionKinds
from .utils import write_text_atomic, write_bytes_atomic

CONTEXTUAL_FILENAME_FORMAT = "contextual_ch{:02d}.csv"
SPATIAL_FILENAME_FORMAT = "spatial_ch{:02d}_image{}.pgm"

Region = namedtuple('Region', 'x1 y1 x2 y2')

def parse_region(text):
    """
    Region from 'x1,y1,x2,y2' (image pixels)

    :raises SliceattnUsageError: if the text is not four numbers forming a non-empty box
    """
    try:
        values = [float(value) for value in text.split(",")]
    except ValueError:
        values = []
    if len(values) != 4 or values[2] <= values[0] or values[3] <= values[1]:
        raise SliceattnUsageError("Region must be 'x1,y1,x2,y2' with x1 < x2 and y1 < y2, got '{}'".format(text))
    return Region(*values)

def image_labels(num_images):
    """
    Row labels of the grouped images as offsets from the key image: K-1, K, K+1, ...
    """
    centre = (num_images - 1) // 2
    return ["K" if image == centre else "K{:+d}".format(image - centre) for image in range(num_images)]

def region_cells(region, stride, feature_shape):
    """
    Feature cells (y, x) whose receptive window of stride x stride pixels overlaps region

    :returns: list of (y, x) in row-major order, all cells when region is None
    """
    height, width = feature_shape
    if region is None:
        return [(y, x) for y in range(height) for x in range(width)]
    first_x = min(max(int(math.floor(region.x1 / stride)), 0), width - 1)
    first_y = min(max(int(math.floor(region.y1 / stride)), 0), height - 1)
    last_x = min(max(int(math.ceil(region.x2 / stride)) - 1, first_x), width - 1)
    last_y = min(max(int(math.ceil(region.y2 / stride)) - 1, first_y), height - 1)
    return [(y, x) for y in range(first_y, last_y + 1) for x in range(first_x, last_x + 1)]

def format_contextual(weights, channel, cells):
    """
    Contextual CSV text of one channel

    :param weights: numpy [M, D, H, W] contextual field
    :param channel: feature channel d
    :param cells: list of (y, x) columns
    """
    text = io.StringIO()
    writer = csv.writer(text, lineterminator="\n")
    writer.writerow(["image"] + ["y{}_x{}".format(y, x) for y, x in cells])
    for label, plane in zip(image_labels(weights.shape[0]), weights[:, channel]):
        writer.writerow([label] + [repr(float(plane[y, x])) for y, x in cells])
    return text.getvalue()

def encode_pgm(plane):
    """
    Binary PGM bytes of a non-negative [H, W] map scaled so its maximum is 255
    """
    height, width = plane.shape
    peak = float(np.max(plane))
    scaled = plane * (255.0 / peak) if peak > 0.0 else np.zeros_like(plane)
    pixels = np.clip(np.round(scaled), 0, 255).astype(np.uint8)
    return "P5\n{} {}\n255\n".format(width, height).encode("ascii") + pixels.tobytes()

def dump_attention(fields, directory, stride, channel=0, region=None):
    """
    Write the contextual CSV and spatial PGMs of the fields of one deck

    :param fields: list of AttentionField from SliceAttentionDetector.attention_fields()
    :param directory: existing output directory
    :param stride: backbone stride, pixels per feature cell
    :param channel: feature channel to dump
    :param region: Region restricting the contextual columns, or None
    :returns: list of paths written
    :raises SliceattnUsageError: if there are no fields
    :raises SliceattnInputError: if channel is not a feature channel
    """
    logger = getLogger(__name__)
    if not fields:
        raise SliceattnUsageError("The model has no attention module enabled, nothing to dump")
    directory = Path(directory)
    paths = []
    for field in fields:
        weights = field.weights.data
        if not 0 <= channel < weights.shape[1]:
            raise SliceattnInputError("Channel {} outside the {} feature channels".format(channel, weights.shape[1]))
        if field.kind == AttentionKinds.CONTEXTUAL:
            path = directory / CONTEXTUAL_FILENAME_FORMAT.format(channel)
            cells = region_cells(region, stride, weights.shape[2:])
            write_text_atomic(path, format_contextual(weights, channel, cells))
            paths.append(path)
        else:
            for image in range(weights.shape[0]):
                path = directory / SPATIAL_FILENAME_FORMAT.format(channel, image)
                write_bytes_atomic(path, encode_pgm(weights[image, channel]))
                paths.append(path)
    logger.info("Wrote %d attention dump files to %s", len(paths), directory)
    return paths
