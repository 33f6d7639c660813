"""
Position-sensitive ROI average pooling with integer binning

The score map has k*k*G channels.  Every region is split into k x k bins; channel bin * G + g
(bin = row * k + column) averages only over its own bin, so each channel group is sensitive to one
relative position inside the region.  Bin edges are whole feature cells; a bin whose extent rounds
to nothing is widened to one cell.
"""
import math

import numpy as np

from ..sliceattn_errors import SliceattnDimensionError
from ..tensorcore import Tensor

def roi_to_cells(box, stride, height, width):
    """
    Feature cell range [cx1, cx2) x [cy1, cy2) covered by an image pixel box

    :param box: sequence (x1, y1, x2, y2) in image pixels
    :param stride: image pixels per feature cell
    :param height: feature rows
    :param width: feature columns
    :returns: tuple (cx1, cy1, cx2, cy2) of ints, non-empty and inside the map
    """
    cx1 = min(max(int(math.floor(box[0] / stride)), 0), width - 1)
    cy1 = min(max(int(math.floor(box[1] / stride)), 0), height - 1)
    cx2 = min(max(int(math.ceil(box[2] / stride)), cx1 + 1), width)
    cy2 = min(max(int(math.ceil(box[3] / stride)), cy1 + 1), height)
    return cx1, cy1, cx2, cy2

def bin_edges(start, stop, bins):
    """
    Integer edges of bins equal parts of the cell range [start, stop)

    :returns: list of (begin, end) per bin, every bin at least one cell wide; bins overlap when the
        range has fewer cells than bins
    """
    extent = stop - start
    edges = []
    for index in range(bins):
        begin = start + (index * extent) // bins
        end = start + -((-(index + 1) * extent) // bins)
        if end <= begin:
            end = begin + 1
        edges.append((begin, end))
    return edges

def pooling_cells(rois, stride, height, width, bins):
    """
    Cell ranges of every bin of every region

    :param rois: numpy [R, 4] boxes in image pixels
    :returns: list (one per region) of k*k tuples (y_begin, y_end, x_begin, x_end) in row-major bin order
    """
    layout = []
    for box in np.asarray(rois, dtype=np.float64).reshape(-1, 4):
        cx1, cy1, cx2, cy2 = roi_to_cells(box, stride, height, width)
        rows = bin_edges(cy1, cy2, bins)
        columns = bin_edges(cx1, cx2, bins)
        region = []
        for y_begin, y_end in rows:
            for x_begin, x_end in columns:
                region.append((y_begin, y_end, x_begin, x_end))
        layout.append(region)
    return layout

def psroi_pool(score_map, rois, stride, bins, group_channels):
    """
    Pool every region into a k*k*G vector

    :param score_map: Tensor [k*k*G, H, W]
    :param rois: numpy [R, 4] boxes in image pixels
    :param stride: image pixels per feature cell
    :param bins: k
    :param group_channels: G
    :returns: Tensor [R, k*k*G], entry [r, bin * G + g] is the mean of channel bin * G + g over
        the cells of that bin
    :raises SliceattnDimensionError: if the score map does not have k*k*G channels
    """
    if score_map.ndim != 3 or score_map.shape[0] != bins * bins * group_channels:
        raise SliceattnDimensionError("psroi_pool: score map {} needs {} channels".format(
            score_map.shape, bins * bins * group_channels))
    channels, height, width = score_map.shape
    layout = pooling_cells(rois, stride, height, width, bins)
    pooled = np.zeros((len(layout), channels))
    for region_index, region in enumerate(layout):
        for bin_index, (y_begin, y_end, x_begin, x_end) in enumerate(region):
            group = slice(bin_index * group_channels, (bin_index + 1) * group_channels)
            pooled[region_index, group] = score_map.data[group, y_begin:y_end, x_begin:x_end].mean(axis=(1, 2))

    def _backward(grad):
        grad_map = np.zeros((channels, height, width))
        for region_index, region in enumerate(layout):
            for bin_index, (y_begin, y_end, x_begin, x_end) in enumerate(region):
                group = slice(bin_index * group_channels, (bin_index + 1) * group_channels)
                cells = (y_end - y_begin) * (x_end - x_begin)
                grad_map[group, y_begin:y_end, x_begin:x_end] += \
                    grad[region_index, group][:, np.newaxis, np.newaxis] / cells
        return (grad_map,)

    return Tensor.from_op(pooled, (score_map,), _backward, "psroi_pool")
