"""
Stratification of samples by lesion diameter and slice interval

Diameter bins are left-closed: [0, 10), [10, 30), [30, inf).  The interval bins split at 2.5 mm,
with 2.5 itself in the upper bin.
"""
from collections import OrderedDict

from ..sliceattn_errors import SliceattnInputError

class Criteria(object):
    """
    Stratification criteria
    """
    DIAMETER = 'diameter'
    SLICE_INTERVAL = 'slice_interval'

DIAMETER_BINS = ('<10', '10~30', '>30')
INTERVAL_BINS = ('<2.5', '>2.5')

def diameter_bin(diameter):
    """
    Diameter stratum of a lesion
    """
    if diameter < 10.0:
        return DIAMETER_BINS[0]
    if diameter < 30.0:
        return DIAMETER_BINS[1]
    return DIAMETER_BINS[2]

def interval_bin(slice_interval_mm):
    """
    Slice interval stratum of a volume
    """
    return INTERVAL_BINS[0] if slice_interval_mm < 2.5 else INTERVAL_BINS[1]

def stratum_of(item, criterion):
    """
    Stratum of an item carrying diameter and slice_interval_mm attributes
    """
    if criterion == Criteria.DIAMETER:
        return diameter_bin(item.diameter)
    if criterion == Criteria.SLICE_INTERVAL:
        return interval_bin(item.slice_interval_mm)
    raise SliceattnInputError("Unknown stratification criterion '{}'".format(criterion))

def strata_names(criterion):
    """
    All bins of a criterion in reporting order
    """
    if criterion == Criteria.DIAMETER:
        return DIAMETER_BINS
    if criterion == Criteria.SLICE_INTERVAL:
        return INTERVAL_BINS
    raise SliceattnInputError("Unknown stratification criterion '{}'".format(criterion))

def stratify(samples, criterion):
    """
    Partition samples by criterion

    :param samples: iterable of items with diameter and slice_interval_mm attributes
    :param criterion: Criteria.DIAMETER or Criteria.SLICE_INTERVAL
    :returns: OrderedDict bin name -> list of samples, every bin present (possibly empty), input
        order kept inside each bin
    """
    partition = OrderedDict((name, []) for name in strata_names(criterion))
    for sample in samples:
        partition[stratum_of(sample, criterion)].append(sample)
    return partition
