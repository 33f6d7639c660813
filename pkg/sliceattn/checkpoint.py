"""
Binary model checkpoints

Layout (all integers u32 little-endian):

* magic b"SATN", format version
* per tensor, up to the end of the file: name length, utf-8 name, rank, extents, little-endian
  64-bit reals in row-major order

The pipeline configuration is not part of the checkpoint; it is kept in the run manifest written
next to it.
"""
from collections import OrderedDict
from logging import getLogger

import numpy as np

from .sliceattn_errors import SliceattnFileFormatError, SliceattnConfigError
from .tensorcore import Tensor
from .tensorcore.tensor import MAX_RANK
from .configkeys import ParameterNames
from .utils import ByteReader, u32_bytes, write_bytes_atomic, read_bytes

CHECKPOINT_MAGIC = b"SATN"
CHECKPOINT_VERSION = 1

def encode_checkpoint(params):
    """
    Serialize named tensors

    :param params: mapping name -> Tensor (or numpy array), written in mapping order
    :returns: bytes
    """
    chunks = [CHECKPOINT_MAGIC, u32_bytes(CHECKPOINT_VERSION)]
    for name, tensor in params.items():
        values = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor, dtype=np.float64)
        encoded_name = name.encode("utf-8")
        chunks.append(u32_bytes(len(encoded_name)))
        chunks.append(encoded_name)
        chunks.append(u32_bytes(values.ndim, *values.shape))
        chunks.append(np.ascontiguousarray(values, dtype='<f8').tobytes())
    return b"".join(chunks)

def decode_checkpoint(content, source=""):
    """
    Parse checkpoint bytes

    :param content: bytes
    :param source: origin used in error messages
    :returns: OrderedDict name -> numpy array
    :raises SliceattnFileFormatError: on a bad magic, an unknown version or malformed content
    """
    reader = ByteReader(content, source)
    if reader.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise SliceattnFileFormatError("'{}' is not a checkpoint (bad magic)".format(source))
    version = reader.u32()
    if version != CHECKPOINT_VERSION:
        raise SliceattnFileFormatError("'{}' has unsupported checkpoint version {}".format(source, version))
    tensors = OrderedDict()
    while not reader.at_end():
        try:
            name = reader.take(reader.u32()).decode("utf-8")
        except UnicodeDecodeError:
            raise SliceattnFileFormatError("'{}' holds a tensor name that is not utf-8".format(source))
        rank = reader.u32()
        if rank > MAX_RANK:
            raise SliceattnFileFormatError("'{}': tensor '{}' has rank {}".format(source, name, rank))
        shape = tuple(int(extent) for extent in reader.array('<u4', rank))
        tensors[name] = reader.array('<f8', int(np.prod(shape))).astype(np.float64).reshape(shape)
    return tensors

def write_checkpoint(path, params):
    """
    Write named tensors to a checkpoint file (atomically)
    """
    getLogger(__name__).debug("Writing %d tensors to %s", len(params), path)
    write_bytes_atomic(path, encode_checkpoint(params))

def read_checkpoint(path):
    """
    Read a checkpoint file

    :returns: OrderedDict name -> numpy array
    """
    return decode_checkpoint(read_bytes(path), str(path))

def parameters_from_checkpoint(tensors, expected_shapes, attention_config):
    """
    Check checkpoint tensors against a pipeline's parameter set and wrap them as parameters

    :param tensors: mapping name -> numpy array from read_checkpoint()
    :param expected_shapes: OrderedDict name -> shape of the configured pipeline
    :param attention_config: AttentionConfig of the configured pipeline
    :returns: OrderedDict name -> Tensor (requires grad) in expected_shapes order
    :raises SliceattnConfigError: if attention parameters disagree with the enabled modules, or any
        tensor is missing, unexpected or of the wrong shape
    """
    attention_names = [name for name in tensors if ParameterNames.is_attention(name)]
    has_contextual = ParameterNames.CONTEXTUAL_WEIGHT in attention_names
    has_spatial = ParameterNames.SPATIAL_WEIGHT in attention_names
    if has_contextual != attention_config.enable_contextual or has_spatial != attention_config.enable_spatial:
        raise SliceattnConfigError(
            "Checkpoint attention parameters {} do not match the configuration (contextual {}, spatial {})".format(
                attention_names, attention_config.enable_contextual, attention_config.enable_spatial))
    missing = [name for name in expected_shapes if name not in tensors]
    unexpected = [name for name in tensors if name not in expected_shapes]
    if missing or unexpected:
        raise SliceattnConfigError("Checkpoint does not match the pipeline: missing {}, unexpected {}".format(
            missing, unexpected))
    params = OrderedDict()
    for name, shape in expected_shapes.items():
        if tensors[name].shape != tuple(shape):
            raise SliceattnConfigError("Checkpoint tensor '{}' has shape {}, the pipeline needs {}".format(
                name, tensors[name].shape, tuple(shape)))
        params[name] = Tensor(tensors[name], requires_grad=True, name=name)
    return params
