"""
Utility functions for sliceattn
"""
import os
from pathlib import Path

import numpy as np

from .sliceattn_errors import SliceattnIOError, SliceattnFileFormatError, SliceattnConfigError

THREADS_ENV_KEY = 'SLICEATTN_THREADS'

def thread_limit(env_key=THREADS_ENV_KEY):
    """
    Number of worker threads allowed by the environment

    :returns: value of SLICEATTN_THREADS, 1 when unset
    :raises SliceattnConfigError: if the value is not a positive integer
    """
    value = os.getenv(env_key, None)
    if not value:
        return 1
    try:
        threads = int(value)
    except ValueError:
        raise SliceattnConfigError("{} must be a positive integer, got '{}'".format(env_key, value))
    if threads < 1:
        raise SliceattnConfigError("{} must be a positive integer, got '{}'".format(env_key, value))
    return threads

def ensure_directory(path):
    """
    Create a directory (and parents) if it does not exist

    :param path: directory path
    :returns: the directory as Path
    :raises SliceattnIOError: if the directory cannot be created
    """
    directory = Path(path)
    try:
        directory.mkdir(exist_ok=True, parents=True)
    except OSError as error:
        raise SliceattnIOError("Unable to create directory '{}': {}".format(directory, error))
    return directory

def write_bytes_atomic(path, content):
    """
    Write a file through a temporary sibling that is renamed into place

    A reader never sees a partially written file and a failed write leaves any previous file intact.

    :param path: destination file
    :param content: bytes to write
    :raises SliceattnIOError: on any file system error
    """
    path = Path(path)
    temporary = path.with_name(path.name + ".tmp")
    try:
        with open(temporary, "wb") as binfile:
            binfile.write(content)
        os.replace(temporary, path)
    except OSError as error:
        raise SliceattnIOError("Unable to write '{}': {}".format(path, error))

def write_text_atomic(path, text):
    """
    Text (utf-8) version of write_bytes_atomic()
    """
    write_bytes_atomic(path, text.encode("utf-8"))

def read_bytes(path):
    """
    Read a whole file

    :raises SliceattnIOError: if the file cannot be read
    """
    try:
        with open(path, "rb") as binfile:
            return binfile.read()
    except OSError as error:
        raise SliceattnIOError("Unable to read '{}': {}".format(path, error))

class ByteReader(object):
    """
    Sequential little-endian reader over a bytes object

    :param content: bytes to read
    :param source: name of the content's origin, used in error messages
    """

    def __init__(self, content, source=""):
        self.content = content
        self.source = source
        self.offset = 0

    def take(self, count):
        """
        Next count bytes

        :raises SliceattnFileFormatError: if the content ends early
        """
        if self.offset + count > len(self.content):
            raise SliceattnFileFormatError("'{}' is truncated at byte {}".format(self.source, len(self.content)))
        chunk = self.content[self.offset:self.offset + count]
        self.offset += count
        return chunk

    def array(self, dtype, count):
        """
        Next count values of a little-endian numpy dtype, as a new numpy array
        """
        dtype = np.dtype(dtype)
        return np.frombuffer(self.take(dtype.itemsize * count), dtype=dtype).copy()

    def u32(self):
        """
        Next little-endian unsigned 32-bit integer
        """
        return int(self.array('<u4', 1)[0])

    def f64(self):
        """
        Next little-endian 64-bit real
        """
        return float(self.array('<f8', 1)[0])

    def at_end(self):
        """
        True if every byte has been consumed
        """
        return self.offset == len(self.content)

def u32_bytes(*values):
    """
    Little-endian unsigned 32-bit encoding of values
    """
    return np.array(values, dtype='<u4').tobytes()

