"""
Portable tensor container used at every module boundary.

Samples, probability maps, features and checkpoints are exchanged between
the subcommands of the :mod:`wordseg.cli` module as files in one simple
binary format. The format is deliberately plain so that it can be read from
any language without a library.


File layout
===========

All integers are unsigned 32-bit little-endian values.

.. code-block:: text

    magic           4 bytes, "IFSG"
    version         u32, currently 1
    section count   u32
    per section:
        name length u32, followed by the UTF-8 encoded name
        dtype code  u32 (0 = f32, 1 = f64, 2 = u32)
        ndim        u32, followed by ndim u32 dimensions
        payload     product(dims) * width bytes, row-major, little-endian

Section names are unique within a file. Sections are written in the order
of the mapping given to :func:`write_container`, hence writing the same
mapping twice gives byte-identical files.


Module documentation
====================

"""
import collections
import struct

import numpy as np

from wordseg import utils


MAGIC = b"IFSG"
VERSION = 1

DTYPES = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("<u4"),
}


class ContainerError(ValueError):
    """Base class of all errors raised when reading containers."""


class BadMagicError(ContainerError):
    """The file does not start with the container magic."""


class UnsupportedVersionError(ContainerError):
    """The container version is not supported by this reader."""


class TruncatedContainerError(ContainerError):
    """The file ended before all announced data could be read."""


class DuplicateSectionError(ContainerError):
    """A section name occurs more than once."""


class UnknownDtypeError(ContainerError):
    """The dtype of an array or section is not supported."""


def dtype_code(array=None):
    """
    Return the dtype code used for an array in the container.

    Parameters
    ----------
    array : :class:`numpy.ndarray`
        Array to be stored

    Returns
    -------
    code : :class:`int`
        Dtype code as written to the file

    Raises
    ------
    UnknownDtypeError
        Raised if the array cannot be stored without loss.

    """
    kind, size = array.dtype.kind, array.dtype.itemsize
    if kind == "f" and size == 4:
        return 0
    if kind == "f" and size == 8:
        return 1
    unsigned = kind == "i" and (array.size == 0 or array.min() >= 0)
    if kind in "ub" or unsigned:
        if array.size and array.max() > 0xFFFFFFFF:
            raise UnknownDtypeError("Integer values exceed u32 range")
        return 2
    raise UnknownDtypeError(f"Cannot store dtype {array.dtype}")


def encode_container(tensors=None):
    """
    Serialise a mapping of named arrays to bytes.

    Parameters
    ----------
    tensors : :class:`dict`
        Mapping of section names to :class:`numpy.ndarray` objects

    Returns
    -------
    data : :class:`bytes`
        Serialised container

    """
    tensors = tensors or {}
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, array in tensors.items():
        array = np.asarray(array)
        code = dtype_code(array)
        encoded_name = name.encode("utf8")
        chunks.append(struct.pack("<I", len(encoded_name)))
        chunks.append(encoded_name)
        chunks.append(struct.pack("<II", code, array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(
            np.ascontiguousarray(array, dtype=DTYPES[code]).tobytes()
        )
    return b"".join(chunks)


def decode_container(data=b""):
    """
    Deserialise bytes to an ordered mapping of named arrays.

    Parameters
    ----------
    data : :class:`bytes`
        Serialised container

    Returns
    -------
    tensors : :class:`collections.OrderedDict`
        Mapping of section names to :class:`numpy.ndarray` objects, in file
        order. Arrays carry the native dtype corresponding to the dtype code.

    Raises
    ------
    BadMagicError
        Raised if the data do not start with the magic.

    UnsupportedVersionError
        Raised for unknown versions.

    TruncatedContainerError
        Raised if the data end prematurely.

    DuplicateSectionError
        Raised if a section name occurs twice.

    UnknownDtypeError
        Raised for unknown dtype codes.

    """
    reader = _Reader(data)
    if reader.read(4) != MAGIC:
        raise BadMagicError("Bad magic, not a tensor container")
    version = reader.u32()
    if version != VERSION:
        raise UnsupportedVersionError(f"Unsupported version {version}")
    tensors = collections.OrderedDict()
    for _ in range(reader.u32()):
        name = reader.read(reader.u32()).decode("utf8")
        if name in tensors:
            raise DuplicateSectionError(f'Duplicate section "{name}"')
        code = reader.u32()
        if code not in DTYPES:
            raise UnknownDtypeError(f"Unknown dtype code {code}")
        shape = tuple(reader.u32() for _ in range(reader.u32()))
        dtype = DTYPES[code]
        count = int(np.prod(shape, dtype=np.int64))
        payload = reader.read(count * dtype.itemsize)
        tensors[name] = (
            np.frombuffer(payload, dtype=dtype).reshape(shape).astype(
                dtype.newbyteorder("=")
            )
        )
    if reader.remaining():
        raise ContainerError("Trailing data after last section")
    return tensors


def write_container(tensors=None, path=""):
    """
    Write named arrays to a container file.

    The file is written to a temporary file first and renamed on success.

    Parameters
    ----------
    tensors : :class:`dict`
        Mapping of section names to :class:`numpy.ndarray` objects

    path : :class:`str`
        Name of the file to write

    """
    data = encode_container(tensors)
    with utils.atomic_write(path) as file:
        file.write(data)


def read_container(path=""):
    """
    Read named arrays from a container file.

    Parameters
    ----------
    path : :class:`str`
        Name of the file to read

    Returns
    -------
    tensors : :class:`collections.OrderedDict`
        Mapping of section names to arrays, see :func:`decode_container`

    """
    with open(path, "rb") as file:
        data = file.read()
    return decode_container(data)


class _Reader:
    def __init__(self, data=b""):
        self._data = memoryview(data)
        self._offset = 0

    def read(self, count=0):
        end = self._offset + count
        if end > len(self._data):
            raise TruncatedContainerError(
                f"Truncated container: needed {count} bytes at offset "
                f"{self._offset}, {len(self._data) - self._offset} left"
            )
        chunk = bytes(self._data[self._offset:end])
        self._offset = end
        return chunk

    def u32(self):
        return struct.unpack("<I", self.read(4))[0]

    def remaining(self):
        return len(self._data) - self._offset
