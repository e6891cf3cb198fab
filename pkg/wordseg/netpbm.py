"""
Reading and writing binary netpbm images (PGM and PPM).

Images are read from binary greyscale (P5) and colour (P6) files,
segmentation masks are written as binary greyscale files with one category
index per pixel. A file may contain several images one after another (a
netpbm "multi-image stream"); this is how several masks end up in one file.


Module documentation
====================

"""
import re

import numpy as np

from wordseg import utils


MAGICS = {b"P5": 1, b"P6": 3}

_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def decode_images(data=b""):
    """
    Decode all images of a netpbm stream.

    Parameters
    ----------
    data : :class:`bytes`
        Contents of a PGM (P5) or PPM (P6) file

    Returns
    -------
    images : :class:`list`
        Tuples ``(array, maxval)``; arrays have shape (height, width) for
        greyscale and (height, width, 3) for colour images, dtype uint16

    Raises
    ------
    ValueError
        Raised for unsupported or malformed files.

    """
    images = []
    offset = 0
    while data[offset:].strip():
        header = []
        for _ in range(4):
            match = _TOKEN.match(data, offset)
            if not match:
                raise ValueError("Malformed netpbm header")
            header.append(match.group(1))
            offset = match.end()
        magic, width, height, maxval = header
        if magic not in MAGICS:
            raise ValueError(f"Unsupported netpbm format {magic!r}")
        channels = MAGICS[magic]
        width, height, maxval = int(width), int(height), int(maxval)
        if width < 1 or height < 1 or not 0 < maxval < 65536:
            raise ValueError("Invalid netpbm image size or maxval")
        offset += 1
        dtype = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
        count = width * height * channels
        end = offset + count * dtype.itemsize
        if end > len(data):
            raise ValueError("Truncated netpbm image data")
        pixels = np.frombuffer(data[offset:end], dtype=dtype)
        shape = (height, width) if channels == 1 else (height, width, 3)
        images.append((pixels.reshape(shape).astype(np.uint16), maxval))
        offset = end
    if not images:
        raise ValueError("No image found")
    return images


def read_images(path=""):
    """Read all images of a PGM or PPM file, see :func:`decode_images`."""
    with open(path, "rb") as file:
        return decode_images(file.read())


def encode_masks(masks=None):
    """
    Encode label masks as a binary PGM stream (maxval 255).

    Parameters
    ----------
    masks : :class:`list`
        Two-dimensional arrays with values in [0, 255]

    Returns
    -------
    data : :class:`bytes`
        PGM stream, one image per mask

    """
    chunks = []
    for mask in masks:
        mask = np.asarray(mask)
        if mask.ndim != 2 or mask.size == 0:
            raise ValueError("Masks must be non-empty two-dimensional arrays")
        if mask.min() < 0 or mask.max() > 255:
            raise ValueError("Mask values must lie in [0, 255]")
        height, width = mask.shape
        chunks.append(f"P5\n{width} {height}\n255\n".encode("ascii"))
        chunks.append(mask.astype(np.uint8).tobytes())
    return b"".join(chunks)


def write_masks(masks=None, path=""):
    """Write label masks to a PGM file, see :func:`encode_masks`."""
    data = encode_masks(masks)
    with utils.atomic_write(path) as file:
        file.write(data)


def read_masks(path=""):
    """
    Read label masks from a PGM file.

    Returns
    -------
    masks : :class:`list`
        Two-dimensional integer arrays

    Raises
    ------
    ValueError
        Raised if the file contains colour images.

    """
    masks = []
    for array, _ in read_images(path):
        if array.ndim != 2:
            raise ValueError("Masks must be greyscale images")
        masks.append(array.astype(np.int64))
    return masks
