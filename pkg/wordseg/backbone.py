"""
Stand-in image tokenizer for inference on raster images.

During image-free training, the image backbone plays no role at all: the
artificial tokens replace its output. At inference time, real images need
to be turned into a grid of image tokens, and the features of this grid
drive the nearest-neighbour post-processing of :mod:`wordseg.postproc`.

Here, the backbone is as simple as possible: the image is cut into
non-overlapping P x P patches (zero-padded at the bottom and right if
needed), each patch is flattened to a feature row, and a frozen linear
layer projects the features to the embedding width of the model.


Module documentation
====================

"""
import numpy as np

from wordseg import netpbm, utils, vocab


class RasterImage:
    """
    Image with values in [0, 1].

    Attributes
    ----------
    data : :class:`numpy.ndarray`
        Array of shape (height, width, channels)

    """

    def __init__(self, data=None):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, np.newaxis]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ValueError("Images need one or three channels")
        self.data = data

    @property
    def height(self):
        """Number of pixel rows."""
        return self.data.shape[0]

    @property
    def width(self):
        """Number of pixel columns."""
        return self.data.shape[1]

    @property
    def channels(self):
        """Number of channels (1 or 3)."""
        return self.data.shape[2]

    def to_rgb(self):
        """Return a three-channel image, replicating greyscale values."""
        if self.channels == 3:
            return self
        return RasterImage(np.repeat(self.data, 3, axis=2))

    @classmethod
    def from_file(cls, path=""):
        """
        Read the first image of a binary PGM or PPM file.

        Values are scaled by the maximum value of the file to [0, 1].

        """
        array, maxval = netpbm.read_images(path)[0]
        return cls(array / float(maxval))


class FeatureMap:
    """
    Flattened grid of feature rows.

    Attributes
    ----------
    rows : :class:`numpy.ndarray`
        Matrix of shape (h*w, C), rows ordered row-major over the grid

    h : :class:`int`
        Number of grid rows

    w : :class:`int`
        Number of grid columns

    """

    def __init__(self, rows=None, h=1, w=1):
        self.rows = np.asarray(rows)
        if self.rows.ndim != 2 or self.rows.shape[0] != h * w:
            raise ValueError("Feature rows do not match the grid size")
        if not np.all(np.isfinite(self.rows)):
            raise ValueError("Features must be finite")
        self.h = h
        self.w = w


def patchify(image=None, patch=1):
    """
    Cut an image into non-overlapping patches.

    Parameters
    ----------
    image : :class:`RasterImage`
        Image to cut, zero-padded at the bottom and right to multiples of
        the patch size

    patch : :class:`int`
        Patch side P

    Returns
    -------
    features : :class:`FeatureMap`
        One row per patch (row-major over patches), each the row-major
        concatenation of the patch pixels; C = P*P*channels

    Raises
    ------
    ValueError
        Raised for empty images or a patch size smaller than one.

    """
    if patch < 1:
        raise ValueError("Patch size must be positive")
    if image is None or image.data.size == 0:
        raise ValueError("Empty image")
    h = -(-image.height // patch)
    w = -(-image.width // patch)
    padded = np.zeros((h * patch, w * patch, image.channels))
    padded[: image.height, : image.width] = image.data
    rows = (
        padded.reshape(h, patch, w, patch, image.channels)
        .transpose(0, 2, 1, 3, 4)
        .reshape(h * w, patch * patch * image.channels)
    )
    return FeatureMap(rows, h=h, w=w)


def unpatchify(features=None, patch=1, channels=1):
    """
    Reassemble the padded image from its patches.

    Inverse of :func:`patchify` up to the padding.

    """
    h, w = features.h, features.w
    return RasterImage(
        features.rows.reshape(h, w, patch, patch, channels)
        .transpose(0, 2, 1, 3, 4)
        .reshape(h * patch, w * patch, channels)
    )


def project(features=None, weight=None, bias=None):
    """
    Project feature rows with a linear layer.

    Parameters
    ----------
    features : :class:`FeatureMap`
        Features of shape (L, C)

    weight : :class:`numpy.ndarray`
        C x D matrix

    bias : :class:`numpy.ndarray`
        Vector of length D, added to every row

    Returns
    -------
    tokens : :class:`numpy.ndarray`
        L x D matrix ``features.rows @ weight + bias``

    Raises
    ------
    ValueError
        Raised if the shapes do not agree.

    """
    weight = np.asarray(weight)
    bias = np.asarray(bias)
    if (
        weight.ndim != 2
        or features.rows.shape[1] != weight.shape[0]
        or bias.shape != (weight.shape[1],)
    ):
        raise ValueError("Projection shapes do not agree")
    return features.rows @ weight + bias


def init_projection(features=1, dim=1, seed=0, dtype=np.float64):
    """
    Create the frozen projection of the backbone.

    Weights are drawn from a truncated normal distribution scaled by
    ``1/sqrt(features)``, the bias is zero.

    Returns
    -------
    weight : :class:`numpy.ndarray`
        features x dim matrix

    bias : :class:`numpy.ndarray`
        Zero vector of length dim

    """
    rng = utils.make_rng(seed, utils.STREAM_BACKBONE)
    weight = vocab.truncated_normal(
        rng, (features, dim), std=features**-0.5, dtype=dtype
    )
    return weight, np.zeros(dim, dtype=dtype)
