"""
Segmentation head: from dictionary logits to a segmentation mask.

The decoder yields, for every image token position, logits over the whole
dictionary. Only the columns of the segmentation categories matter, hence a
softmax restricted to these columns gives a :class:`ProbabilityMap` at
backbone resolution. Upsampled bilinearly to the size of the image, the
category with the highest probability per pixel is the prediction.

During image-free training, the targets live on the backbone grid, hence
:func:`seg_loss` is evaluated *before* upsampling.


Module documentation
====================

"""
import math

import numpy as np

from wordseg import netpbm, utils


IGNORE = 255
PROBABILITY_FLOOR = 1e-12


class ProbabilityMap:
    """
    Distribution over the categories at every grid position.

    Attributes
    ----------
    probs : :class:`numpy.ndarray`
        L x M matrix, rows ordered row-major over the grid

    h : :class:`int`
        Number of grid rows

    w : :class:`int`
        Number of grid columns

    Raises
    ------
    ValueError
        Raised if the grid size does not fit the number of rows.

    """

    def __init__(self, probs=None, h=1, w=1):
        self.probs = np.asarray(probs, dtype=np.float64)
        if self.probs.ndim != 2 or self.probs.shape[0] != h * w:
            raise ValueError("Probability rows do not match the grid size")
        self.h = h
        self.w = w

    @property
    def categories(self):
        """Number of categories M."""
        return self.probs.shape[1]

    def grid(self):
        """Return the probabilities as h x w x M array."""
        return self.probs.reshape(self.h, self.w, self.categories)


class SegmentationMask:
    """
    Category index per pixel.

    Attributes
    ----------
    labels : :class:`numpy.ndarray`
        Two-dimensional integer array; the value 255 marks pixels to ignore

    """

    def __init__(self, labels=None):
        self.labels = np.asarray(labels, dtype=np.int64)
        if self.labels.ndim != 2:
            raise ValueError("Mask labels need to be two-dimensional")

    @property
    def shape(self):
        """Shape of the label array."""
        return self.labels.shape

    def check(self, categories=1):
        """
        Make sure every label is a category index or the ignore value.

        Raises
        ------
        ValueError
            Raised for labels outside [0, categories) other than 255.

        """
        valid = (self.labels == IGNORE) | (
            (self.labels >= 0) & (self.labels < categories)
        )
        if not np.all(valid):
            raise ValueError(f"Mask labels must be < {categories} or 255")


def masked_probs(logits=None, categories=None, h=None, w=None):
    """
    Softmax over the columns of the segmentation categories.

    Parameters
    ----------
    logits : :class:`numpy.ndarray`
        L x N_total logits over the whole dictionary

    categories : :class:`wordseg.vocab.SegCategorySet`
        Categories; their merged ids select the columns, in registration
        order

    h : :class:`int`
        Number of grid rows, default: L (a single column)

    w : :class:`int`
        Number of grid columns, default: 1

    Returns
    -------
    probs : :class:`ProbabilityMap`
        L x M probabilities

    Raises
    ------
    ValueError
        Raised if there are no categories.

    IndexError
        Raised if a merged id is not a column of the logits.

    """
    merged_ids = np.asarray(categories.merged_ids, dtype=np.int64)
    if merged_ids.size == 0:
        raise ValueError("No segmentation categories")
    logits = np.asarray(logits, dtype=np.float64)
    if merged_ids.min() < 0 or merged_ids.max() >= logits.shape[-1]:
        raise IndexError("Category id out of range of the logits")
    selected = logits[:, merged_ids]
    shifted = np.exp(selected - selected.max(axis=1, keepdims=True))
    probs = shifted / shifted.sum(axis=1, keepdims=True)
    if h is None:
        h, w = probs.shape[0], 1
    return ProbabilityMap(probs, h=h, w=w)


def _interpolation_weights(source=1, target=1):
    """
    Return the (target x source) matrix of one-dimensional bilinear weights.

    Uses pixel centres: target d samples source coordinate
    ``(d + 0.5) * source / target - 0.5``, clamped to [0, source - 1].

    """
    coordinates = (np.arange(target) + 0.5) * (source / target) - 0.5
    coordinates = np.clip(coordinates, 0, source - 1)
    lower = np.floor(coordinates).astype(np.int64)
    upper = np.minimum(lower + 1, source - 1)
    fraction = coordinates - lower
    weights = np.zeros((target, source))
    rows = np.arange(target)
    np.add.at(weights, (rows, lower), 1.0 - fraction)
    np.add.at(weights, (rows, upper), fraction)
    return weights


def bilinear_upsample(probs=None, height=1, width=1):
    """
    Resize a probability map bilinearly.

    Parameters
    ----------
    probs : :class:`ProbabilityMap`
        Map to resize

    height : :class:`int`
        Number of rows of the result

    width : :class:`int`
        Number of columns of the result

    Returns
    -------
    probs : :class:`ProbabilityMap`
        Map of size height x width

    Raises
    ------
    ValueError
        Raised for target sizes smaller than one.

    """
    if height < 1 or width < 1:
        raise ValueError("Target sizes must be positive")
    row_weights = _interpolation_weights(probs.h, height)
    column_weights = _interpolation_weights(probs.w, width)
    grid = np.einsum(
        "ia,abm,jb->ijm", row_weights, probs.grid(), column_weights
    )
    result = grid.reshape(height * width, probs.categories)
    sums = result.sum(axis=1, keepdims=True)
    if np.max(np.abs(sums - 1.0)) > 1e-9:
        result = result / sums
    return ProbabilityMap(result, h=height, w=width)


def predict(probs=None):
    """
    Return the most probable category per position.

    Ties go to the lowest category index.

    Returns
    -------
    mask : :class:`SegmentationMask`
        h x w labels

    """
    labels = np.argmax(probs.probs, axis=1)
    return SegmentationMask(labels.reshape(probs.h, probs.w))


def seg_loss(probs=None, targets=None):
    """
    Mean negative log-likelihood of the targets.

    Probabilities are clamped at 1e-12 before taking the logarithm;
    positions whose target is 255 are ignored.

    Parameters
    ----------
    probs : :class:`ProbabilityMap`
        Probabilities at backbone resolution

    targets : :class:`SegmentationMask`
        Target labels of shape (h, w)

    Returns
    -------
    loss : :class:`float`
        Mean loss over all positions not ignored

    Raises
    ------
    ValueError
        Raised if the shapes disagree or all positions are ignored.

    """
    labels = targets.labels
    if labels.shape != (probs.h, probs.w):
        raise ValueError("Targets do not match the probability map")
    targets.check(probs.categories)
    labels = labels.reshape(-1)
    valid = labels != IGNORE
    if not np.any(valid):
        raise ValueError("All target positions are ignored")
    picked = probs.probs[np.flatnonzero(valid), labels[valid]]
    losses = -np.log(np.maximum(picked, PROBABILITY_FLOOR))
    return float(losses.sum() / valid.sum())


def max_loss():
    """Return the largest possible value of :func:`seg_loss`."""
    return -math.log(PROBABILITY_FLOOR)


def write_masks(masks=None, path="", names=None):
    """
    Write masks as PGM stream, optionally with a sidecar file of names.

    Parameters
    ----------
    masks : :class:`list`
        :class:`SegmentationMask` objects

    path : :class:`str`
        Name of the PGM file

    names : :class:`list`
        Category names; if given, written to ``<path>.names`` as lines
        ``<index>\\t<name>``

    """
    netpbm.write_masks([mask.labels for mask in masks], path)
    if names:
        with utils.atomic_write(f"{path}.names", mode="w") as file:
            for index, name in enumerate(names):
                file.write(f"{index}\t{name}\n")


def read_masks(path=""):
    """Read all masks of a PGM file as :class:`SegmentationMask` objects."""
    return [SegmentationMask(labels) for labels in netpbm.read_masks(path)]


def read_names(path=""):
    """
    Read a sidecar file of category names.

    Returns
    -------
    names : :class:`list`
        Category names, ordered by index

    Raises
    ------
    ValueError
        Raised if the indices are not 0, 1, ..., M-1.

    """
    entries = {}
    with open(path, encoding="utf8") as file:
        for line in file:
            if not line.strip():
                continue
            index, _, name = line.rstrip("\n").partition("\t")
            entries[int(index)] = name
    if sorted(entries) != list(range(len(entries))):
        raise ValueError(f"Category indices in {path} are not contiguous")
    return [entries[index] for index in range(len(entries))]
