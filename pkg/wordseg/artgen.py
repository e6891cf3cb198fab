"""
Artificial training data generated from category words alone.

No images are needed to learn the segmentation task: a grid of U x V
category words is sampled with replacement, upscaled to the H x W
resolution of the image backbone by nearest-neighbour interpolation, and
the embeddings of these words take the place of the image tokens. The
sampled map itself is the ground truth, hence the model learns to name the
word present at every position.

Grid sides vary from sample to sample (drawn from 1 to S), which yields
regions of many sizes rather than randomly scattered words.

Optionally, a hierarchy of coarse and fine categories is used (see
:class:`CategoryHierarchy`): every cell first draws a coarse category, then
one of its fine words. The model sees the fine word, but has to predict the
coarse category.


Reproducibility
===============

Generation is pure given an explicit :class:`numpy.random.Generator`. The
generator of sample ``i`` of a stream is seeded with a 64-bit seed mixed
from the run seed and ``i`` (see :func:`sample_seed`), so that any subset
of samples can be generated independently and in any order.


Module documentation
====================

"""
import numpy as np

from wordseg import utils


class ArtificialGridSpec:
    """
    Sizes of the artificial grids.

    Attributes
    ----------
    S : :class:`int`
        Maximum initial grid side

    H : :class:`int`
        Number of rows of the backbone grid

    W : :class:`int`
        Number of columns of the backbone grid

    fixed : :class:`bool`
        If true, grid sides are not drawn, but always equal to S

        Default: False

    Raises
    ------
    ValueError
        Raised if any size is smaller than one.

    """

    def __init__(self, S=8, H=8, W=8, fixed=False):  # noqa: N803
        if S < 1 or H < 1 or W < 1:
            raise ValueError("Grid sizes must be positive")
        self.S = int(S)  # pylint: disable=invalid-name
        self.H = int(H)  # pylint: disable=invalid-name
        self.W = int(W)  # pylint: disable=invalid-name
        self.fixed = bool(fixed)


class GridSample:
    """
    One artificial sample: a coarse grid and its upscaled map.

    Attributes
    ----------
    u : :class:`int`
        Number of rows of the coarse grid

    v : :class:`int`
        Number of columns of the coarse grid

    coarse : :class:`numpy.ndarray`
        u x v category indices

    map : :class:`numpy.ndarray`
        H x W category indices, the nearest-neighbour upscale of
        :attr:`coarse`; also the ground truth

    seed : :class:`int`
        Seed of the generator the sample was drawn with (informative)

    fine_coarse : :class:`numpy.ndarray` or None
        For hierarchical samples, the u x v fine word rows

    fine_map : :class:`numpy.ndarray` or None
        For hierarchical samples, the H x W fine word rows

    """

    def __init__(self, coarse=None, map_=None, seed=0, fine_coarse=None):
        self.coarse = np.asarray(coarse)
        self.u, self.v = self.coarse.shape
        self.map = np.asarray(map_)
        self.seed = seed
        self.fine_coarse = fine_coarse
        self.fine_map = (
            None
            if fine_coarse is None
            else nn_upscale(fine_coarse, *self.map.shape)
        )


class CategoryHierarchy:
    """
    Mapping of coarse category indices to fine word rows.

    Attributes
    ----------
    mapping : :class:`dict`
        Coarse category index -> list of embedding rows of fine words

    Raises
    ------
    ValueError
        Raised if the mapping is empty or any coarse category has no fine
        words.

    """

    def __init__(self, mapping=None):
        if not mapping:
            raise ValueError("Empty category hierarchy")
        self.mapping = {}
        for coarse in sorted(mapping):
            fine = list(mapping[coarse])
            if not fine:
                raise ValueError(
                    f"Coarse category {coarse} has no fine words"
                )
            self.mapping[int(coarse)] = [int(i) for i in fine]
        if list(self.mapping) != list(range(len(self.mapping))):
            raise ValueError("Coarse indices must be 0, 1, ..., M-1")

    def __len__(self):
        return len(self.mapping)

    @classmethod
    def from_names(cls, mapping=None, coarse=None, fine=None):
        """
        Create a hierarchy from category names.

        Parameters
        ----------
        mapping : :class:`dict`
            Coarse name -> list of fine names, as read from a hierarchy file

        coarse : :class:`wordseg.vocab.SegCategorySet`
            Registered coarse categories

        fine : :class:`wordseg.vocab.SegCategorySet`
            Registered fine words

        Returns
        -------
        hierarchy : :class:`CategoryHierarchy`
            Hierarchy using coarse indices and fine embedding rows

        """
        index = {}
        for name, fine_names in mapping.items():
            index[coarse.index(name)] = [
                fine.merged_ids[fine.index(fine_name)]
                for fine_name in fine_names or []
            ]
        return cls(index)


def sample_seed(seed=0, index=0):
    """Return the seed of sample ``index`` of a sample stream."""
    return utils.mix_seed(utils.mix_seed(seed, utils.STREAM_SAMPLES), index)


def sample_rng(seed=0, index=0):
    """
    Return the generator of sample ``index`` of a sample stream.

    Parameters
    ----------
    seed : :class:`int`
        Seed of the run

    index : :class:`int`
        Index of the sample within the stream

    Returns
    -------
    rng : :class:`numpy.random.Generator`
        Generator seeded with a seed derived from both values

    """
    return utils.make_rng(sample_seed(seed, index))


def _grid_sides(spec, rng):
    if spec.fixed:
        return spec.S, spec.S
    # Generator.integers uses an unbiased (rejection-based) bounded method.
    sides = rng.integers(1, spec.S, size=2, endpoint=True)
    return int(sides[0]), int(sides[1])


def nn_upscale(coarse=None, H=1, W=1):  # noqa: N803
    """
    Upscale a grid by nearest-neighbour interpolation.

    Cell (i, j) of the result is cell (floor(i*u/H), floor(j*v/W)) of the
    u x v input; there is no half-pixel offset.

    Parameters
    ----------
    coarse : :class:`numpy.ndarray`
        u x v array

    H : :class:`int`
        Number of rows of the result

    W : :class:`int`
        Number of columns of the result

    Returns
    -------
    map : :class:`numpy.ndarray`
        H x W array

    Raises
    ------
    ValueError
        Raised for empty inputs or non-positive sizes.

    """
    coarse = np.asarray(coarse)
    if coarse.ndim != 2 or coarse.size == 0 or H < 1 or W < 1:
        raise ValueError(
            "Upscaling needs a non-empty grid and positive sizes"
        )
    u, v = coarse.shape
    rows = (np.arange(H) * u) // H
    columns = (np.arange(W) * v) // W
    return coarse[np.ix_(rows, columns)]


def sample_grid(spec=None, M=1, rng=None):  # noqa: N803
    """
    Draw an artificial grid of category indices.

    Grid sides u and v are drawn independently and uniformly from
    {1, ..., S}, then u*v category indices uniformly with replacement from
    {0, ..., M-1}.

    Parameters
    ----------
    spec : :class:`ArtificialGridSpec`
        Grid sizes

    M : :class:`int`
        Number of categories

    rng : :class:`numpy.random.Generator`
        Generator to draw from

    Returns
    -------
    sample : :class:`GridSample`
        The sample, its map upscaled to H x W

    """
    if M < 1:
        raise ValueError("Need at least one category")
    u, v = _grid_sides(spec, rng)
    coarse = rng.integers(0, M, size=(u, v))
    return GridSample(
        coarse=coarse,
        map_=nn_upscale(coarse, spec.H, spec.W),
    )


def hierarchical_sample(spec=None, hierarchy=None, rng=None):
    """
    Draw an artificial grid using coarse and fine categories.

    Every cell first draws a coarse category uniformly, then a fine word
    uniformly among the words of this coarse category.

    Parameters
    ----------
    spec : :class:`ArtificialGridSpec`
        Grid sizes

    hierarchy : :class:`CategoryHierarchy`
        Coarse categories and their fine words

    rng : :class:`numpy.random.Generator`
        Generator to draw from

    Returns
    -------
    sample : :class:`GridSample`
        Sample whose map carries coarse indices (the targets) and whose
        fine map carries the embedding rows of the fine words

    """
    u, v = _grid_sides(spec, rng)
    coarse = rng.integers(0, len(hierarchy), size=(u, v))
    fine = np.empty_like(coarse)
    for cell, category in np.ndenumerate(coarse):
        words = hierarchy.mapping[int(category)]
        fine[cell] = words[int(rng.integers(0, len(words)))]
    return GridSample(
        coarse=coarse,
        map_=nn_upscale(coarse, spec.H, spec.W),
        fine_coarse=fine,
    )


def token_rows(sample=None, categories=None):
    """
    Return the embedding row of every position of a sample, row-major.

    For hierarchical samples, these are the rows of the fine words, else the
    merged rows of the categories in the map.

    """
    if sample.fine_map is not None:
        return sample.fine_map.reshape(-1)
    merged_ids = np.asarray(categories.merged_ids)
    flat = sample.map.reshape(-1)
    if flat.size and (flat.min() < 0 or flat.max() >= len(merged_ids)):
        raise IndexError("Category index out of range")
    return merged_ids[flat]


def to_training_pair(sample=None, embedding=None, categories=None):
    """
    Turn a sample into artificial image tokens and targets.

    Parameters
    ----------
    sample : :class:`GridSample`
        Sample to convert

    embedding : :class:`wordseg.vocab.EmbeddingMatrix`
        Embedding matrix

    categories : :class:`wordseg.vocab.SegCategorySet`
        Registered categories

    Returns
    -------
    tokens : :class:`numpy.ndarray`
        (H*W) x D matrix, row k is the embedding of map cell k (row-major)

    targets : :class:`numpy.ndarray`
        H*W category indices, equal to the flattened map

    Raises
    ------
    IndexError
        Raised if a map value is not a valid category index.

    """
    rows = token_rows(sample, categories)
    if rows.size and (rows.min() < 0 or rows.max() >= len(embedding)):
        raise IndexError("Embedding row out of range")
    return embedding.rows[rows], sample.map.reshape(-1).copy()


class SampleStream:
    """
    Reproducible stream of artificial samples.

    Sample ``i`` depends only on the seed, the grid spec, the categories
    (or hierarchy), and ``i``.

    Attributes
    ----------
    spec : :class:`ArtificialGridSpec`
        Grid sizes

    categories : :class:`wordseg.vocab.SegCategorySet`
        Segmentation categories (the targets)

    hierarchy : :class:`CategoryHierarchy` or None
        If set, samples are drawn hierarchically

    seed : :class:`int`
        Seed of the run

    """

    def __init__(self, spec=None, categories=None, hierarchy=None, seed=0):
        self.spec = spec
        self.categories = categories
        self.hierarchy = hierarchy
        self.seed = seed

    def sample(self, index=0):
        """Return sample ``index`` of the stream."""
        rng = sample_rng(self.seed, index)
        if self.hierarchy is not None:
            sample = hierarchical_sample(self.spec, self.hierarchy, rng)
        else:
            sample = sample_grid(self.spec, len(self.categories), rng)
        sample.seed = sample_seed(self.seed, index)
        return sample

    def batch(self, start=0, count=1):
        """
        Return row ids and targets of ``count`` consecutive samples.

        Returns
        -------
        rows : :class:`numpy.ndarray`
            count x (H*W) embedding rows of the artificial tokens

        targets : :class:`numpy.ndarray`
            count x (H*W) category indices

        grids : :class:`numpy.ndarray`
            count x 2 grid sides (u, v)

        """
        rows, targets, grids = [], [], []
        for index in range(start, start + count):
            sample = self.sample(index)
            rows.append(token_rows(sample, self.categories))
            targets.append(sample.map.reshape(-1))
            grids.append((sample.u, sample.v))
        return (
            np.stack(rows).astype(np.int64),
            np.stack(targets).astype(np.int64),
            np.asarray(grids, dtype=np.int64),
        )

