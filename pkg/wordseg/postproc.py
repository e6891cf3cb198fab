"""
Smoothing of probability maps along similar image features.

A model trained on artificial tokens only has never seen real image
tokens, hence its predictions on real images tend to be noisy. Positions
whose backbone features are similar most likely show the same category,
though. Therefore, every position averages its category probabilities with
those of its K nearest neighbours in feature space (by cosine similarity),
and this averaging is repeated a number of times.

The neighbourhood of a position always contains the position itself, as
its similarity to itself is maximal. Updates are synchronous: every
iteration reads the probabilities of the previous one only.


Module documentation
====================

"""
import numpy as np

from wordseg import segpipe


class PostprocessConfig:
    """
    Parameters of the smoothing.

    Attributes
    ----------
    K : :class:`int`
        Number of neighbours, including the position itself

    iterations : :class:`int`
        Number of averaging iterations

    Raises
    ------
    ValueError
        Raised if K < 1 or iterations < 0.

    """

    def __init__(self, K=3, iterations=25):  # noqa: N803
        if K < 1:
            raise ValueError("K must be at least 1")
        if iterations < 0:
            raise ValueError("Number of iterations must not be negative")
        self.K = int(K)  # pylint: disable=invalid-name
        self.iterations = int(iterations)


class NeighborGraph:
    """
    K nearest neighbours of every position.

    Attributes
    ----------
    neighbors : :class:`numpy.ndarray`
        L x K matrix of position indices

    """

    def __init__(self, neighbors=None):
        self.neighbors = np.asarray(neighbors, dtype=np.int64)
        if self.neighbors.ndim != 2:
            raise ValueError("Neighbours need to be an L x K matrix")

    def __len__(self):
        return self.neighbors.shape[0]


def knn_graph(features=None, K=3):  # noqa: N803
    """
    Find the K most cosine-similar feature rows of every row.

    Parameters
    ----------
    features : :class:`wordseg.backbone.FeatureMap`
        Features of the positions

    K : :class:`int`
        Number of neighbours, 1 <= K <= L

    Returns
    -------
    graph : :class:`NeighborGraph`
        Neighbours ordered by decreasing similarity; equal similarities are
        ordered by increasing index

    Raises
    ------
    ValueError
        Raised if K is out of range or a feature row has zero norm.

    """
    rows = np.asarray(features.rows, dtype=np.float64)
    if not 1 <= K <= rows.shape[0]:
        raise ValueError(f"K must lie in [1, {rows.shape[0]}]")
    norms = np.linalg.norm(rows, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(
            f"Feature row {int(zero[0])} has zero norm, cosine undefined"
        )
    unit = rows / norms[:, np.newaxis]
    similarity = unit @ unit.T
    # self-similarity is 1 up to rounding
    np.fill_diagonal(similarity, np.inf)
    order = np.argsort(-similarity, axis=1, kind="stable")
    return NeighborGraph(order[:, :K])


def smooth(probs=None, graph=None, iterations=25):
    """
    Average probabilities over the neighbourhoods, repeatedly.

    Parameters
    ----------
    probs : :class:`wordseg.segpipe.ProbabilityMap`
        Probabilities at backbone resolution

    graph : :class:`NeighborGraph`
        Neighbourhoods of the positions, fixed for all iterations

    iterations : :class:`int`
        Number of iterations

    Returns
    -------
    probs : :class:`wordseg.segpipe.ProbabilityMap`
        Smoothed probabilities

    Raises
    ------
    ValueError
        Raised if graph and map do not have the same number of positions.

    """
    if len(graph) != probs.probs.shape[0]:
        raise ValueError("Graph and probability map sizes disagree")
    current = probs.probs
    for _ in range(iterations):
        current = current[graph.neighbors].mean(axis=1)
    return segpipe.ProbabilityMap(current, h=probs.h, w=probs.w)
