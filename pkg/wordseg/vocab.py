"""
Tokenizer, dictionary, embedding matrix, and segmentation categories.

Segmenting an image means decoding one category *word* per image region.
A word may, however, be split into several sub-word tokens by the tokenizer.
Therefore, every multi-token category is registered as an additional word
whose embedding is the average of its sub-word embeddings, and each category
is represented by exactly one row of the embedding matrix.

The tokenizer is a deterministic greedy longest-match over a lexicon, with a
fallback to single characters ("atoms": ASCII letters, digits, punctuation,
and the space) that are always part of the dictionary. Any other character
is spelled out as the tokens of its UTF-8 bytes. This is not byte-pair
encoding, but shows the same behaviour that matters here: unknown words are
split into several pieces, and no text is lost.


Normalisation
=============

All text is normalised before tokenisation: lower case, runs of whitespace
collapsed to a single space, leading and trailing whitespace removed.


Module documentation
====================

"""
import logging
import string

import numpy as np

from wordseg import utils


logger = logging.getLogger(__name__)

UNKNOWN = "<unk>"
PUNCTUATION = string.punctuation
ATOMS = tuple(string.ascii_lowercase + string.digits + PUNCTUATION + " ")
BYTE_TOKENS = tuple(f"<0x{value:02X}>" for value in range(256))
TASK_DESCRIPTION = "what is the segmentation map of the image?"


def normalize(text=""):
    """
    Normalise text: lower case, collapse whitespace, trim.

    Parameters
    ----------
    text : :class:`str`
        Text to normalise

    Returns
    -------
    text : :class:`str`
        Normalised text

    """
    return " ".join(text.lower().split())


class Vocabulary:
    """
    Ordered dictionary of words with a fixed embedding width.

    The dictionary always contains the unknown token (index 0), all atoms
    (lower-case letters, digits, punctuation, and the space character), one
    fallback token per byte value (``<0x00>`` to ``<0xFF>``), and the
    entries of the lexicon, in this order and without duplicates. Byte
    tokens are never matched against text.

    Attributes
    ----------
    entries : :class:`list`
        Word strings, the index of a word is its token id

    dim : :class:`int`
        Embedding width D

    """

    def __init__(self, entries=None, dim=64):
        if dim < 1:
            raise ValueError("Embedding width must be positive")
        self.entries = []
        self.dim = dim
        self._index = {}
        self._max_length = 1
        self._add(UNKNOWN)
        for atom in ATOMS:
            self._add(atom)
        self._byte_offset = len(self.entries)
        for token in BYTE_TOKENS:
            self._add(token, raw=True)
        for entry in entries or []:
            self._add(entry)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, word):
        return word in self._index

    def _add(self, entry, raw=False):
        if not raw and entry != " ":
            entry = normalize(entry)
        if not entry or entry in self._index:
            return
        self._index[entry] = len(self.entries)
        self.entries.append(entry)
        if not raw:
            self._max_length = max(self._max_length, len(entry))

    def id(self, word=""):
        """
        Return the token id of a dictionary entry.

        Parameters
        ----------
        word : :class:`str`
            Dictionary entry

        Returns
        -------
        id : :class:`int`
            Token id

        Raises
        ------
        KeyError
            Raised if the word is not an entry.

        """
        return self._index[word]

    def lookup(self, piece=""):
        """Return the id of an entry the matcher may use or ``None``."""
        token = self._index.get(piece)
        if token is not None and self.byte_value(token) is not None:
            return None
        return token

    def byte_id(self, value=0):
        """Return the id of the fallback token of a byte value."""
        return self._byte_offset + value

    def byte_value(self, token=0):
        """Return the byte value of a fallback token id or ``None``."""
        value = token - self._byte_offset
        return value if 0 <= value < len(BYTE_TOKENS) else None

    @property
    def max_length(self):
        """Length of the longest entry (in characters)."""
        return self._max_length

    @classmethod
    def from_text(cls, text="", dim=64):
        """
        Create a vocabulary from the contents of a vocabulary file.

        The file contains one entry per line, ``#`` starts a comment line.

        Parameters
        ----------
        text : :class:`str`
            Contents of a vocabulary file

        dim : :class:`int`
            Embedding width

        Returns
        -------
        vocabulary : :class:`Vocabulary`
            Vocabulary with atoms and the entries of the file

        """
        return cls(entries=_read_lines(text), dim=dim)

    @classmethod
    def from_file(cls, path="", dim=64):
        """
        Create a vocabulary from a vocabulary file.

        If no path is given, the lexicon distributed with the package is
        used, see :func:`wordseg.utils.get_package_data`.

        """
        if path:
            with open(path, encoding="utf8") as file:
                text = file.read()
        else:
            text = utils.get_package_data("lexicon.txt", directory="data")
        return cls.from_text(text, dim=dim)


def tokenize(text="", vocab=None):
    """
    Split text into token ids by greedy longest match.

    At every position the longest dictionary entry matching the normalised
    text is taken. A character no entry starts with is represented by the
    fallback tokens of its UTF-8 bytes, hence :func:`detokenize` restores
    every normalised text.

    Parameters
    ----------
    text : :class:`str`
        Text to tokenize

    vocab : :class:`Vocabulary`
        Dictionary to match against

    Returns
    -------
    ids : :class:`list`
        Token ids, empty for empty input

    """
    text = normalize(text)
    ids = []
    position = 0
    while position < len(text):
        longest = min(vocab.max_length, len(text) - position)
        for length in range(longest, 0, -1):
            token = vocab.lookup(text[position:position + length])
            if token is not None:
                ids.append(token)
                break
        else:
            length = 1
            ids.extend(
                vocab.byte_id(value) for value in text[position].encode()
            )
        position += length
    return ids


def detokenize(ids=None, vocab=None):
    """
    Concatenate the surface forms of token ids.

    Runs of byte fallback tokens are decoded as UTF-8, invalid sequences
    giving the replacement character.

    """
    pieces, pending = [], bytearray()
    for token in ids:
        value = vocab.byte_value(token)
        if value is not None:
            pending.append(value)
            continue
        if pending:
            pieces.append(pending.decode(errors="replace"))
            pending = bytearray()
        pieces.append(vocab.entries[token])
    if pending:
        pieces.append(pending.decode(errors="replace"))
    return "".join(pieces)


def truncated_normal(rng=None, shape=(), std=0.02, dtype=np.float64):
    """
    Draw from a normal distribution truncated at two standard deviations.

    Values outside the interval are redrawn, hence the result is
    deterministic given the state of the generator.

    Parameters
    ----------
    rng : :class:`numpy.random.Generator`
        Generator to draw from

    shape : :class:`tuple`
        Shape of the array

    std : :class:`float`
        Standard deviation before truncation

    dtype : :class:`numpy.dtype`
        Dtype of the returned array

    Returns
    -------
    values : :class:`numpy.ndarray`
        Array of the given shape

    """
    values = rng.standard_normal(shape)
    outside = np.abs(values) > 2.0
    while outside.any():
        values[outside] = rng.standard_normal(int(outside.sum()))
        outside = np.abs(values) > 2.0
    return (values * std).astype(dtype)


class EmbeddingMatrix:
    """
    Word embedding matrix with appended rows for merged categories.

    Attributes
    ----------
    rows : :class:`numpy.ndarray`
        Matrix of shape (N_total, D)

    base_count : :class:`int`
        Number of dictionary entries N

    """

    def __init__(self, rows=None, base_count=None):
        self.rows = np.asarray(rows)
        if self.rows.ndim != 2:
            raise ValueError("Embedding matrix must be two-dimensional")
        self.base_count = (
            self.rows.shape[0] if base_count is None else base_count
        )
        self._merged = {}

    @property
    def dim(self):
        """Embedding width D."""
        return self.rows.shape[1]

    def __len__(self):
        return self.rows.shape[0]

    def copy(self):
        """Return an independent copy (without the merged-name registry)."""
        return EmbeddingMatrix(self.rows.copy(), base_count=self.base_count)

    def merged_row(self, name="", subtoken_ids=None):
        """
        Return the row of a merged word, appending it if needed.

        A single-token word uses its own row. For several tokens, the mean
        of their rows is appended once per normalised name and reused
        afterwards.

        Parameters
        ----------
        name : :class:`str`
            Normalised word

        subtoken_ids : :class:`list`
            Token ids of the word

        Returns
        -------
        row : :class:`int`
            Index of the row representing the word

        """
        if len(subtoken_ids) == 1:
            return subtoken_ids[0]
        if name not in self._merged:
            mean = self.rows[list(subtoken_ids)].mean(axis=0)
            self.rows = np.vstack([self.rows, mean[np.newaxis, :]])
            self._merged[name] = self.rows.shape[0] - 1
        return self._merged[name]


def init_embedding(vocab=None, rng=None, std=0.02, dtype=np.float64):
    """
    Create the base embedding matrix of a vocabulary.

    Parameters
    ----------
    vocab : :class:`Vocabulary`
        Dictionary the matrix belongs to

    rng : :class:`numpy.random.Generator`
        Generator to draw the rows from

    std : :class:`float`
        Standard deviation of the truncated normal distribution

    dtype : :class:`numpy.dtype`
        Dtype of the matrix

    Returns
    -------
    embedding : :class:`EmbeddingMatrix`
        Matrix with one row per dictionary entry

    """
    rows = truncated_normal(
        rng, (len(vocab), vocab.dim), std=std, dtype=dtype
    )
    return EmbeddingMatrix(rows)


class SegCategorySet:
    """
    The segmentation vocabulary: one embedding row per category.

    Attributes
    ----------
    names : :class:`list`
        Normalised category names in registration order

    merged_ids : :class:`list`
        Row of the embedding matrix representing each category

    subtoken_ids : :class:`list`
        Token ids each category consists of

    """

    def __init__(self, names=None, merged_ids=None, subtoken_ids=None):
        self.names = list(names or [])
        self.merged_ids = list(merged_ids or [])
        self.subtoken_ids = [list(ids) for ids in (subtoken_ids or [])]

    def __len__(self):
        return len(self.names)

    def index(self, name=""):
        """Return the category index of a name (normalised first)."""
        return self.names.index(normalize(name))


def register_categories(names=None, vocab=None, embedding=None):
    """
    Register segmentation categories, merging multi-token names.

    Parameters
    ----------
    names : :class:`list`
        Category names

    vocab : :class:`Vocabulary`
        Dictionary used for tokenisation

    embedding : :class:`EmbeddingMatrix`
        Embedding matrix, extended in place by one row per (new)
        multi-token category; left unchanged if any name is rejected

    Returns
    -------
    categories : :class:`SegCategorySet`
        The registered categories

    Raises
    ------
    ValueError
        Raised for an empty list, duplicate normalised names, or names
        tokenizing to no tokens.

    """
    if not names:
        raise ValueError("No categories given")
    tokenized = {}
    for name in names:
        name = normalize(name)
        if not name:
            raise ValueError("Category name is empty after normalisation")
        if name in tokenized:
            raise ValueError(f'Duplicate category "{name}"')
        ids = tokenize(name, vocab)
        if not ids:
            raise ValueError(f'Category "{name}" tokenizes to no tokens')
        tokenized[name] = ids
    if len({tuple(ids) for ids in tokenized.values()}) != len(tokenized):
        raise ValueError("Categories share an embedding row")
    categories = SegCategorySet()
    for name, ids in tokenized.items():
        categories.names.append(name)
        categories.subtoken_ids.append(ids)
        categories.merged_ids.append(embedding.merged_row(name, ids))
    logger.debug(
        "Registered %d categories, embedding has %d rows",
        len(categories),
        len(embedding),
    )
    return categories


def build_prompt(categories=None, vocab=None):
    """
    Tokenize the task prompt enumerating the categories.

    The prompt consists of the task description followed by the category
    names separated by commas, *e.g.* "what is the segmentation map of the
    image? object: giraffe, grass".

    Parameters
    ----------
    categories : :class:`SegCategorySet`
        Categories to enumerate, in registration order

    vocab : :class:`Vocabulary`
        Dictionary used for tokenisation

    Returns
    -------
    ids : :class:`list`
        Token ids of the prompt; its length is L_T

    Raises
    ------
    ValueError
        Raised if there are no categories.

    """
    if categories is None or not len(categories):
        raise ValueError("Prompt needs at least one category")
    return tokenize(prompt_text(categories.names), vocab)


def prompt_text(names=None):
    """Return the prompt string for a list of category names."""
    return f"{TASK_DESCRIPTION} object: {', '.join(names)}"


def read_category_text(text=""):
    """Return the category names of a category file (one per line)."""
    return _read_lines(text)


def read_category_file(path=""):
    """
    Read category names from a file, one name per line.

    Without a path, the category list distributed with the package is used.

    """
    if path:
        with open(path, encoding="utf8") as file:
            text = file.read()
    else:
        text = utils.get_package_data("categories.txt", directory="data")
    return read_category_text(text)


def _read_lines(text=""):
    lines = []
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            lines.append(line)
    return lines
