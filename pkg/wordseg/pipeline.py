"""
The steps of a run: set up, generate data, train, segment.

A run starts from a :class:`wordseg.configuration.RunConfig`. From its seed
and settings, :func:`setup` derives everything the model needs to know
about the task: vocabulary, initial word embeddings, segmentation
categories (and optionally a category hierarchy), the prompt, and the
stream of artificial samples. As all of these are deterministic functions
of the configuration, data generated by ``gen-data`` and samples drawn
during training agree as long as the configuration does.

The individual steps are:

* :func:`generate_data` -- artificial samples as tensor container

* :func:`train` -- a trained :class:`wordseg.model.Checkpoint`

* :func:`segment_tokens` -- probabilities for given image tokens

* :func:`segment_image` -- probabilities and mask for a raster image


Module documentation
====================

"""
import logging

import numpy as np
import yaml

from wordseg import (
    artgen,
    backbone,
    configuration,
    model,
    postproc,
    segpipe,
    utils,
    vocab,
)


logger = logging.getLogger(__name__)


class RunSetup:
    """
    Everything derived from a run configuration before training.

    Attributes
    ----------
    config : :class:`wordseg.configuration.RunConfig`
        The configuration

    vocabulary : :class:`wordseg.vocab.Vocabulary`
        Dictionary

    embedding : :class:`wordseg.vocab.EmbeddingMatrix`
        Initial word embeddings, extended by merged category rows

    categories : :class:`wordseg.vocab.SegCategorySet`
        Segmentation categories

    fine : :class:`wordseg.vocab.SegCategorySet` or None
        Fine words of a category hierarchy

    hierarchy : :class:`wordseg.artgen.CategoryHierarchy` or None
        Category hierarchy, if any

    prompt_ids : :class:`list`
        Token ids of the prompt

    stream : :class:`wordseg.artgen.SampleStream`
        Artificial samples

    """

    def __init__(self):
        self.config = None
        self.vocabulary = None
        self.embedding = None
        self.categories = None
        self.fine = None
        self.hierarchy = None
        self.prompt_ids = []
        self.stream = None

    @property
    def task(self):
        """Prompt and categories as seen by the model."""
        return model.SegmentationTask(
            self.prompt_ids, self.categories.merged_ids
        )


def read_hierarchy(path=""):
    """
    Read a category hierarchy file.

    The file is a YAML mapping of coarse category names to lists of fine
    category names. The value "packaged" (or an empty path) refers to the
    hierarchy distributed with the package.

    Returns
    -------
    mapping : :class:`dict`
        Coarse name -> list of fine names, in file order

    Raises
    ------
    ValueError
        Raised if the file is no such mapping.

    """
    if not path or path == configuration.PACKAGED:
        text = utils.get_package_data("hierarchy.yaml", directory="data")
    else:
        with open(path, encoding="utf8") as file:
            text = file.read()
    mapping = yaml.load(text, Loader=yaml.SafeLoader)
    if not isinstance(mapping, dict) or not mapping:
        raise ValueError("Hierarchy file needs a nonempty mapping")
    for coarse, fine in mapping.items():
        if not isinstance(fine, list) or not fine:
            raise ValueError(f'Coarse category "{coarse}" has no fine words')
    return {str(k): [str(i) for i in v] for k, v in mapping.items()}


def setup(config=None):
    """
    Derive vocabulary, embeddings, categories and samples from a config.

    Parameters
    ----------
    config : :class:`wordseg.configuration.RunConfig`
        Run configuration

    Returns
    -------
    setup : :class:`RunSetup`
        The derived objects

    Raises
    ------
    wordseg.configuration.ConfigurationError
        Raised if the category file has too few names or the prompt does
        not fit into L_T_max tokens.

    """
    generation = config.generation
    result = RunSetup()
    result.config = config
    result.vocabulary = vocab.Vocabulary.from_file(
        generation["vocabulary"], dim=config.model["D"]
    )
    result.embedding = vocab.init_embedding(
        result.vocabulary,
        utils.make_rng(generation["seed"], utils.STREAM_EMBEDDING),
        std=generation["embedding_std"],
        dtype=config.model["dtype"],
    )
    if generation["hierarchy"]:
        mapping = read_hierarchy(generation["hierarchy"])
        result.categories = vocab.register_categories(
            list(mapping), result.vocabulary, result.embedding
        )
        fine_names = []
        for names in mapping.values():
            fine_names.extend(
                name for name in names if name not in fine_names
            )
        result.fine = vocab.register_categories(
            fine_names, result.vocabulary, result.embedding
        )
        result.hierarchy = artgen.CategoryHierarchy.from_names(
            mapping, result.categories, result.fine
        )
    else:
        names = vocab.read_category_file(generation["categories"])
        if len(names) < generation["num_categories"]:
            raise configuration.ConfigurationError(
                f"Category file has only {len(names)} names",
                key="num_categories",
            )
        result.categories = vocab.register_categories(
            names[: generation["num_categories"]],
            result.vocabulary,
            result.embedding,
        )
    result.prompt_ids = vocab.build_prompt(
        result.categories, result.vocabulary
    )
    if len(result.prompt_ids) > config.model["L_T_max"]:
        raise configuration.ConfigurationError(
            f"Prompt has {len(result.prompt_ids)} tokens, more than L_T_max",
            key="L_T_max",
        )
    result.stream = artgen.SampleStream(
        spec=config.grid_spec(),
        categories=result.categories,
        hierarchy=result.hierarchy,
        seed=generation["seed"],
    )
    logger.debug(
        "Set up %d categories, prompt of %d tokens",
        len(result.categories),
        len(result.prompt_ids),
    )
    return result


def generate_data(run=None, start=0, count=1):
    """
    Generate artificial samples as tensor container sections.

    Parameters
    ----------
    run : :class:`RunSetup`
        Setup of the run

    start : :class:`int`
        Index of the first sample within the stream

    count : :class:`int`
        Number of samples

    Returns
    -------
    tensors : :class:`dict`
        Sections "tokens" (count x L_I x D, f32), "targets" (count x L_I),
        "row_ids" (count x L_I, embedding rows of the tokens), "grids"
        (count x 2, drawn grid sides), and "indices" (sample indices)

    masks : :class:`list`
        Ground-truth :class:`wordseg.segpipe.SegmentationMask` per sample

    """
    if count < 1:
        raise ValueError("Need at least one sample")
    if start < 0:
        raise ValueError("Sample index must not be negative")
    rows, targets, grids = run.stream.batch(start, count)
    spec = run.stream.spec
    tensors = {
        "tokens": run.embedding.rows[rows].astype(np.float32),
        "targets": targets.astype(np.uint32),
        "row_ids": rows.astype(np.uint32),
        "grids": grids.astype(np.uint32),
        "indices": np.arange(start, start + count, dtype=np.uint32),
    }
    masks = [
        segpipe.SegmentationMask(target.reshape(spec.H, spec.W))
        for target in targets
    ]
    return tensors, masks


def _data_batches(run, data, batch_size):
    if data is None:
        return lambda step: _stream_batch(run, step, batch_size)
    targets = np.asarray(data["targets"], dtype=np.int64)
    source = "row_ids" if "row_ids" in data else "tokens"
    inputs = np.asarray(data[source])
    count = targets.shape[0]

    def batches(step):
        picked = (step * batch_size + np.arange(batch_size)) % count
        if source == "row_ids":
            return {"rows": inputs[picked].astype(np.int64),
                    "targets": targets[picked]}
        return {"tokens": inputs[picked], "targets": targets[picked]}

    return batches


def _stream_batch(run, step, batch_size):
    rows, targets, _ = run.stream.batch(step * batch_size, batch_size)
    return {"rows": rows, "targets": targets}


def new_checkpoint(run=None):
    """
    Create an untrained checkpoint for a run.

    Weights are drawn from a generator derived from the seed of the run,
    the word embeddings are those of the setup, and the frozen projection
    of the image backbone is created as well.

    """
    config = run.config
    cfg = config.model_config()
    params = model.init_params(
        cfg,
        utils.make_rng(config.generation["seed"], utils.STREAM_PARAMETERS),
        embedding=run.embedding,
    )
    patch = config.model["patch"]
    projection = backbone.init_projection(
        features=patch * patch * 3,
        dim=cfg.D,
        seed=config.generation["seed"],
        dtype=cfg.dtype,
    )
    return model.Checkpoint(
        params=params,
        optimizer=config.optimizer_instance(),
        cfg=cfg,
        task=run.task,
        category_names=run.categories.names,
        projection=projection,
        settings=config.to_dict(),
    )


def train(run=None, data=None, steps=None, checkpoint=None):
    """
    Train the model of a run.

    Parameters
    ----------
    run : :class:`RunSetup`
        Setup of the run

    data : :class:`dict`
        Samples as written by :func:`generate_data`; if None, samples are
        drawn from the stream of the run

    steps : :class:`int`
        Number of steps; the configured number if None

    checkpoint : :class:`wordseg.model.Checkpoint`
        Checkpoint to continue training from; a new one if None

    Returns
    -------
    checkpoint : :class:`wordseg.model.Checkpoint`
        Trained checkpoint

    """
    config = run.config
    checkpoint = checkpoint or new_checkpoint(run)
    if data is not None:
        targets = np.asarray(data["targets"])
        if targets.ndim != 2 or targets.shape[1] != checkpoint.cfg.L_I:
            raise ValueError("Training data do not fit the grid size")
        if targets.max() >= len(checkpoint.category_names):
            raise ValueError("Training targets exceed the categories")
        if "row_ids" in data and "tokens" in data:
            expected = run.embedding.rows[np.asarray(data["row_ids"][:1])]
            if not np.allclose(expected, data["tokens"][:1], atol=1e-6):
                raise ValueError(
                    "Training data were generated with another configuration"
                )
    steps = config.optimizer["steps"] if steps is None else steps
    batch_size = config.optimizer["batch_size"]
    trainer = model.Trainer(
        params=checkpoint.params,
        optimizer=checkpoint.optimizer,
        task=checkpoint.task,
        cfg=checkpoint.cfg,
        batch_size=batch_size,
        log_every=config.optimizer["log_every"],
        schedule=config.schedule(checkpoint.optimizer.t, steps),
    )
    trainer.train(_data_batches(run, data, batch_size), steps=steps)
    return checkpoint


def _category_set(checkpoint):
    return vocab.SegCategorySet(
        names=checkpoint.category_names,
        merged_ids=checkpoint.task.merged_ids.tolist(),
    )


def segment_tokens(checkpoint=None, tokens=None):
    """
    Compute category probabilities of image tokens.

    Parameters
    ----------
    checkpoint : :class:`wordseg.model.Checkpoint`
        Trained model

    tokens : :class:`numpy.ndarray`
        Image tokens of shape (B, L_I, D)

    Returns
    -------
    probs : :class:`list`
        :class:`wordseg.segpipe.ProbabilityMap` (on the backbone grid) per
        sequence of tokens

    """
    cfg = checkpoint.cfg
    settings = checkpoint.settings.get("generation", {})
    height = settings.get("H", cfg.L_I)
    width = settings.get("W", 1)
    tokens = np.asarray(tokens)
    if tokens.ndim == 2:
        tokens = tokens[np.newaxis]
    if tokens.shape[1:] != (cfg.L_I, cfg.D):
        raise ValueError(
            f"Tokens of shape {tokens.shape[1:]} do not fit the model"
        )
    dec = model.decode_batch(tokens, checkpoint.task, checkpoint.params, cfg)
    logits = model.output_logits(dec, checkpoint.params["embedding"].data)
    categories = _category_set(checkpoint)
    return [
        segpipe.masked_probs(rows, categories, h=height, w=width)
        for rows in logits
    ]


def embedding_tokens(checkpoint=None, row_ids=None):
    """Look up image tokens by embedding row in the trained embedding."""
    embedding = checkpoint.params["embedding"].data
    row_ids = np.asarray(row_ids, dtype=np.int64)
    if row_ids.size and row_ids.max() >= embedding.shape[0]:
        raise IndexError("Embedding row out of range")
    return embedding[row_ids]


def image_features(checkpoint=None, image=None):
    """
    Patch features of an image on the grid of the model.

    Raises
    ------
    ValueError
        Raised if the patch grid of the image differs from H x W.

    """
    settings = checkpoint.settings
    patch = settings.get("model", {}).get("patch", 1)
    features = backbone.patchify(image.to_rgb(), patch)
    expected = (
        settings.get("generation", {}).get("H"),
        settings.get("generation", {}).get("W"),
    )
    if (features.h, features.w) != expected:
        raise ValueError(
            f"Image yields a {features.h} x {features.w} patch grid, "
            f"the model expects {expected[0]} x {expected[1]}"
        )
    return features


def segment_image(checkpoint=None, image=None, postprocess=None):
    """
    Segment a raster image.

    The image is cut into patches, projected with the frozen projection of
    the checkpoint, and segmented. The probabilities are smoothed along
    similar patch features, upsampled to the size of the image, and the
    most probable category per pixel is predicted.

    Parameters
    ----------
    checkpoint : :class:`wordseg.model.Checkpoint`
        Trained model

    image : :class:`wordseg.backbone.RasterImage`
        Image to segment

    postprocess : :class:`wordseg.postproc.PostprocessConfig`
        Smoothing settings; no smoothing if None

    Returns
    -------
    probs : :class:`wordseg.segpipe.ProbabilityMap`
        Smoothed probabilities on the patch grid

    features : :class:`wordseg.backbone.FeatureMap`
        Patch features

    mask : :class:`wordseg.segpipe.SegmentationMask`
        Predicted labels at image resolution

    """
    features = image_features(checkpoint, image)
    weight, bias = checkpoint.projection
    tokens = backbone.project(features, weight, bias)
    probs = segment_tokens(checkpoint, tokens)[0]
    if postprocess is not None and postprocess.iterations:
        graph = postproc.knn_graph(features, postprocess.K)
        probs = postproc.smooth(probs, graph, postprocess.iterations)
    upsampled = segpipe.bilinear_upsample(probs, image.height, image.width)
    return probs, features, segpipe.predict(upsampled)
