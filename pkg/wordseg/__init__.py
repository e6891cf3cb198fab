"""wordseg

Image-free semantic segmentation: a segmentation model trained on category
words alone.


Design principles
-----------------

A vision-language encoder-decoder sees an image as a sequence of image
tokens, embedded into the same space as the words of the prompt. To learn
segmenting a set of categories, no images are needed: grids of category
*words*, sampled at random and upscaled to the size of the token grid,
stand in for the image tokens, and the sampled grid is at the same time the
ground truth. The decoder names the category at every position, and its
output is restricted to the words of the categories.

Everything is deterministic given a seed. Random numbers of all parts of a
run derive from the one seed of the run configuration, samples can be
generated independently of each other, and identical runs yield
byte-identical outputs.

The package depends on as few additional packages as possible: numpy for
all numerics (including a small reverse-mode automatic differentiation),
Jinja2 for text output, PyYAML for configuration and metadata, and
platformdirs for locating user-supplied data files.

The basic user interface is a command-line interface (CLI), implemented in
the :mod:`wordseg.cli` module.


Available modules
-----------------

The following list provides a high-level overview of the package. More
details can be found in the documentation of the individual modules.

:mod:`wordseg.vocab`
    Tokenizer, dictionary, embedding matrix, and segmentation categories.

:mod:`wordseg.artgen`
    Artificial training data generated from category words alone.

:mod:`wordseg.backbone`
    Stand-in image tokenizer for inference on raster images.

:mod:`wordseg.netpbm`
    Reading and writing binary netpbm images (PGM and PPM).

:mod:`wordseg.autograd`
    Minimal reverse-mode automatic differentiation on top of numpy.

:mod:`wordseg.model`
    Transformer encoder-decoder segmenting image tokens into category words.

:mod:`wordseg.segpipe`
    Segmentation head: from dictionary logits to a segmentation mask.

:mod:`wordseg.postproc`
    Smoothing of probability maps along similar image features.

:mod:`wordseg.evaluation`
    Evaluation of segmentation masks: confusion matrix, IoU and friends.

:mod:`wordseg.container`
    Portable tensor container used at every module boundary.

:mod:`wordseg.pipeline`
    The steps of a run: set up, generate data, train, segment.

:mod:`wordseg.configuration`
    Configuration handling of the wordseg package.

:mod:`wordseg.cli`
    Command-line interface (CLI) module of the wordseg package.

:mod:`wordseg.utils`
    Auxiliary functionality used by other modules of the wordseg package.

"""
