"""
Command-line interface (CLI) module of the wordseg package.

While the actual segmentation code is contained in the other modules of the
package, for day-to-day business, users need a simple interface they can
use without writing code. Therefore, the package provides a command-line
interface covering the whole life cycle: generating artificial data,
training, segmenting, smoothing, and evaluating.


General usage
=============

The package provides a command ``wordseg`` (by means of a console-script
entry point) available from the command line given the wordseg package is
installed. This command comes with built-in help and follows a rather simple
scheme:

.. code-block:: bash

    wordseg <command> --<option> <value> ...

All options are long options taking a value. Every command exits with
status 0 on success, 1 for a wrong command line, 2 for invalid data or
configuration values, and 3 for numerical failures during training. Errors
are reported as a single line. Output files are written completely or not
at all.


A bit of background
===================

The first step is usually to write a configuration file, typically by
issuing the following command on the terminal:

.. code-block:: bash

    wordseg write config to run.cfg

Change the values in this file according to your needs. All other commands
take this file with the ``--config`` option, and the seed may be overridden
with ``--seed``. Commands working on a trained model read all they need
from the checkpoint.


Module documentation
====================

"""
import logging
import os
import sys

import numpy as np

from wordseg import (
    backbone,
    configuration,
    container,
    evaluation,
    model,
    pipeline,
    postproc,
    segpipe,
    utils,
)


logger = logging.getLogger(__name__)

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class UsageError(Exception):
    """Raised for command lines that cannot be understood."""


class Cli:
    """
    The actual command-line interface (CLI) of the wordseg package.

    Attributes
    ----------
    command : :class:`str`
        The actual command to be executed.

        In case of using the CLI from the terminal, the first argument.

    options : :class:`list`
        A list of options for the command.

        In case of using the CLI from the terminal, all arguments from the
        second argument on.

    conf_file : :class:`str`
        The name the config file gets written to using the ``write`` command.

        Default: "wordseg.cfg"


    Examples
    --------
    The following examples demonstrate how to use the CLI from the terminal,
    rather than how to use this class programmatically.

    Write a configuration, generate held-out samples with their masks, and
    train a model:

    .. code-block:: bash

        wordseg write config to run.cfg
        wordseg gen-data --config run.cfg --start 1000000 --count 256 \\
            --out heldout.ifsg --masks heldout.pgm
        wordseg train --config run.cfg --out model.ifsg

    Segment the held-out samples and compare with the ground truth:

    .. code-block:: bash

        wordseg infer --checkpoint model.ifsg --input heldout.ifsg \\
            --out predicted.pgm --probs probs.ifsg
        wordseg eval --pred predicted.pgm --gt heldout.pgm

    Segment an image, smoothing the probabilities along similar patches:

    .. code-block:: bash

        wordseg infer --checkpoint model.ifsg --input image.ppm \\
            --out mask.pgm --K 3 --iterations 25

    And if you are in doubt how to use the ``wordseg`` command:

    .. code-block:: bash

        wordseg
        wordseg help
        wordseg help train

    """

    def __init__(self):
        self.command = ""
        self.options = []
        self.conf_file = "wordseg.cfg"
        self._command_name = "wordseg"

    def call(self, command="", options=None):
        """
        Execute a given command with the given options (if any).

        Parameters
        ----------
        command : :class:`str`
            The actual command to be executed.

            In case of using the CLI from the terminal, the first argument.

        options : :class:`list`
            A list of options for the command.

            In case of using the CLI from the terminal, all arguments from the
            second argument on.

        Returns
        -------
        status : :class:`int`
            Exit status: 0 for success, 1 for usage errors, 2 for invalid
            data, 3 for numerical failures

        """
        self.command = command
        self.options = options or []
        method = f"_command_{self.command.replace('-', '_')}"
        if not self.command or not hasattr(self, method):
            self._print_help()
            return EXIT_USAGE if self.command else 0
        try:
            getattr(self, method)()
        except UsageError as error:
            logger.error("Usage error: %s", error)
            self._print_command_help(self.command)
            return EXIT_USAGE
        except ArithmeticError as error:
            logger.error("Numerical error: %s", error)
            return EXIT_NUMERICAL
        except (ValueError, LookupError, OSError) as error:
            logger.error("Error: %s", error)
            return EXIT_DATA
        return 0

    def _parse_options(self, allowed=(), required=()):
        values = {}
        options = list(self.options)
        while options:
            name = options.pop(0)
            if not name.startswith("--"):
                raise UsageError(f'Unexpected argument "{name}"')
            name = name[2:]
            if name not in allowed:
                raise UsageError(f'Unknown option "--{name}"')
            if not options:
                raise UsageError(f'Option "--{name}" needs a value')
            values[name] = options.pop(0)
        missing = [name for name in required if name not in values]
        if missing:
            raise UsageError(f'Option "--{missing[0]}" is required')
        return values

    @staticmethod
    def _int_option(values, name, default=None):
        if name not in values:
            return default
        try:
            return int(values[name])
        except ValueError as error:
            raise UsageError(f'Option "--{name}" needs an integer') from error

    def _run_config(self, values):
        return configuration.load_config(
            values.get("config", ""), seed=self._int_option(values, "seed")
        )

    def _command_write(self):
        if (
            not self.options
            or not self.options[0] == "config"
            or (len(self.options) > 1 and not self.options[1] == "to")
            or len(self.options) == 2
        ):
            raise UsageError("Expected: write config to <file>")
        if len(self.options) == 3:
            self.conf_file = self.options[2]
        configuration.RunConfig().to_file(self.conf_file)
        logger.info('Wrote configuration to file "%s"', self.conf_file)

    def _command_print_config(self):
        values = self._parse_options(allowed=("config", "seed"))
        print(self._run_config(values).to_text(), end="")

    def _command_gen_data(self):
        values = self._parse_options(
            allowed=("config", "seed", "count", "start", "out", "masks"),
            required=("out",),
        )
        run = pipeline.setup(self._run_config(values))
        tensors, masks = pipeline.generate_data(
            run,
            start=self._int_option(values, "start", 0),
            count=self._int_option(values, "count", 1),
        )
        container.write_container(tensors, values["out"])
        logger.info(
            'Wrote %d samples to "%s"', len(masks), values["out"]
        )
        if "masks" in values:
            segpipe.write_masks(masks, values["masks"], run.categories.names)
            logger.info('Wrote masks to "%s"', values["masks"])

    def _command_train(self):
        values = self._parse_options(
            allowed=("config", "seed", "data", "out", "steps"),
            required=("out",),
        )
        run = pipeline.setup(self._run_config(values))
        data = None
        if "data" in values:
            data = container.read_container(values["data"])
        checkpoint = pipeline.train(
            run, data=data, steps=self._int_option(values, "steps")
        )
        container.write_container(checkpoint.to_tensors(), values["out"])
        logger.info('Wrote checkpoint to "%s"', values["out"])

    def _command_infer(self):
        values = self._parse_options(
            allowed=(
                "checkpoint",
                "input",
                "out",
                "probs",
                "K",
                "iterations",
            ),
            required=("checkpoint", "input", "out"),
        )
        checkpoint = model.Checkpoint.from_tensors(
            container.read_container(values["checkpoint"])
        )
        with open(values["input"], "rb") as file:
            is_container = file.read(4) == container.MAGIC
        if is_container:
            masks, tensors = self._infer_tokens(checkpoint, values)
        else:
            masks, tensors = self._infer_image(checkpoint, values)
        segpipe.write_masks(masks, values["out"], checkpoint.category_names)
        logger.info('Wrote %d masks to "%s"', len(masks), values["out"])
        if "probs" in values:
            container.write_container(tensors, values["probs"])
            logger.info('Wrote probabilities to "%s"', values["probs"])

    @staticmethod
    def _infer_tokens(checkpoint, values):
        data = container.read_container(values["input"])
        if "row_ids" in data:
            tokens = pipeline.embedding_tokens(checkpoint, data["row_ids"])
        elif "tokens" in data:
            tokens = data["tokens"]
        else:
            raise ValueError("Input has neither tokens nor row_ids")
        maps = pipeline.segment_tokens(checkpoint, tokens)
        masks = [segpipe.predict(probs) for probs in maps]
        tensors = {
            "probs": np.stack([probs.probs for probs in maps]),
            "grid": np.asarray([maps[0].h, maps[0].w], dtype=np.uint32),
        }
        return masks, tensors

    def _infer_image(self, checkpoint, values):
        settings = checkpoint.settings.get("postprocess", {})
        smoothing = postproc.PostprocessConfig(
            K=self._int_option(values, "K", settings.get("K", 3)),
            iterations=self._int_option(
                values, "iterations", settings.get("iterations", 25)
            ),
        )
        image = backbone.RasterImage.from_file(values["input"])
        probs, features, mask = pipeline.segment_image(
            checkpoint, image, smoothing
        )
        tensors = {
            "probs": probs.probs[np.newaxis],
            "features": features.rows[np.newaxis],
            "grid": np.asarray([probs.h, probs.w], dtype=np.uint32),
        }
        return [mask], tensors

    def _command_postprocess(self):
        values = self._parse_options(
            allowed=(
                "config", "probs", "features", "out", "K", "iterations",
                "mask",
            ),
            required=("probs", "features", "out"),
        )
        config = self._run_config(values)
        smoothing = postproc.PostprocessConfig(
            K=self._int_option(values, "K", config.postprocess["K"]),
            iterations=self._int_option(
                values, "iterations", config.postprocess["iterations"]
            ),
        )
        probs_data = container.read_container(values["probs"])
        features_data = container.read_container(values["features"])
        if "probs" not in probs_data or "features" not in features_data:
            raise ValueError("Expected sections probs and features")
        probs = _batch_of(probs_data["probs"])
        features = _batch_of(features_data["features"])
        if probs.shape[:2] != features.shape[:2]:
            raise ValueError("Probabilities and features do not match")
        height, width = _grid_of(probs_data, probs.shape[1])
        smoothed, masks = [], []
        for rows, feature_rows in zip(probs, features):
            feature_map = backbone.FeatureMap(feature_rows, h=height, w=width)
            graph = postproc.knn_graph(feature_map, smoothing.K)
            result = postproc.smooth(
                segpipe.ProbabilityMap(rows, h=height, w=width),
                graph,
                smoothing.iterations,
            )
            smoothed.append(result.probs)
            masks.append(segpipe.predict(result))
        container.write_container(
            {
                "probs": np.stack(smoothed),
                "grid": np.asarray([height, width], dtype=np.uint32),
            },
            values["out"],
        )
        logger.info('Wrote smoothed probabilities to "%s"', values["out"])
        if "mask" in values:
            segpipe.write_masks(masks, values["mask"])
            logger.info('Wrote masks to "%s"', values["mask"])

    def _command_eval(self):
        values = self._parse_options(
            allowed=("pred", "gt", "names", "num-classes", "unseen", "out"),
            required=("pred", "gt"),
        )
        names = None
        names_file = values.get("names", f"{values['pred']}.names")
        if "names" in values or os.path.exists(names_file):
            names = segpipe.read_names(names_file)
        classes = self._int_option(
            values, "num-classes", len(names) if names else None
        )
        if not classes:
            raise UsageError('Either "--names" or "--num-classes" is needed')
        if names and len(names) != classes:
            raise ValueError("Number of names differs from --num-classes")
        predictions = segpipe.read_masks(values["pred"])
        truths = segpipe.read_masks(values["gt"])
        if len(predictions) != len(truths):
            raise ValueError(
                f"{len(predictions)} predicted, {len(truths)} true masks"
            )
        matrix = evaluation.ConfusionMatrix(classes)
        for pred, truth in zip(predictions, truths):
            matrix.accumulate(pred, truth)
        unseen = None
        if "unseen" in values:
            unseen = evaluation.read_split(values["unseen"])
        logger.info("Evaluated %d pairs of masks", len(predictions))
        report = matrix.report(names=names, unseen=unseen)
        print(report, end="")
        if "out" in values:
            with utils.atomic_write(values["out"], mode="w") as file:
                file.write(report)
            logger.info('Wrote report to "%s"', values["out"])

    def _command_help(self):
        if not self.options:
            self._print_help()
        else:
            self._print_command_help(self.options[0])

    def _print_command_help(self, command=""):
        help_method = f"_print_{command.replace('-', '_')}_help"
        if hasattr(self, help_method):
            getattr(self, help_method)()
        else:
            self._print_help()

    def _print_help(self):
        help_text = """
        General usage:
            command_name <command> --<option> <value> ...

        Possible commands are:
            write
            print-config
            gen-data
            train
            infer
            postprocess
            eval
            help

        To get more details for a command, type:
            command_name help <command>
        """
        self._output_help_text(help_text)

    def _print_write_help(self):
        help_text = """
        Usage for write command:
            command_name write config to <destination>
            command_name write config

        Writes the default configuration. Files ending in ".yaml" or ".yml"
        are written as YAML, all others as "key = value" lines.

        Note: The default filename for the configuration file if not
        provided is "wordseg.cfg".
        """
        self._output_help_text(help_text)

    def _print_print_config_help(self):
        help_text = """
        Usage for print-config command:
            command_name print-config [--config <file>] [--seed <seed>]

        Prints the configuration (defaults for missing values) as
        "key = value" lines.
        """
        self._output_help_text(help_text)

    def _print_gen_data_help(self):
        help_text = """
        Usage for gen-data command:
            command_name gen-data --out <samples> [--config <file>]
                [--seed <seed>] [--count <n>] [--start <index>]
                [--masks <pgm>]

        Generates <n> artificial samples (default: 1), starting at sample
        <index> of the stream (default: 0). Use a large start index for
        held-out data. With --masks, the ground truth is written as PGM.
        """
        self._output_help_text(help_text)

    def _print_train_help(self):
        help_text = """
        Usage for train command:
            command_name train --out <checkpoint> [--config <file>]
                [--seed <seed>] [--data <samples>] [--steps <n>]

        Trains on samples drawn on the fly, or cycling through the samples
        written by gen-data if --data is given.
        """
        self._output_help_text(help_text)

    def _print_infer_help(self):
        help_text = """
        Usage for infer command:
            command_name infer --checkpoint <checkpoint> --input <input>
                --out <pgm> [--probs <container>] [--K <k>]
                [--iterations <n>]

        The input is either samples written by gen-data or a PGM/PPM
        image. For images, probabilities are smoothed along similar
        patches (--K, --iterations) and upsampled to the image size.
        """
        self._output_help_text(help_text)

    def _print_postprocess_help(self):
        help_text = """
        Usage for postprocess command:
            command_name postprocess --probs <container>
                --features <container> --out <container>
                [--config <file>] [--K <k>] [--iterations <n>] [--mask <pgm>]

        Smooths probabilities along the K nearest neighbours in feature
        space.
        """
        self._output_help_text(help_text)

    def _print_eval_help(self):
        help_text = """
        Usage for eval command:
            command_name eval --pred <pgm> --gt <pgm> [--names <file>]
                [--num-classes <m>] [--unseen <file>] [--out <report>]

        Compares predicted and true masks image by image. Class names are
        read from <pgm>.names next to the prediction if present. With
        --unseen (a file listing class indices), the hIoU is reported.
        """
        self._output_help_text(help_text)

    def _output_help_text(self, help_text=""):
        print(
            help_text.replace("        ", "").replace(
                "command_name", self._command_name
            )
        )


def _batch_of(array):
    array = np.asarray(array)
    return array[np.newaxis] if array.ndim == 2 else array


def _grid_of(data, length):
    if "grid" in data:
        height, width = (int(value) for value in data["grid"])
        if height * width != length:
            raise ValueError("Grid size does not match the probabilities")
        return height, width
    return length, 1


def cli():
    """
    Console entry point for the command-line interface.

    The actual handling of the commands is entirely done within the
    :class:`wordseg.cli.Cli` class, but this function serves as entry
    point for the console script, providing the ``wordseg`` command on the
    command line.

    """
    package_logger = logging.getLogger("wordseg")
    package_logger.setLevel(logging.INFO)
    package_logger.addHandler(logging.StreamHandler(stream=sys.stdout))
    cli_object = Cli()
    if len(sys.argv) == 1:
        status = cli_object.call()
    elif len(sys.argv) == 2:
        status = cli_object.call(command=sys.argv[1])
    else:
        status = cli_object.call(command=sys.argv[1], options=sys.argv[2:])
    sys.exit(status)
