"""
Configuration handling of the wordseg package.

All subcommands of the command-line interface are driven by a run
configuration: the seed and sizes of the artificial data, the size of the
model, the optimiser settings, and the settings of the post-processing.

The :class:`RunConfig` class holds these values in groups, provides the
defaults (a small model training within minutes on a single CPU core), and
reads and writes configuration files in two formats:

* Plain text with one ``key = value`` per line and ``#`` comments.
  Keys are the names of the individual settings, unique across groups.

* YAML with one mapping per group, as written by
  ``wordseg write config to <file>.yaml``.

Unknown keys are rejected rather than silently ignored, and every value is
checked when loading.


Module documentation
====================

"""
import os

import numpy as np
import yaml

from wordseg import artgen, model, postproc, utils


DTYPES = ("float32", "float64")
YAML_SUFFIXES = (".yaml", ".yml")
PACKAGED = "packaged"
TRUE_VALUES = ("true", "yes", "on", "1")
FALSE_VALUES = ("false", "no", "off", "0")


class ConfigurationError(ValueError):
    """
    Raised for invalid configuration values or files.

    Attributes
    ----------
    key : :class:`str`
        Name of the offending setting, empty if not specific to a key

    """

    def __init__(self, message="", key=""):
        super().__init__(message)
        self.key = key


_CHECKS = {
    "seed": (lambda v: 0 <= v < 2**64, "must lie in [0, 2**64)"),
    "S": (lambda v: v >= 1, "must be at least 1"),
    "H": (lambda v: v >= 1, "must be at least 1"),
    "W": (lambda v: v >= 1, "must be at least 1"),
    "num_categories": (lambda v: v >= 1, "must be at least 1"),
    "embedding_std": (lambda v: v > 0, "must be positive"),
    "D": (lambda v: v >= 1, "must be at least 1"),
    "n_layers_enc": (lambda v: v >= 1, "must be at least 1"),
    "n_layers_dec": (lambda v: v >= 1, "must be at least 1"),
    "n_heads": (lambda v: v >= 1, "must be at least 1"),
    "ffn_mult": (lambda v: v >= 1, "must be at least 1"),
    "L_T_max": (lambda v: v >= 1, "must be at least 1"),
    "dtype": (lambda v: v in DTYPES, f"must be one of {', '.join(DTYPES)}"),
    "patch": (lambda v: v >= 1, "must be at least 1"),
    "lr": (lambda v: v > 0, "must be positive"),
    "wd": (lambda v: v >= 0, "must not be negative"),
    "beta1": (lambda v: 0 <= v < 1, "must lie in [0, 1)"),
    "beta2": (lambda v: 0 <= v < 1, "must lie in [0, 1)"),
    "warmup": (lambda v: v >= 0, "must not be negative"),
    "lr_min": (lambda v: v >= 0, "must not be negative"),
    "eps": (lambda v: v > 0, "must be positive"),
    "batch_size": (lambda v: v >= 1, "must be at least 1"),
    "steps": (lambda v: v >= 0, "must not be negative"),
    "log_every": (lambda v: v >= 1, "must be at least 1"),
    "K": (lambda v: v >= 1, "must be at least 1"),
    "iterations": (lambda v: v >= 0, "must not be negative"),
}


class RunConfig(utils.ToDictMixin):
    """
    Configuration of a run.

    Attributes
    ----------
    generation : :class:`dict`
        Artificial data and vocabulary

        The following fields are currently available:

        seed : :class:`int`
            Seed all random numbers of a run derive from

            Default: 1

        S : :class:`int`
            Maximum side of the artificial grids

            Default: 8

        H, W : :class:`int`
            Size of the grid of image tokens

            Default: 8

        fixed_grid : :class:`bool`
            Whether grid sides are always S rather than drawn

            Default: False

        num_categories : :class:`int`
            Number of categories taken from the category file

            Default: 8

        categories : :class:`str`
            Category file, one name per line; the packaged list if empty

        hierarchy : :class:`str`
            Hierarchy file (YAML, coarse name -> list of fine names); if
            set, takes precedence over the category file; "packaged" refers
            to the hierarchy distributed with the package

        vocabulary : :class:`str`
            Lexicon file, one entry per line; the packaged one if empty

        embedding_std : :class:`float`
            Standard deviation of the initial word embeddings

            Default: 0.02

    model : :class:`dict`
        Size of the encoder-decoder

        The fields are D, n_layers_enc, n_layers_dec, n_heads, ffn_mult,
        L_T_max, cross_attention, and dtype (see
        :class:`wordseg.model.ModelConfig`), as well as the side ``patch``
        of the image patches used for inference on images.

    optimizer : :class:`dict`
        Training settings

        The fields are lr, wd, beta1, beta2, eps (see
        :class:`wordseg.model.AdamW`), warmup and lr_min (see
        :class:`wordseg.model.LearningRateSchedule`, lr being the peak
        rate), batch_size, steps, and log_every (number of steps between
        progress messages).

    postprocess : :class:`dict`
        Neighbourhood smoothing, see
        :class:`wordseg.postproc.PostprocessConfig`

        The fields are K and iterations.

    Examples
    --------
    Write the defaults to a file, edit, and use it:

    .. code-block:: bash

        wordseg write config to run.cfg
        wordseg train --config run.cfg --out model.ifsg

    """

    def __init__(self):
        super().__init__()
        self.generation = {
            "seed": 1,
            "S": 8,
            "H": 8,
            "W": 8,
            "fixed_grid": False,
            "num_categories": 8,
            "categories": "",
            "hierarchy": "",
            "vocabulary": "",
            "embedding_std": 0.02,
        }
        self.model = {
            "D": 64,
            "n_layers_enc": 2,
            "n_layers_dec": 2,
            "n_heads": 4,
            "ffn_mult": 4,
            "L_T_max": 64,
            "cross_attention": True,
            "dtype": "float32",
            "patch": 4,
        }
        self.optimizer = {
            "lr": 2e-3,
            "warmup": 100,
            "lr_min": 1e-4,
            "wd": 0.1,
            "beta1": 0.9,
            "beta2": 0.999,
            "eps": 1e-8,
            "batch_size": 16,
            "steps": 2000,
            "log_every": 100,
        }
        self.postprocess = {
            "K": 3,
            "iterations": 25,
        }

    @property
    def groups(self):
        """Return the groups of settings by name."""
        return {
            "generation": self.generation,
            "model": self.model,
            "optimizer": self.optimizer,
            "postprocess": self.postprocess,
        }

    def __getitem__(self, key):
        return self.groups[self._group_of(key)][key]

    def _group_of(self, key):
        for name, group in self.groups.items():
            if key in group:
                return name
        raise ConfigurationError(f"Unknown setting '{key}'", key=key)

    def set(self, key="", value=None):
        """
        Set a single value, converting it to the type of the default.

        Parameters
        ----------
        key : :class:`str`
            Name of the setting

        value
            New value, strings are converted

        Raises
        ------
        ConfigurationError
            Raised for unknown keys or values that cannot be converted.

        """
        group = self.groups[self._group_of(key)]
        group[key] = _convert(key, value, group[key])

    def from_dict(self, dict_=None):
        """
        Set attributes from a dictionary of groups.

        Parameters
        ----------
        dict_ : :class:`dict`
            Group name -> dictionary of settings; flat settings are
            accepted as well

        Raises
        ------
        ConfigurationError
            Raised for unknown groups, keys, or invalid values.

        """
        for name, value in (dict_ or {}).items():
            if name in self.groups and isinstance(value, dict):
                for key, setting in value.items():
                    if key not in self.groups[name]:
                        raise ConfigurationError(
                            f"Unknown setting '{key}' in group '{name}'",
                            key=key,
                        )
                    self.set(key, setting)
            else:
                self.set(name, value)
        self._check_values()

    def from_text(self, text=""):
        """
        Read settings from ``key = value`` lines.

        Raises
        ------
        ConfigurationError
            Raised for lines that cannot be parsed, duplicate keys, unknown
            keys, or invalid values.

        """
        seen = set()
        for number, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, separator, value = line.partition("=")
            key = key.strip()
            if not separator or not key:
                raise ConfigurationError(
                    f"Line {number}: expected 'key = value'", key=key
                )
            if key in seen:
                raise ConfigurationError(
                    f"Line {number}: '{key}' given twice", key=key
                )
            seen.add(key)
            self.set(key, value.strip())
        self._check_values()

    def from_file(self, name=""):
        """
        Read from a configuration file.

        Files ending in ".yaml" or ".yml" are read as YAML, all others as
        ``key = value`` lines.

        Parameters
        ----------
        name : :class:`str`
            Name of the file to read from.

        """
        with open(name, "r", encoding="utf8") as file:
            contents = file.read()
        if name.lower().endswith(YAML_SUFFIXES):
            try:
                dict_ = yaml.load(contents, Loader=yaml.SafeLoader)
            except yaml.YAMLError as error:
                raise ConfigurationError(f"Invalid YAML: {error}") from error
            if dict_ is not None and not isinstance(dict_, dict):
                raise ConfigurationError("YAML configuration is no mapping")
            self.from_dict(dict_)
        else:
            self.from_text(contents)

    def to_text(self):
        """Return the settings as ``key = value`` lines."""
        template = utils.Template(
            template="config.j2.txt",
            context={"groups": self._formatted_groups()},
        )
        return template.render()

    def to_file(self, name=""):
        """
        Write to a file, YAML or ``key = value`` depending on the suffix.

        Parameters
        ----------
        name : :class:`str`
            Name of the file to write to.

        """
        self._check_values()
        with utils.atomic_write(name, mode="w") as file:
            if name.lower().endswith(YAML_SUFFIXES):
                yaml.dump(self.to_dict(), file, sort_keys=False)
            else:
                file.write(self.to_text())

    def _formatted_groups(self):
        return {
            name: {key: _format(value) for key, value in group.items()}
            for name, group in self.groups.items()
        }

    def _check_values(self):
        for group in self.groups.values():
            for key, value in group.items():
                if key in _CHECKS:
                    check, message = _CHECKS[key]
                    if not check(value):
                        raise ConfigurationError(f"{key} {message}", key=key)
        if self.optimizer["lr_min"] > self.optimizer["lr"]:
            raise ConfigurationError(
                "lr_min must not exceed lr", key="lr_min"
            )
        if self.model["D"] % self.model["n_heads"]:
            raise ConfigurationError(
                "n_heads must divide D", key="n_heads"
            )
        for key in ("categories", "hierarchy", "vocabulary"):
            path = self.generation[key]
            if path and path != PACKAGED and not os.path.exists(path):
                raise ConfigurationError(f"File {path} not found", key=key)

    def grid_spec(self):
        """Return the sizes of the artificial grids."""
        return artgen.ArtificialGridSpec(
            S=self.generation["S"],
            H=self.generation["H"],
            W=self.generation["W"],
            fixed=self.generation["fixed_grid"],
        )

    def model_config(self):
        """Return the model sizes; L_I is H*W."""
        return model.ModelConfig(
            D=self.model["D"],
            n_layers_enc=self.model["n_layers_enc"],
            n_layers_dec=self.model["n_layers_dec"],
            n_heads=self.model["n_heads"],
            L_I=self.generation["H"] * self.generation["W"],
            L_T_max=self.model["L_T_max"],
            ffn_mult=self.model["ffn_mult"],
            cross_attention=self.model["cross_attention"],
            dtype=self.model["dtype"],
        )

    def optimizer_instance(self):
        """Return a fresh optimiser with the configured settings."""
        return model.AdamW(
            lr=self.optimizer["lr"],
            weight_decay=self.optimizer["wd"],
            beta1=self.optimizer["beta1"],
            beta2=self.optimizer["beta2"],
            eps=self.optimizer["eps"],
        )

    def schedule(self, start=0, steps=None):
        """
        Return the learning rate schedule of a training run.

        Parameters
        ----------
        start : :class:`int`
            Number of steps already taken

        steps : :class:`int`
            Number of steps to take; the configured number if None

        Returns
        -------
        schedule : :class:`wordseg.model.LearningRateSchedule`
            Schedule decaying until the last of these steps

        """
        steps = self.optimizer["steps"] if steps is None else steps
        return model.LearningRateSchedule(
            lr=self.optimizer["lr"],
            warmup=self.optimizer["warmup"],
            total=max(start + steps, 1),
            lr_min=self.optimizer["lr_min"],
        )

    def postprocess_config(self):
        """Return the settings of the neighbourhood smoothing."""
        return postproc.PostprocessConfig(
            K=self.postprocess["K"],
            iterations=self.postprocess["iterations"],
        )


def _convert(key, value, default):
    try:
        if isinstance(default, bool):
            return _to_bool(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(default, float):
            return float(value)
        if value is None:
            return ""
        return _unquote(str(value))
    except (TypeError, ValueError) as error:
        raise ConfigurationError(
            f"Invalid value '{value}' for {key}", key=key
        ) from error


def _to_bool(value):
    if isinstance(value, bool):
        return value
    if str(value).lower() in TRUE_VALUES:
        return True
    if str(value).lower() in FALSE_VALUES:
        return False
    raise ValueError(value)


def _unquote(value):
    if len(value) > 1 and value[0] == value[-1] and value[0] in "\"'":
        return value[1:-1]
    return value


def _format(value):
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        if value and not 1e-3 <= abs(value) < 1e4:
            return np.format_float_scientific(
                value, unique=True, trim="-", exp_digits=1
            )
        return repr(value)
    return value


def load_config(path="", seed=None):
    """
    Load a run configuration.

    Parameters
    ----------
    path : :class:`str`
        Configuration file; defaults only if empty

    seed : :class:`int`
        If given, overrides the configured seed

    Returns
    -------
    config : :class:`RunConfig`
        Validated configuration

    """
    config = RunConfig()
    if path:
        config.from_file(path)
    if seed is not None:
        config.set("seed", seed)
        config._check_values()  # pylint: disable=protected-access
    return config
