"""
Auxiliary functionality used by other modules of the wordseg package.

To avoid circular dependencies, this module does *not* depend on any other
modules of the wordseg package, but it can be imported into every other
module.

As naturally, a utils module tends to be a bit messy, the different tools
available are listed below according to more general categories.


Files and I/O
=============

* :func:`get_package_data`

  Obtain contents from a non-code file stored within the package.

* :func:`atomic_write`

  Context manager writing to a temporary file renamed on success.


Random numbers
==============

* :func:`mix_seed`

  Derive a 64-bit seed from a base seed and a stream or sample index.

* :func:`make_rng`

  Create a :class:`numpy.random.Generator` from a (derived) seed.


Helper classes
==============

* :class:`ToDictMixin`

  Mixin class for returning all public attributes as dict.

* :class:`Template`

  Wrapper for using the template engine (Jinja2).


Module documentation
====================
"""
import contextlib
import os
import pkgutil
import tempfile

import jinja2
import numpy as np
import platformdirs


MASK64 = 0xFFFFFFFFFFFFFFFF

STREAM_EMBEDDING = 1
STREAM_PARAMETERS = 2
STREAM_BACKBONE = 3
STREAM_SAMPLES = 4


def get_package_data(name="", directory="templates"):
    """
    Obtain contents from a non-code file ("package data").

    There are generally three places where package data can be stored:

    #. Within the package,

    #. In the site-wide data directory
       (with the package name as subdirectory),

    #. In the user-specific data directory
       (with the package name as subdirectory).

    The location of the latter two is specific to the operating system used.
    Here, the `platformdirs package <https://pypi.org/project/platformdirs/>`_
    is used, providing paths for all major platforms.

    The given file is searched for in the user-specific data directory
    first, followed by the site-wide data directory. Only if it cannot be
    found in either place, as a fallback the package itself is queried.
    Thus, a user may replace the lexicon or the report template without
    touching the installed package.

    Parameters
    ----------
    name : :class:`str`
        Name of the file whose contents should be accessed.

    directory : :class:`str`
        Directory within the package where the files are located.

        Default: "templates"

    Returns
    -------
    contents : :class:`str`
        String containing the contents of the non-code file.

    Raises
    ------
    ValueError
        Raised if no filename is given.

    """
    if not name:
        raise ValueError("No filename given.")
    package = __package__
    path = os.path.join(package, os.path.sep.join(directory.split("/")), name)
    for data_dir in (
        platformdirs.user_data_dir(),
        platformdirs.site_data_dir(),
    ):
        if os.path.exists(os.path.join(data_dir, path)):
            with open(os.path.join(data_dir, path), encoding="utf8") as file:
                return file.read()
    return pkgutil.get_data(package, "/".join([directory, name])).decode()


@contextlib.contextmanager
def atomic_write(path="", mode="wb"):
    """
    Context manager writing to a temporary file renamed on success.

    The temporary file lives in the directory of the destination, hence the
    final :func:`os.replace` is atomic on all major platforms. If the body
    of the ``with`` statement raises, the temporary file is removed and the
    destination is left untouched.

    Parameters
    ----------
    path : :class:`str`
        Name of the file finally written

    mode : :class:`str`
        Mode the temporary file is opened with, either "wb" or "w"

        Default: "wb"

    Examples
    --------

    .. code-block::

        with atomic_write("mask.pgm") as file:
            file.write(data)

    """
    if not path:
        raise ValueError("No filename given.")
    directory = os.path.dirname(os.path.abspath(path))
    handle, tmp_name = tempfile.mkstemp(
        prefix=".tmp-", suffix=os.path.basename(path), dir=directory
    )
    encoding = None if "b" in mode else "utf8"
    try:
        with os.fdopen(handle, mode, encoding=encoding) as file:
            yield file
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise


def mix_seed(seed=0, index=0):
    """
    Derive a 64-bit seed from a base seed and an index.

    Uses the SplitMix64 finaliser (an avalanche mixer): every input bit
    affects every output bit, hence seeds derived for neighbouring indices
    are statistically unrelated. Parallel workers generating sample ``i``
    only need the base seed and ``i``.

    Parameters
    ----------
    seed : :class:`int`
        Base seed, reduced modulo 2**64

    index : :class:`int`
        Stream or sample index, reduced modulo 2**64

    Returns
    -------
    seed : :class:`int`
        Derived seed in the range [0, 2**64)

    """
    value = (seed + (index + 1) * 0x9E3779B97F4A7C15) & MASK64
    value = ((value ^ (value >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    value = ((value ^ (value >> 27)) * 0x94D049BB133111EB) & MASK64
    return value ^ (value >> 31)


def make_rng(seed=0, index=None):
    """
    Create a random number generator from a seed.

    Parameters
    ----------
    seed : :class:`int`
        Base seed

    index : :class:`int`
        If given, the generator is seeded with ``mix_seed(seed, index)``

    Returns
    -------
    rng : :class:`numpy.random.Generator`
        Generator using the PCG64 bit generator

    """
    if index is not None:
        seed = mix_seed(seed, index)
    return np.random.Generator(np.random.PCG64(seed & MASK64))


class ToDictMixin:
    """
    Mixin class for returning all public attributes as dict.

    Sometimes there is the need to either exclude public attributes (in case
    of infinite loops created by trying to apply ``to_dict`` in this case)
    or to add (public) attributes, particularly those used by getters and
    setters that are otherwise not included.

    To do so, there are two non_public attributes of this class each class
    inheriting from it will be able to set as well:

    * :attr:`_exclude_from_to_dict`
    * :attr:`_include_in_to_dict`

    Attributes
    ----------
    _exclude_from_to_dict : :class:`list`
        Names of (public) attributes to exclude from dictionary

    _include_in_to_dict : :class:`list`
        Names of (public) attributes to include into dictionary

    """

    def __init__(self):
        self._exclude_from_to_dict = []
        self._include_in_to_dict = []

    def to_dict(self):
        """
        Create dictionary containing public attributes of an object.

        Returns
        -------
        public_attributes : :class:`dict`
            Dictionary containing the public attributes of the object

            The order of attribute definition is preserved

        """
        return self._traverse_dict(self.__dict__)

    def _traverse_dict(self, instance_dict):
        output = {}
        for key, value in instance_dict.items():
            if (
                str(key).startswith("_")
                or str(key) in self._exclude_from_to_dict
            ):
                continue
            output[key] = self._traverse(value)
        for key in self._include_in_to_dict:
            output[key] = self._traverse(getattr(self, key))
        return output

    def _traverse(self, value):
        if isinstance(value, ToDictMixin):
            result = value.to_dict()
        elif isinstance(value, dict):
            result = self._traverse_dict(value)
        elif isinstance(value, (list, tuple)):
            result = [self._traverse(i) for i in value]
        elif isinstance(value, np.generic):
            result = value.item()
        else:
            result = value
        return result


class Template:
    """
    Wrapper for using the template engine (Jinja2).

    Dealing with templates requires a number of settings to be made, namely
    the source of the template, its name, the context (*i.e.*,
    the dictionary containing the variables to be replaced within the
    template), and the destination the rendered template should be output to.

    .. note::

        Templates are looked up using the function :func:`get_package_data`:
        first in the user data directory, then in the site data directory,
        and finally within the package (distribution).

    All templates of the package are plain text, hence autoescaping is
    switched off.


    Attributes
    ----------
    path : :class:`str`
        Location where the template resides (see note above).

    template : :class:`str`
        Name of the template to be used.

    context : :class:`dict`
        Key-value store of variables to be replaced within the template.

    destination : :class:`str`
        Name of the file the rendered template should be output to.


    Examples
    --------

    .. code-block::

        template = Template(
            template='report.j2.txt',
            context={'miou': 0.5},
            destination='report.txt',
        )
        template.create()

    """

    def __init__(self, path="", template="", context=None, destination=""):
        self.path = path
        self.template = template
        self.context = context or {}
        self.destination = destination

    @property
    def environment(self):
        """
        Environment used by the template engine.

        Returns
        -------
        env : :class:`jinja2.Environment`
            Environment settings for the template engine.

        """
        env = jinja2.Environment(
            loader=jinja2.FunctionLoader(get_package_data),
            autoescape=False,  # nosec B701
            keep_trailing_newline=True,
            trim_blocks=True,
            lstrip_blocks=True,
        )
        return env

    def render(self):
        """
        Render the template.

        Returns
        -------
        content : :class:`str`
            Rendered template.

        """
        template = self.environment.get_template(
            "/".join(part for part in (self.path, self.template) if part)
        )
        return template.render(self.context)

    def create(self):
        """
        Write rendered template to a file.

        The file is written atomically, see :func:`atomic_write`.

        """
        content = self.render()
        with atomic_write(self.destination, mode="w") as file:
            file.write(content)
