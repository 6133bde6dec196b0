# Copyright 2024 The padeepc developers
# SPDX-License-Identifier: Apache-2
"""
Common classes and values used around padeepc.
"""
import hashlib
import logging
import os
import pathlib
import sys

import numpy as np

# padeepc package version
__version__ = "0.1.0"

if sys.platform == "win32":
    DEFAULT_DATA_DIR = pathlib.Path.home() / "AppData" / "Local" / "padeepc"
else:
    DEFAULT_DATA_DIR = pathlib.Path.home() / ".local" / "padeepc"

DATA_DIR = pathlib.Path(os.environ.get("PADEEPC_DATA", DEFAULT_DATA_DIR)).resolve()

# Process exit codes shared by every subcommand.
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAULT = 2
EXIT_CONFIG = 3

LOG_LEVELS = ("debug", "info", "warning", "error", "critical")

LOG_FORMAT = "%(asctime)s %(name)s %(levelname)s %(message)s"

log = logging.getLogger(__name__)


class PadeepcException(Exception):
    """
    Base class for exceptions generated from padeepc.
    """


class ConfigError(PadeepcException):
    """
    Raised when a configuration value is missing, unknown or out of range.
    """


def thread_count():
    """
    Get the number of scenarios allowed to run concurrently.

    Read from the ``PADEEPC_THREADS`` environment variable, defaulting to one.

    :return: A positive worker count
    :rtype: int
    """
    raw = os.environ.get("PADEEPC_THREADS", "1")
    try:
        count = int(raw)
    except ValueError:
        log.warning("Ignoring non-integer PADEEPC_THREADS=%r", raw)
        return 1
    return max(1, count)


def work_dir(name=None, root=None):
    """
    Get the absolute path to an output directory, creating it if needed.

    :param name: An optional sub directory name
    :type name: str
    :param root: An explicitly requested root directory, defaults to ``DATA_DIR``
    :type root: str

    :return: The absolute path of the directory
    :rtype: ``pathlib.Path``
    """
    if root is not None:
        base = pathlib.Path(root).resolve()
    else:
        base = DATA_DIR
    if name:
        base = base / name
    base.mkdir(parents=True, exist_ok=True)
    return base


def setup_logging(log_level="info", logdir=None):
    """
    Configure the root logger for a command invocation.

    A stream handler honours ``log_level``; when ``logdir`` is given a file
    handler captures everything at debug level into ``padeepc.log``.

    :param log_level: The console log level name
    :type log_level: str
    :param logdir: Directory to write ``padeepc.log`` into
    :type logdir: ``pathlib.Path``
    """
    root_log = logging.getLogger(None)
    root_log.setLevel(logging.NOTSET)
    for handler in list(root_log.handlers):
        if getattr(handler, "_padeepc", False):
            root_log.removeHandler(handler)
            handler.close()

    handler = logging.StreamHandler()
    handler.setLevel(logging.getLevelName(log_level.upper()))
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler._padeepc = True
    root_log.addHandler(handler)

    if logdir is not None:
        pathlib.Path(logdir).mkdir(parents=True, exist_ok=True)
        handler = logging.FileHandler(pathlib.Path(logdir) / "padeepc.log")
        handler.setLevel(logging.DEBUG)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._padeepc = True
        root_log.addHandler(handler)


def sub_seed(seed, *keys):
    """
    Derive a reproducible child seed from a root seed and a tuple of keys.

    Baseline and controller runs of one scenario share sub-seeds so they see
    the same plant, cycle and headway draw.

    :param seed: The root seed
    :type seed: int
    :param keys: Strings or integers naming the consumer
    :type keys: tuple

    :return: A 32 bit seed
    :rtype: int
    """
    digest = hashlib.sha256(
        "/".join([str(int(seed))] + [str(key) for key in keys]).encode()
    ).digest()
    entropy = int.from_bytes(digest[:8], "little")
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def add_common_arguments(subparser, config=True):
    """
    Add the flags shared by every subcommand.

    :param subparser: The parser to add arguments to
    :type subparser: ``argparse.ArgumentParser``
    :param config: Whether to add ``--config``
    :type config: bool
    """
    if config:
        subparser.add_argument(
            "--config",
            default=None,
            type=str,
            help="Scenario/config YAML file [default: built-in defaults]",
        )
    subparser.add_argument(
        "--seed",
        default=0,
        type=int,
        help="Root random seed [default: %(default)s]",
    )
    subparser.add_argument(
        "--out",
        default=None,
        type=str,
        help="Output directory [default: PADEEPC_DATA or ~/.local/padeepc]",
    )
    subparser.add_argument(
        "--log-level",
        default="info",
        choices=LOG_LEVELS,
        help="Log level [default: %(default)s]",
    )


def exit_code(exc):
    """
    Map an exception raised by a command to the process exit code.

    :param exc: The exception
    :type exc: :class:`PadeepcException`

    :rtype: int
    """
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    return EXIT_FAULT
