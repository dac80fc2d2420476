import os
import re
import json
import errno
import string
import zlib
import logging
from contextlib import contextmanager

import numpy as np
import appdirs
import unidecode

from .constants import (
    APP_NAME,
    DEFAULT_SEED,
    SEED_ENV_KEY,
    HOME_ENV_KEY,
    LOG_LEVEL_ENV_KEY,
    LOCK_NAME,
)

SLUGIFY_WHITELIST = string.ascii_letters + string.digits
SLUGIFY_SEP_WHITELIST = " ,./\\;:!|*^#@~+-_="


def get_default_seed():
    """Seed used when the run configuration does not define one.

    Environment variable 'BUBBLEDYN_SEED' overrides the value so CI runs can
    pin every stochastic component at once.

    Returns:
        int: Seed value.

    """
    try:
        return int(os.environ.get(SEED_ENV_KEY))
    except (ValueError, TypeError):
        pass
    return DEFAULT_SEED


def get_env_seed():
    """Seed from environment or None when not set or invalid."""
    try:
        return int(os.environ.get(SEED_ENV_KEY))
    except (ValueError, TypeError):
        return None


def get_default_artifacts_root():
    """Root directory for datasets, checkpoints and results.

    Returns:
        str: Value of 'BUBBLEDYN_HOME' or per-user data directory.

    """
    root = os.environ.get(HOME_ENV_KEY)
    if root:
        return root
    return appdirs.user_data_dir(APP_NAME)


def get_default_log_level():
    """Logging level name from environment, 'INFO' by default."""
    level = (os.environ.get(LOG_LEVEL_ENV_KEY) or "").upper()
    if level in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        return level
    return "INFO"


def slugify_string(
    input_string,
    separator="_",
    slug_whitelist=SLUGIFY_WHITELIST,
    split_chars=SLUGIFY_SEP_WHITELIST,
    min_length=1,
    lower=False,
):
    """Slugify a text string.

    Transliterates input string to ASCII, removes special characters and
    joins resulting elements using specified separator. Used for tool and run
    names that end up in artifact file names.

    Args:
        input_string (str): Input string to slugify.
        separator (str): A string used to separate returned elements.
        slug_whitelist (str): Characters allowed in the output.
        split_chars (str): Set of characters used for word splitting.
        min_length (int): Minimal length of an element (word).
        lower (bool): Convert to lower-case.

    Returns:
        str: Slugified string.

    """
    tmp_string = unidecode.unidecode(input_string)
    if lower:
        tmp_string = tmp_string.lower()

    parts = [
        re.sub("[^{}]".format(re.escape(slug_whitelist)), "", part)
        for part in re.split("[{}]".format(re.escape(split_chars)), tmp_string)
    ]
    return separator.join(
        part
        for part in parts
        if len(part) >= min_length
    )


def derive_rng(seed, *keys):
    """Create independent generator for a sub-component of a run.

    Keys are mixed into the seed so e.g. trial 3 of tool 'wedge' always gets
    the same stream regardless of how many other trials ran before.

    Args:
        seed (int): Run seed.
        *keys (Union[int, str]): Stream identifiers.

    Returns:
        np.random.Generator: Seeded generator.

    """
    entropy = [int(seed) & 0xFFFFFFFF]
    for key in keys:
        if isinstance(key, str):
            key = zlib.crc32(key.encode("utf-8"))
        entropy.append(int(key) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def json_default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(
        "Object of type {} is not JSON serializable".format(str(type(value)))
    )


def write_json(path, data):
    with open(path, "w", encoding="utf-8") as stream:
        json.dump(
            data, stream, indent=2, sort_keys=True, default=json_default
        )
        stream.write("\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as stream:
        return json.load(stream)


@contextmanager
def directory_lock(dirpath):
    """Exclusive lock of an artifact directory for the duration of a write.

    Args:
        dirpath (str): Directory to lock. Created when missing.

    Raises:
        RuntimeError: When another process holds the lock.

    """
    os.makedirs(dirpath, exist_ok=True)
    lock_path = os.path.join(dirpath, LOCK_NAME)
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except OSError as exc:
        if exc.errno != errno.EEXIST:
            raise
        raise RuntimeError(
            "Directory \"{}\" is locked by another process".format(dirpath)
        )
    try:
        os.write(fd, str(os.getpid()).encode("ascii"))
        yield lock_path
    finally:
        os.close(fd)
        os.remove(lock_path)


class TrainingProgress:
    """Object to store progress of a training run.

    Tracks per-epoch losses and the epoch with the lowest validation loss,
    which is the one whose weights are returned.
    """

    def __init__(self):
        self._started = False
        self._done = False
        self._train_losses = []
        self._val_losses = []
        self._best_epoch = None

        self._failed = False
        self._fail_reason = None
        self._log = None

    @property
    def log(self):
        if self._log is None:
            self._log = logging.getLogger(self.__class__.__name__)
        return self._log

    def get_started(self):
        return self._started

    def set_started(self):
        """Mark that training started.

        Raises:
            ValueError: If training was already started.

        """
        if self._started:
            raise ValueError("Progress already started")
        self._started = True

    def get_done(self):
        return self._done

    def set_done(self):
        """Mark training as finished.

        Raises:
            ValueError: If progress was already marked as done
                or wasn't started yet.

        """
        if self._done:
            raise ValueError("Progress was already marked as done")
        if not self._started:
            raise ValueError("Progress didn't start yet")
        self._done = True

    def get_failed(self):
        return self._failed

    def get_fail_reason(self):
        return self._fail_reason

    def set_failed(self, reason):
        self._fail_reason = reason
        self._failed = True

    def add_epoch(self, train_loss, val_loss):
        """Store losses of finished epoch.

        Args:
            train_loss (float): Mean training loss of the epoch.
            val_loss (float): Validation loss after the epoch.

        Returns:
            bool: The epoch improved on the best validation loss.

        """
        self._train_losses.append(float(train_loss))
        self._val_losses.append(float(val_loss))
        epoch = len(self._val_losses) - 1
        improved = (
            self._best_epoch is None
            or val_loss < self._val_losses[self._best_epoch]
        )
        if improved:
            self._best_epoch = epoch
        self.log.info(
            "Epoch {} train {:.6g} val {:.6g}{}".format(
                epoch, train_loss, val_loss, " *" if improved else ""
            )
        )
        return improved

    @property
    def epochs(self):
        return len(self._val_losses)

    @property
    def train_losses(self):
        return list(self._train_losses)

    @property
    def val_losses(self):
        return list(self._val_losses)

    @property
    def best_epoch(self):
        return self._best_epoch

    @property
    def best_val_loss(self):
        if self._best_epoch is None:
            return None
        return self._val_losses[self._best_epoch]

    def epochs_since_best(self):
        if self._best_epoch is None:
            return 0
        return self.epochs - 1 - self._best_epoch

    def to_data(self):
        return {
            "epochs": self.epochs,
            "best_epoch": self._best_epoch,
            "best_val_loss": self.best_val_loss,
            "final_train_loss": (
                self._train_losses[-1] if self._train_losses else None
            ),
            "final_val_loss": (
                self._val_losses[-1] if self._val_losses else None
            ),
            "train_losses": list(self._train_losses),
            "val_losses": list(self._val_losses),
            "failed": self._failed,
            "fail_reason": self._fail_reason,
        }
