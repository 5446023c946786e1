# src/utils.py
import logging
import os
import platform
from datetime import datetime
from importlib import metadata

import numpy as np
import pytz
import scipy

from exceptions import UserFacingError

DEFAULT_TZ = "UTC"
PACKAGE_NAME = "levels-sensing"


def set_tz_converter(formatter, tz_str=None):
    tz = pytz.timezone(tz_str or DEFAULT_TZ)
    formatter.converter = lambda *args: datetime.now(tz).timetuple()
    return formatter


def get_notification_logger(tz_str: str | None = None):
    """
    Creates a simple logger that only prints INFO messages to the console.
    """
    notification_logger = logging.getLogger('NotificationLogger')
    notification_logger.setLevel(logging.INFO)

    # Prevent messages from being passed to the root logger to avoid duplicates
    notification_logger.propagate = False

    if not notification_logger.handlers:
        console_handler = logging.StreamHandler()
        console_handler.setLevel(logging.INFO)
        console_handler.setFormatter(set_tz_converter(logging.Formatter('ℹ️ %(asctime)s - %(message)s'), tz_str))
        notification_logger.addHandler(console_handler)

    return notification_logger


def setup_logging(log_dir: str, run_id: str, console_level=logging.WARN, base_level=logging.INFO, tz_str: str | None = None):
    """
    Configures logging to write to both the console and a per-run file.
    """
    os.makedirs(log_dir, exist_ok=True)
    log_path = os.path.join(log_dir, f"{run_id}.log")

    logger = logging.getLogger()
    logger.setLevel(base_level)

    # Clear existing handlers to prevent duplicate logs
    if logger.hasHandlers():
        logger.handlers.clear()

    formatter = set_tz_converter(logging.Formatter('%(asctime)s - %(levelname)s - %(message)s'), tz_str)

    console_handler = logging.StreamHandler()
    console_handler.setLevel(console_level)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    file_handler = logging.FileHandler(log_path, mode='w')
    file_handler.setFormatter(formatter)
    logger.addHandler(file_handler)

    return log_path


def flush_loggers():
    """
    Forces all handlers attached to the root logger to flush their buffers.
    """
    for handler in logging.getLogger().handlers:
        handler.flush()


def git_commit_hash() -> str | None:
    """HEAD commit of the enclosing repository, or None outside a repository or without git."""
    try:
        import git
        repo = git.Repo(search_parent_directories=True)
        return repo.head.object.hexsha
    except Exception as e:
        logging.debug(f"No git commit recorded: {e}")
        return None


def check_git_repository_is_clean():
    """Checks for uncommitted changes and raises a specific error if dirty."""
    import git
    logging.info("Performing Git repository cleanliness check...")
    repo = git.Repo(search_parent_directories=True)
    if repo.is_dirty(untracked_files=True):
        error_message = "Git repository is dirty. Commit or stash changes before running."
        logging.error(error_message)
        raise UserFacingError(error_message)
    logging.info("Git repository is clean.")
    return repo.head.object.hexsha


def setup_mlflow(
    experiment_name: str,
    tracking_uri: str
):
    """
    Points MLflow at the tracking store and selects the experiment.
    """
    import mlflow
    logging.info(f"Setting up MLflow experiment '{experiment_name}' at {tracking_uri}")
    mlflow.set_tracking_uri(tracking_uri)
    mlflow.set_experiment(experiment_name=experiment_name)
    return mlflow


def package_version() -> str:
    try:
        return metadata.version(PACKAGE_NAME)
    except metadata.PackageNotFoundError:
        return "0+unknown"


def provenance(config_hash: str, seeds: dict, tz: str | None = None) -> dict:
    """The block every output carries: what ran, with which seeds, on which code."""
    return {
        "config_hash": config_hash,
        "seeds": seeds,
        "version": package_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
        "git_commit": git_commit_hash(),
        "timestamp": datetime.now(pytz.timezone(tz or DEFAULT_TZ)).isoformat(timespec="seconds"),
    }


def get_datetime_str(tz: str | None = None) -> str:
    return datetime.now(pytz.timezone(tz or DEFAULT_TZ)).strftime("%H-%M_%d_%m_%Y")
