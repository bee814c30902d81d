import hashlib
import json
import logging
import os
import sys
from contextlib import contextmanager
from logging.handlers import TimedRotatingFileHandler

from utils.errors import WorkspaceLockedError

LOG_FILENAME = "pipeline.log"
LOCK_FILENAME = ".lock"


def setup_logging(log_dir: str = "logs", level: str = "INFO"):
    """
    Configures logging to output to the console and a rotating file.

    Args:
        log_dir: Directory that receives the rotating log file.
        level: Root logger level name (e.g. "INFO", "DEBUG").
    """
    os.makedirs(log_dir, exist_ok=True)

    log_formatter = logging.Formatter(
        "%(asctime)s - %(levelname)s - %(filename)s:%(lineno)d - %(message)s"
    )

    # File Handler (Rotates daily, keeps 7 backups)
    file_handler = TimedRotatingFileHandler(
        os.path.join(log_dir, LOG_FILENAME),
        when="midnight",
        interval=1,
        backupCount=7,
        encoding="utf-8"
    )
    file_handler.setFormatter(log_formatter)

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(log_formatter)

    logger = logging.getLogger()
    logger.setLevel(level.upper())
    # Re-running setup (e.g. once per workspace) must not duplicate output
    if logger.hasHandlers():
        for handler in list(logger.handlers):
            handler.close()
        logger.handlers.clear()
    logger.addHandler(file_handler)
    logger.addHandler(console_handler)

    logging.info(f"Logging is set up (Console & Rotating File in {log_dir}).")


def sha256_file(path: str) -> str:
    """
    Hex SHA-256 digest of a file's bytes.
    """
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def canonical_hash(payload) -> str:
    """
    Digest of a JSON-serializable object, independent of dict ordering.
    """
    return sha256_text(json.dumps(payload, sort_keys=True, separators=(",", ":")))


@contextmanager
def workspace_lock(workspace: str):
    """
    Holds an exclusive lock file in the workspace for the duration of the block.

    Args:
        workspace: Workspace directory; created if missing.

    Raises:
        WorkspaceLockedError: If another invocation already holds the lock.
    """
    os.makedirs(workspace, exist_ok=True)
    lock_path = os.path.join(workspace, LOCK_FILENAME)
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise WorkspaceLockedError(
            f"Workspace {workspace} is locked by another run (remove {lock_path} if stale)."
        )
    try:
        os.write(fd, str(os.getpid()).encode("ascii"))
        os.close(fd)
        yield lock_path
    finally:
        try:
            os.remove(lock_path)
        except OSError as e:
            logging.error(f"Error removing lock file {lock_path}: {e}")
