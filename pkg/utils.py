# utils.py

import os
import json
import shutil
import hashlib
import logging
import tempfile
from typing import Any, Dict, Iterable, List, Optional, Sequence
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

TOOLKIT_VERSION = "1.0.0"

# Significant digits used for every CSV number
CSV_DIGITS = 17


class WavesplitError(Exception):
    """Base class for all toolkit errors"""


class ConfigError(WavesplitError, ValueError):
    """Scenario configuration is invalid"""


class PreconditionError(WavesplitError, ValueError):
    """A numerical operation was called outside its domain"""


class WrapAroundError(PreconditionError):
    """A pulse reached the seam of the periodic domain"""


class OutputError(WavesplitError, OSError):
    """Result files could not be written"""


EXIT_CODES = {
    ConfigError: 2,
    PreconditionError: 3,
    OutputError: 4,
}


# Environment variable getters with defaults
def get_output_dir() -> str:
    return os.getenv("WAVESPLIT_OUTPUT_DIR", "./data/runs")

def get_workers() -> int:
    return int(os.getenv("WAVESPLIT_WORKERS", "1"))

def get_log_level() -> str:
    return os.getenv("WAVESPLIT_LOG_LEVEL", "INFO").upper()

def get_runs_db_path() -> str:
    return os.getenv("RUNS_DB_PATH", "")

def get_calibration_trials() -> int:
    return int(os.getenv("CALIBRATION_TRIALS", "100"))


def setup_logger(name: str) -> logging.Logger:
    """Set up a logger with standard configuration"""
    logger = logging.getLogger(name)
    if not logger.handlers:
        handler = logging.StreamHandler()
        formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')
        handler.setFormatter(formatter)
        logger.addHandler(handler)
        logger.setLevel(get_log_level())
    return logger


def exit_code_for(error: BaseException) -> int:
    """Map an exception to the CLI exit code (1 for anything unexpected)"""
    for error_type, code in EXIT_CODES.items():
        if isinstance(error, error_type):
            return code
    return 1


def format_number(value: float) -> str:
    """Format a float with 17 significant digits"""
    return f"{float(value):.{CSV_DIGITS}g}"


def csv_text(header: Sequence[str], rows: Iterable[Sequence[float]]) -> str:
    """Render a header row and numeric rows as comma-separated text"""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_number(value) for value in row))
    return "\n".join(lines) + "\n"


def json_text(payload: Dict[str, Any]) -> str:
    """Deterministic JSON rendering used for every JSON artefact"""
    return json.dumps(payload, indent=2) + "\n"


def config_digest(payload: Dict[str, Any]) -> str:
    """sha256 of the canonical JSON form of a config"""
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class OutputStage:
    """
    Collects the files of one command in a staging directory and moves them
    into the output directory only when the command succeeds.

    Usage:
        with OutputStage(out_dir) as stage:
            stage.write_text("report.json", text)
    """

    def __init__(self, out_dir: str):
        self.out_dir = os.path.abspath(out_dir)
        self.staging_dir: Optional[str] = None
        self.files: List[str] = []

    def __enter__(self) -> "OutputStage":
        parent = os.path.dirname(self.out_dir)
        try:
            os.makedirs(parent, exist_ok=True)
            self.staging_dir = tempfile.mkdtemp(dir=parent, prefix=".stage-")
        except OSError as e:
            raise OutputError(f"Could not create staging directory next to {self.out_dir}: {e}") from e
        return self

    def path(self, name: str) -> str:
        """Absolute staging path of a relative output name"""
        return os.path.join(self.staging_dir, name)

    def write_text(self, name: str, text: str):
        target = self.path(name)
        try:
            os.makedirs(os.path.dirname(target), exist_ok=True)
            with open(target, "w", encoding="utf-8", newline="\n") as handle:
                handle.write(text)
        except OSError as e:
            raise OutputError(f"Could not stage {name}: {e}") from e
        self.files.append(name)

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                self._commit()
        finally:
            if self.staging_dir and os.path.isdir(self.staging_dir):
                shutil.rmtree(self.staging_dir, ignore_errors=True)
        return False

    def _commit(self):
        try:
            os.makedirs(self.out_dir, exist_ok=True)
            for name in self.files:
                target = os.path.join(self.out_dir, name)
                os.makedirs(os.path.dirname(target), exist_ok=True)
                os.replace(self.path(name), target)
        except OSError as e:
            raise OutputError(f"Could not move results into {self.out_dir}: {e}") from e
