import configparser
import io
import logging
import os
from pathlib import Path
from typing import Dict, Mapping, Optional

from dotenv import load_dotenv
from pydantic import ValidationError

from app.exceptions import ConfigError
from app.models.run_config import RunConfig

# Set up logging
logger = logging.getLogger(__name__)

load_dotenv()

logger.info("Loading configuration from environment variables")
for var in ["PAINT_THREADS", "PAINT_LOG_LEVEL", "PAINT_DATA_DIR", "PAINT_RUN_DIR"]:
    logger.debug(f"{var} = {os.getenv(var, 'Not set')}")


class Settings:
    def __init__(self):
        # Worker parallelism (0 = one thread per core)
        threads = os.getenv("PAINT_THREADS", "0")
        try:
            self.threads = int(threads)
        except ValueError:
            raise ConfigError(f"PAINT_THREADS must be an integer, got {threads!r}")
        if self.threads < 0:
            raise ConfigError(f"PAINT_THREADS must be >= 0, got {self.threads}")

        self.log_level = os.getenv("PAINT_LOG_LEVEL", "INFO").upper()

        # Default locations, used when the run config leaves them relative
        self.data_dir = os.getenv("PAINT_DATA_DIR", "")
        self.run_dir = os.getenv("PAINT_RUN_DIR", "")


# Create a singleton instance
settings = Settings()


def _coerce_sections(parser: configparser.ConfigParser) -> Dict[str, Dict[str, str]]:
    if parser.defaults():
        raise ConfigError(f"keys outside any section: {sorted(parser.defaults())}")
    return {section: dict(parser.items(section)) for section in parser.sections()}


def parse_overrides(pairs) -> Dict[str, Dict[str, str]]:
    """Turn ``section.key=value`` strings into a nested mapping."""
    nested: Dict[str, Dict[str, str]] = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not of the form section.key=value")
        dotted, value = pair.split("=", 1)
        if "." not in dotted:
            raise ConfigError(f"override {dotted!r} must name a section, e.g. training.steps")
        section, key = dotted.strip().split(".", 1)
        nested.setdefault(section, {})[key.strip()] = value.strip()
    return nested


def load_run_config(
    path: Optional[str] = None,
    overrides: Optional[Mapping[str, Mapping[str, object]]] = None,
) -> RunConfig:
    """Resolve the run configuration with precedence flag > file > default.

    Raises:
        ConfigError: unreadable file, unknown section/key, or invalid value.
    """
    merged: Dict[str, Dict[str, object]] = {}
    if path:
        if not Path(path).is_file():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        try:
            parser.read(path)
        except configparser.Error as e:
            raise ConfigError(f"cannot parse {path}: {e}")
        merged = _coerce_sections(parser)
        logger.info(f"Loaded config file {path} with sections {sorted(merged)}")

    for section, values in (overrides or {}).items():
        merged.setdefault(section, {}).update(values)

    try:
        config = RunConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration:\n{e}")

    if settings.data_dir and "data_dir" not in merged.get("dataset", {}):
        config.dataset.data_dir = settings.data_dir
    if settings.run_dir and "run_dir" not in merged.get("training", {}):
        config.training.run_dir = settings.run_dir
    return config


def dump_run_config(config: RunConfig) -> str:
    """Render a resolved configuration back to the INI format it was read from."""
    parser = configparser.ConfigParser()
    for section, values in config.model_dump(mode="json").items():
        parser[section] = {
            key: ", ".join(str(v) for v in value) if isinstance(value, list) else str(value)
            for key, value in values.items()
        }
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
