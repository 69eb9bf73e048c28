"""Paths and loaders shared by the subcommands."""
import logging
from pathlib import Path
from typing import List, Optional

from app.exceptions import DomainError
from app.models.dataset import DatasetManifest, Split
from app.models.run_config import ModelKind, RunConfig
from app.models.system import Trajectory
from app.services.dataio import read_manifest, read_trajectory
from app.services.networks import load_model
from app.services.training import checkpoint_path

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.csv"


def manifest_path(config: RunConfig) -> Path:
    return Path(config.dataset.data_dir) / MANIFEST_NAME


def load_manifest(config: RunConfig) -> DatasetManifest:
    return read_manifest(manifest_path(config))


def test_trajectories(config: RunConfig, param: Optional[float] = None) -> List[Trajectory]:
    """Test-split trajectories, or only the one whose parameter equals ``param``."""
    entries = load_manifest(config).by_split(Split.TEST)
    if param is not None:
        entries = [e for e in entries if abs(e.param - param) < 1e-12]
        if not entries:
            raise DomainError(f"no test trajectory with parameter {param}")
    return [read_trajectory(e.path) for e in entries]


def load_trained(config: RunConfig, kind: ModelKind, path: Optional[str] = None):
    ckpt = Path(path) if path else checkpoint_path(config.training.run_dir, kind)
    model, _ = load_model(ckpt)
    logger.info(f"Loaded {kind.value} model from {ckpt}")
    return model


def report_dir(config: RunConfig) -> Path:
    out = Path(config.eval.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out
