"""Trajectory persistence, parameter splits and training-window extraction."""
import logging
import struct
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from app.exceptions import DomainError, FormatError
from app.models.dataset import DatasetManifest, ManifestEntry, Split, WindowSample
from app.models.sensing import ProbeKind, ProbeSet
from app.models.system import SYSTEM_CODES, SystemParams, Trajectory
from app.services.sensing import emit, encode, sample_probes
from app.utils.file_utils import atomic_write_bytes

logger = logging.getLogger(__name__)

TRAJ_MAGIC = b"PTRJ"
TRAJ_VERSION = 1
# magic, version, system code, H, W, n_frames, dt, (r, sigma, rho, beta, nu, k_f, A, drag), seed, normalisation
_HEADER = struct.Struct("<4sIIIIId8dQd")
HEADER_BYTES = _HEADER.size

_KIND_BY_CODE = {code: kind for kind, code in SYSTEM_CODES.items()}

PathLike = Union[str, Path]


# ---------------------------------------------------------------------------
# Trajectory files
# ---------------------------------------------------------------------------

def write_trajectory(path: PathLike, traj: Trajectory) -> Path:
    """Write a field trajectory: fixed 112-byte header then f64 frames (u then v)."""
    if not traj.is_field:
        raise FormatError("only 2D field trajectories are persisted; regenerate map/ODE trajectories instead")
    n, _, h, w = traj.frames.shape
    p = traj.params
    header = _HEADER.pack(
        TRAJ_MAGIC, TRAJ_VERSION, p.code, h, w, n, float(traj.dt),
        p.r, p.sigma, p.rho, p.beta, p.nu, float(p.k_f), p.amplitude, p.drag,
        int(p.seed), float(traj.normalization),
    )
    payload = np.ascontiguousarray(traj.frames, dtype="<f8").tobytes()
    atomic_write_bytes(path, header + payload)
    logger.debug(f"Wrote {n} frames ({len(payload)} payload bytes) to {path}")
    return Path(path)


def read_trajectory(path: PathLike) -> Trajectory:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_BYTES:
        raise FormatError(f"{path}: expected a {HEADER_BYTES}-byte header, file has {len(raw)} bytes")
    (magic, version, code, h, w, n, dt, r, sigma, rho, beta, nu, k_f, amplitude, drag,
     seed, normalization) = _HEADER.unpack_from(raw, 0)
    if magic != TRAJ_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {TRAJ_MAGIC!r}")
    if version != TRAJ_VERSION:
        raise FormatError(f"{path}: unsupported version {version}, expected {TRAJ_VERSION}")
    if code not in _KIND_BY_CODE:
        raise FormatError(f"{path}: unknown system code {code}")
    expected = HEADER_BYTES + n * 2 * h * w * 8
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for {n} frames of {h}x{w}, got {len(raw)}")
    frames = np.frombuffer(raw, dtype="<f8", offset=HEADER_BYTES).reshape(n, 2, h, w).astype(np.float64)
    params = SystemParams(
        kind=_KIND_BY_CODE[code], r=r, sigma=sigma, rho=rho, beta=beta, nu=nu,
        k_f=int(round(k_f)), amplitude=amplitude, drag=drag, grid=h, seed=seed,
    )
    return Trajectory(frames=frames, dt=dt, params=params, normalization=normalization)


# ---------------------------------------------------------------------------
# Splits and manifests
# ---------------------------------------------------------------------------

def make_splits(
    param_values: Sequence[float],
    seed: int = 0,
    file_pattern: str = "traj_{index:03d}.ptrj",
) -> DatasetManifest:
    """Pick 1 validation and 2 test values strictly inside the train range."""
    values = sorted(set(float(v) for v in param_values))
    if len(values) < 5:
        raise DomainError(
            f"need at least 5 distinct parameter values (3 interior for val/test), got {len(values)}"
        )
    rng = np.random.default_rng(seed)
    interior = rng.choice(np.arange(1, len(values) - 1), size=3, replace=False)
    split_of = {int(interior[0]): Split.VAL, int(interior[1]): Split.TEST, int(interior[2]): Split.TEST}
    entries = [
        ManifestEntry(path=file_pattern.format(index=i), param=v, split=split_of.get(i, Split.TRAIN))
        for i, v in enumerate(values)
    ]
    manifest = DatasetManifest(entries=entries)
    logger.info(
        f"Split {len(values)} params: val={manifest.params(Split.VAL)}, test={manifest.params(Split.TEST)}"
    )
    return manifest


def write_manifest(manifest: DatasetManifest, path: PathLike) -> None:
    frame = pd.DataFrame(
        [(e.path, repr(e.param), e.split.value) for e in manifest.entries],
        columns=["path", "param", "split"],
    )
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, header=False, index=False)


def read_manifest(path: PathLike, check_exists: bool = True) -> DatasetManifest:
    """Read ``path,param,split`` lines; relative paths resolve against the manifest's directory."""
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"manifest not found: {path}")
    frame = pd.read_csv(path, header=None, names=["path", "param", "split"], dtype={"path": str})
    entries = []
    for row in frame.itertuples(index=False):
        entry_path = Path(row.path)
        if not entry_path.is_absolute():
            entry_path = path.parent / entry_path
        if check_exists and not entry_path.is_file():
            raise FormatError(f"{path}: listed trajectory {entry_path} does not exist")
        try:
            entries.append(ManifestEntry(path=str(entry_path), param=float(row.param), split=Split(row.split)))
        except ValueError as e:
            raise FormatError(f"{path}: bad manifest row {tuple(row)}: {e}")
    manifest = DatasetManifest(entries=entries)
    train = manifest.params(Split.TRAIN)
    for e in manifest.entries:
        if e.split != Split.TRAIN and train and not (min(train) < e.param < max(train)):
            raise FormatError(f"{path}: {e.split.value} param {e.param} lies outside the train range")
    return manifest


# ---------------------------------------------------------------------------
# Windows
# ---------------------------------------------------------------------------

def extract_window(
    traj: Trajectory,
    probes: ProbeSet,
    t: int,
    h: int,
    n: int,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> WindowSample:
    """Window [t-h+1, t+n] of normalised states with measurements over its first h frames."""
    if h < 1 or n < 0:
        raise DomainError(f"need h >= 1 and n >= 0, got h={h}, n={n}")
    start = t - h + 1
    if start < 0 or t + n >= len(traj):
        raise DomainError(f"window [{start}, {t + n}] exceeds trajectory of {len(traj)} frames")
    states = traj.frames[start:t + n + 1] / traj.normalization
    measurements = emit(traj, probes, start, h, noise_sigma=noise_sigma, seed=seed, normalized=True)
    return WindowSample(
        states=states, measurements=measurements, param=traj.params.conditioning_value,
        t=t, history=h, forecast=n,
    )


def window_conditioning(sample: WindowSample, active_history: Optional[int] = None) -> np.ndarray:
    """(h + n, 3, H, W) mask/value channels; older history frames beyond
    ``active_history`` are left unmeasured."""
    active = None
    if active_history is not None:
        active = [i >= sample.history - active_history for i in range(sample.history)]
    enc = encode(
        sample.measurements,
        sample.states.shape[-2:],
        active_frames=active,
        total_frames=sample.history + sample.forecast,
    )
    return enc.channels()


class TrajectoryDataset:
    """In-memory trajectories of one manifest split, with random window draws."""

    def __init__(self, manifest: DatasetManifest, split: Split = Split.TRAIN, k_f: int = 4):
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")
        entries = manifest.by_split(split)
        if not entries:
            raise DomainError(f"manifest has no {split.value} trajectories")
        self.trajectories: List[Trajectory] = [read_trajectory(e.path) for e in entries]
        shapes = {t.grid_shape for t in self.trajectories}
        if len(shapes) != 1:
            raise FormatError(f"trajectories in split {split.value} have mixed grids {shapes}")
        self.grid_shape: Tuple[int, int] = tuple(shapes.pop())
        self.k_f = k_f
        self.logger.info(
            f"Loaded {len(self.trajectories)} {split.value} trajectories "
            f"({sum(len(t) for t in self.trajectories)} frames, grid {self.grid_shape})"
        )

    def __len__(self) -> int:
        return len(self.trajectories)

    def random_probes(self, rng: np.random.Generator, count: int) -> ProbeSet:
        return sample_probes(
            ProbeKind.RANDOM, count, seed=int(rng.integers(2**63 - 1)),
            grid_shape=self.grid_shape, k_f=self.k_f, include_inlet=False,
        )

    def sample_windows(
        self, rng: np.random.Generator, batch: int, history: int, forecast: int, n_probes: int
    ) -> List[WindowSample]:
        """Random windows, each with its own freshly drawn random probe set."""
        samples = []
        for _ in range(batch):
            traj = self.trajectories[int(rng.integers(len(self.trajectories)))]
            if len(traj) < history + forecast:
                raise DomainError(f"trajectory of {len(traj)} frames is shorter than a {history + forecast}-frame window")
            t = int(rng.integers(history - 1, len(traj) - forecast))
            samples.append(extract_window(traj, self.random_probes(rng, n_probes), t, history, forecast))
        return samples

    def sample_transitions(
        self, rng: np.random.Generator, batch: int, context: int, n_probes: int
    ) -> Dict[str, np.ndarray]:
        """Teacher-forcing pairs: ground-truth context frames, next frame and its encoded probes."""
        contexts, targets, conds = [], [], []
        for _ in range(batch):
            traj = self.trajectories[int(rng.integers(len(self.trajectories)))]
            t = int(rng.integers(context, len(traj)))
            frames = traj.frames[t - context:t + 1] / traj.normalization
            probes = self.random_probes(rng, n_probes)
            mw = emit(traj, probes, t, 1, normalized=True)
            contexts.append(frames[:-1])
            targets.append(frames[-1])
            conds.append(encode(mw, self.grid_shape).channels()[0])
        return {
            "context": np.stack(contexts),
            "target": np.stack(targets),
            "conditioning": np.stack(conds),
        }
