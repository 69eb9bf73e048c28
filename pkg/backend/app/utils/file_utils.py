import hashlib
import logging
import os
import tempfile
from pathlib import Path
from typing import Union

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def ensure_dir(path: PathLike) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def atomic_write_bytes(path: PathLike, payload: bytes) -> None:
    """
    Write a file so readers never observe a partial payload.

    Args:
        path: Destination file
        payload: Complete file content
    """
    path = Path(path)
    ensure_dir(path.parent)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except Exception:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def file_sha256(path: PathLike) -> str:
    """SHA-256 of a file's bytes, used to log reproducibility fingerprints."""
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def sidecar_path(path: PathLike, tag: str) -> Path:
    """``run/est.ptrj`` + ``std`` -> ``run/est.std.ptrj``."""
    path = Path(path)
    return path.with_name(f"{path.stem}.{tag}{path.suffix}")
