"""Binary per-video feature files.

Layout: a 16-byte header (8-byte magic, uint32 clip count T, uint32 feature
dimension, both little-endian) followed by ``T * dim`` row-major float32
values. Simple, seekable and language neutral.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MOMFEAT1"
_HEADER = struct.Struct("<8sII")


class FeatureFileError(RuntimeError):
    pass


def write_features(path: str | Path, features: np.ndarray) -> None:
    arr = np.ascontiguousarray(features, dtype="<f4")
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"features must be a non-empty 2D array, got shape {features.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())


def read_feature_header(path: str | Path) -> tuple[int, int]:
    """Return (clip_count, dim) without reading the payload."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise FeatureFileError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, t, dim = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise FeatureFileError(f"{path}: bad magic {magic!r}")
    if t < 1 or dim < 1:
        raise FeatureFileError(f"{path}: invalid shape ({t}, {dim}) in header")
    return t, dim


def read_features(path: str | Path) -> np.ndarray:
    """Load a feature file as a float32 array of shape (clip_count, dim)."""
    t, dim = read_feature_header(path)
    with open(path, "rb") as fh:
        fh.seek(_HEADER.size)
        payload = fh.read()
    expected = t * dim * 4
    if len(payload) != expected:
        raise FeatureFileError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype="<f4").reshape(t, dim).copy()
