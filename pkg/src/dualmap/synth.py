"""Deterministic synthetic datasets.

Every clip shares one background vector (all steps happen in front of the same
scene); each step adds a small action-specific offset plus Gaussian noise, so
steps differ only subtly and a dataset is separable exactly when the offset
scale dominates the noise. Query sentences are templated from the action code
of their step.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoders import tokenize
from .featfile import write_features
from .intervals import TimeInterval
from .manifest import Manifest, QueryRecord, VideoRecord, save_manifest

DEFAULT_ACTION_CODES = (
    "foundation", "concealer", "eyeliner", "mascara", "lipstick", "blush",
    "powder", "primer", "highlighter", "bronzer", "eyeshadow", "browgel",
    "lipliner", "contour", "setting-spray", "lashcurler",
)

QUERY_TEMPLATE = "apply {code} on the face"


@dataclass(frozen=True)
class SyntheticSpec:
    video_count: int = 40
    clips_per_video: int = 64
    steps_per_video: int = 8
    action_codes: tuple[str, ...] = DEFAULT_ACTION_CODES
    feature_dim: int = 64
    clip_seconds: float = 2.0
    offset_scale: float = 1.0   # weight of the action-code direction
    noise_level: float = 0.05   # stddev of per-clip Gaussian noise

    def __post_init__(self):
        if self.video_count < 1 or self.steps_per_video < 1:
            raise ValueError("need at least one video and one step per video")
        if self.clips_per_video < self.steps_per_video:
            raise ValueError(
                f"{self.steps_per_video} steps cannot fit in {self.clips_per_video} clips"
            )
        if len(self.action_codes) < self.steps_per_video:
            raise ValueError("vocabulary smaller than steps_per_video; steps would be ambiguous")
        if self.feature_dim < 1 or self.clip_seconds <= 0:
            raise ValueError("feature_dim and clip_seconds must be positive")
        if self.noise_level < 0 or self.offset_scale < 0:
            raise ValueError("noise_level and offset_scale must be >= 0")


@dataclass(frozen=True)
class StepAnnotation:
    video_id: str
    code: str
    first_clip: int
    last_clip: int  # inclusive


def _cut_points(rng: np.random.Generator, clips: int, steps: int) -> list[int]:
    cuts = rng.choice(np.arange(1, clips), size=steps - 1, replace=False) if steps > 1 else []
    return [0, *sorted(int(c) for c in cuts), clips]


def generate_synthetic_dataset(
    spec: SyntheticSpec, seed: int, out_dir: str | Path
) -> tuple[Manifest, list[StepAnnotation]]:
    """Write feature files plus ``manifest.json`` under ``out_dir``.

    The same (spec, seed) always produces byte-identical files.
    """
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    background = rng.standard_normal(spec.feature_dim).astype(np.float32)
    code_vectors = {
        code: rng.standard_normal(spec.feature_dim).astype(np.float32)
        for code in spec.action_codes
    }

    videos, queries, steps = [], [], []
    for v in range(spec.video_count):
        video_id = f"video{v:04d}"
        duration = spec.clips_per_video * spec.clip_seconds
        bounds = _cut_points(rng, spec.clips_per_video, spec.steps_per_video)
        codes = rng.choice(len(spec.action_codes), size=spec.steps_per_video, replace=False)

        feats = np.empty((spec.clips_per_video, spec.feature_dim), dtype=np.float32)
        for k in range(spec.steps_per_video):
            first, last = bounds[k], bounds[k + 1] - 1
            if last < first:
                raise ValueError(f"{video_id}: step {k} would be empty")
            code = spec.action_codes[int(codes[k])]
            steps.append(StepAnnotation(video_id, code, first, last))
            span = last - first + 1
            noise = rng.standard_normal((span, spec.feature_dim)).astype(np.float32)
            feats[first : last + 1] = (
                background + spec.offset_scale * code_vectors[code] + spec.noise_level * noise
            )
            gt = TimeInterval(first * spec.clip_seconds, (last + 1) * spec.clip_seconds)
            queries.append(
                QueryRecord(
                    query_id=f"{video_id}:q{k}",
                    video_id=video_id,
                    sentence=QUERY_TEMPLATE.format(code=code),
                    gt_interval=gt,
                )
            )

        feature_path = f"features/{video_id}.bin"
        write_features(out_dir / feature_path, feats)
        videos.append(VideoRecord(video_id, duration, feature_path, spec.clips_per_video))

    manifest = Manifest(tuple(videos), tuple(queries), out_dir)
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest, steps


def dataset_vocabulary(spec: SyntheticSpec) -> set[str]:
    """All words the templated queries can contain, post-tokenization."""
    words: set[str] = set()
    for code in spec.action_codes:
        words.update(tokenize(QUERY_TEMPLATE.format(code=code)))
    return words
