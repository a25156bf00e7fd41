"""Dataset manifests: which videos exist, where their features live, and the
annotated (query sentence, ground-truth segment) pairs.

The manifest is a single JSON document; feature payloads live in separate
binary files referenced by relative path (see :mod:`dualmap.featfile`).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .featfile import FeatureFileError, read_feature_header
from .intervals import TimeInterval


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    duration_s: float
    feature_path: str
    raw_clip_count: int


@dataclass(frozen=True)
class QueryRecord:
    query_id: str
    video_id: str
    sentence: str
    gt_interval: TimeInterval


@dataclass(frozen=True)
class Manifest:
    videos: tuple[VideoRecord, ...]
    queries: tuple[QueryRecord, ...]
    root: Path = field(default_factory=Path)

    def video(self, video_id: str) -> VideoRecord:
        try:
            return self._by_id[video_id]
        except KeyError:
            raise KeyError(f"unknown video_id {video_id!r}") from None

    def query(self, query_id: str) -> QueryRecord:
        for q in self.queries:
            if q.query_id == query_id:
                return q
        raise KeyError(f"unknown query_id {query_id!r}")

    def feature_file(self, video_id: str) -> Path:
        return self.root / self.video(video_id).feature_path

    @property
    def _by_id(self) -> dict[str, VideoRecord]:
        return {v.video_id: v for v in self.videos}


def _require(record: dict, key: str, where: str):
    if key not in record:
        raise ManifestError(f"{where}: missing field {key!r}")
    return record[key]


def load_manifest(path: str | Path, *, check_features: bool = True) -> Manifest:
    """Load and fully validate a manifest JSON file.

    Raises :class:`ManifestError` naming the offending record on a missing
    video reference, malformed interval, or unreadable feature file.
    """
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    root = path.parent

    videos = []
    seen = set()
    for rec in doc.get("videos", []):
        vid = _require(rec, "video_id", "video record")
        where = f"video {vid!r}"
        duration = float(_require(rec, "duration_s", where))
        if duration <= 0:
            raise ManifestError(f"{where}: duration_s must be positive, got {duration}")
        raw_count = int(_require(rec, "raw_clip_count", where))
        if raw_count < 1:
            raise ManifestError(f"{where}: raw_clip_count must be >= 1, got {raw_count}")
        if vid in seen:
            raise ManifestError(f"{where}: duplicate video_id")
        seen.add(vid)
        videos.append(VideoRecord(vid, duration, str(_require(rec, "feature_path", where)), raw_count))

    by_id = {v.video_id: v for v in videos}
    queries = []
    for rec in doc.get("queries", []):
        qid = _require(rec, "query_id", "query record")
        where = f"query {qid!r}"
        vid = _require(rec, "video_id", where)
        if vid not in by_id:
            raise ManifestError(f"{where}: references unknown video_id {vid!r}")
        sentence = str(_require(rec, "sentence", where))
        gt = _require(rec, "gt_interval", where)
        if not isinstance(gt, (list, tuple)) or len(gt) != 2:
            raise ManifestError(f"{where}: gt_interval must be [start, end], got {gt!r}")
        try:
            interval = TimeInterval(float(gt[0]), float(gt[1]))
        except ValueError as exc:
            raise ManifestError(f"{where}: malformed gt_interval: {exc}") from exc
        if interval.length <= 0:
            raise ManifestError(f"{where}: gt_interval has zero length")
        if interval.end > by_id[vid].duration_s:
            raise ManifestError(
                f"{where}: gt_interval end {interval.end} exceeds video duration {by_id[vid].duration_s}"
            )
        queries.append(QueryRecord(qid, vid, sentence, interval))

    if check_features:
        for v in videos:
            fpath = root / v.feature_path
            try:
                t, _ = read_feature_header(fpath)
            except (OSError, FeatureFileError) as exc:
                raise ManifestError(f"video {v.video_id!r}: unreadable feature file: {exc}") from exc
            if t != v.raw_clip_count:
                raise ManifestError(
                    f"video {v.video_id!r}: feature file has {t} clips, manifest says {v.raw_clip_count}"
                )

    return Manifest(tuple(videos), tuple(queries), root)


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    doc = {
        "videos": [
            {
                "video_id": v.video_id,
                "duration_s": v.duration_s,
                "feature_path": v.feature_path,
                "raw_clip_count": v.raw_clip_count,
            }
            for v in manifest.videos
        ],
        "queries": [
            {
                "query_id": q.query_id,
                "video_id": q.video_id,
                "sentence": q.sentence,
                "gt_interval": [q.gt_interval.start, q.gt_interval.end],
            }
            for q in manifest.queries
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


@dataclass(frozen=True)
class PredictionRecord:
    """Ranked grounding output for one query: intervals with non-increasing scores."""

    query_id: str
    predictions: tuple[tuple[TimeInterval, float], ...]

    def __post_init__(self):
        scores = [s for _, s in self.predictions]
        if any(b > a for a, b in zip(scores, scores[1:])):
            raise ValueError(f"prediction scores for {self.query_id!r} are not non-increasing")

    def to_json_line(self) -> str:
        payload = {
            "query_id": self.query_id,
            "predictions": [[iv.start, iv.end, score] for iv, score in self.predictions],
        }
        return json.dumps(payload)
