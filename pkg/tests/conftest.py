import numpy as np
import pytest
import torch

from dualmap.featfile import write_features
from dualmap.manifest import load_manifest, save_manifest, Manifest, QueryRecord, VideoRecord
from dualmap.intervals import TimeInterval


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(1234)


def make_manifest(tmp_path, videos, queries):
    """Write feature files plus a manifest and reload it through the validator.

    ``videos``: list of (video_id, duration_s, clip_count, dim);
    ``queries``: list of (query_id, video_id, sentence, (start, end)).
    """
    rng = np.random.default_rng(99)
    recs = []
    for video_id, duration, clips, dim in videos:
        path = f"features/{video_id}.bin"
        write_features(tmp_path / path, rng.standard_normal((clips, dim)).astype(np.float32))
        recs.append(VideoRecord(video_id, duration, path, clips))
    qrecs = [
        QueryRecord(qid, vid, sent, TimeInterval(*gt)) for qid, vid, sent, gt in queries
    ]
    manifest = Manifest(tuple(recs), tuple(qrecs), tmp_path)
    save_manifest(manifest, tmp_path / "manifest.json")
    return load_manifest(tmp_path / "manifest.json")
