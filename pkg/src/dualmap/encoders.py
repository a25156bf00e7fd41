"""Sequence encoders for both modalities.

Video: raw per-clip features are projected to the hidden size, enhanced by a
stack of pre-norm transformer encoder layers, then resampled to a fixed clip
count. Query: tokens are embedded (frozen hash-seeded Gaussian vectors, the
stand-in for a pretrained language model), projected, enhanced the same way,
and mean-pooled into a single sentence vector.
"""

from __future__ import annotations

import hashlib
import string
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

CLS_TOKEN = "[CLS]"

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


@dataclass(frozen=True)
class EncoderConfig:
    hidden_dim: int = 128          # d
    visual_dim: int = 64           # raw per-clip feature dimension
    token_dim: int = 768           # raw token embedding dimension
    layers: int = 2                # H, transformer encoder layers per modality
    heads: int = 4
    dropout: float = 0.0
    sampled_clip_count: int = 32   # N
    max_token_positions: int = 64
    max_clip_positions: int = 2048
    backend: str = "synthetic"     # "synthetic" | "pretrained-files"

    def __post_init__(self):
        if self.layers < 0:
            raise ValueError(f"layers must be >= 0, got {self.layers}")
        if self.hidden_dim < 1 or self.visual_dim < 1 or self.token_dim < 1:
            raise ValueError("all feature dimensions must be positive")
        if self.sampled_clip_count < 2:
            raise ValueError(f"sampled_clip_count must be >= 2, got {self.sampled_clip_count}")
        if self.hidden_dim % self.heads != 0:
            raise ValueError(f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}")
        if self.backend not in ("synthetic", "pretrained-files"):
            raise ValueError(f"unknown backend {self.backend!r}")


def tokenize(sentence: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace. Empty result is an error."""
    tokens = [w.translate(_PUNCT_TABLE) for w in sentence.lower().split()]
    tokens = [w for w in tokens if w]
    if not tokens:
        raise ValueError(f"sentence {sentence!r} contains no tokens")
    return tokens


class HashedVocab:
    """Frozen token embeddings: one hash-seeded Gaussian vector per word.

    Distinct words get independent vectors with high probability, which keeps
    queries separable without a pretrained language model. When constructed
    with a closed vocabulary, unknown words raise.
    """

    def __init__(self, dim: int = 768, closed_vocabulary: set[str] | None = None):
        self.dim = dim
        self.closed_vocabulary = None if closed_vocabulary is None else set(closed_vocabulary)
        self._cache: dict[str, np.ndarray] = {}

    def vector(self, word: str) -> np.ndarray:
        if self.closed_vocabulary is not None and word != CLS_TOKEN and word not in self.closed_vocabulary:
            raise KeyError(f"word {word!r} not in the synthetic vocabulary")
        vec = self._cache.get(word)
        if vec is None:
            seed = int.from_bytes(hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest(), "little")
            vec = np.random.default_rng(seed).standard_normal(self.dim).astype(np.float32)
            self._cache[word] = vec
        return vec

    def embed_sentence(self, sentence: str) -> np.ndarray:
        """Token embedding matrix (L+1, dim) with the classification token prepended."""
        tokens = [CLS_TOKEN] + tokenize(sentence)
        return np.stack([self.vector(w) for w in tokens])


def fixed_length_sample(seq: torch.Tensor, n: int) -> torch.Tensor:
    """Resample a (T, d) sequence to (n, d).

    Output row i is the mean of input rows in the window
    [floor(i*T/n), floor((i+1)*T/n)); when the window is empty (T < n) the
    nearest preceding row is duplicated.
    """
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise ValueError(f"expected a non-empty (T, d) sequence, got shape {tuple(seq.shape)}")
    t = seq.shape[0]
    if t == n:
        return seq
    rows = []
    for i in range(n):
        lo = (i * t) // n
        hi = ((i + 1) * t) // n
        if hi > lo:
            rows.append(seq[lo:hi].mean(dim=0))
        else:
            rows.append(seq[min(lo, t - 1)])
    return torch.stack(rows)


def _build_enhancer(cfg: EncoderConfig) -> nn.Module | None:
    if cfg.layers == 0:
        return None
    layer = nn.TransformerEncoderLayer(
        d_model=cfg.hidden_dim,
        nhead=cfg.heads,
        dim_feedforward=4 * cfg.hidden_dim,
        dropout=cfg.dropout,
        batch_first=True,
        norm_first=True,
    )
    return nn.TransformerEncoder(
        layer, cfg.layers, norm=nn.LayerNorm(cfg.hidden_dim), enable_nested_tensor=False
    )


class QueryEncoder(nn.Module):
    """Token embeddings -> projection -> H transformer layers -> mean pooling."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.proj = nn.Linear(cfg.token_dim, cfg.hidden_dim)
        self.positions = nn.Embedding(cfg.max_token_positions, cfg.hidden_dim)
        self.enhancer = _build_enhancer(cfg)

    def forward(self, token_embeds: torch.Tensor) -> torch.Tensor:
        if token_embeds.ndim != 2 or token_embeds.shape[1] != self.cfg.token_dim:
            raise ValueError(
                f"expected (L, {self.cfg.token_dim}) token embeddings, got {tuple(token_embeds.shape)}"
            )
        length = token_embeds.shape[0]
        if length > self.cfg.max_token_positions:
            raise ValueError(f"sentence has {length} tokens, max is {self.cfg.max_token_positions}")
        x = self.proj(token_embeds)
        if self.enhancer is not None:
            x = x + self.positions(torch.arange(length, device=x.device))
            x = self.enhancer(x.unsqueeze(0)).squeeze(0)
        return x.mean(dim=0)


class VideoEncoder(nn.Module):
    """Raw clip features -> projection -> H transformer layers -> fixed-length sampling."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.proj = nn.Linear(cfg.visual_dim, cfg.hidden_dim)
        self.positions = nn.Embedding(cfg.max_clip_positions, cfg.hidden_dim)
        self.enhancer = _build_enhancer(cfg)

    def forward(self, clip_feats: torch.Tensor) -> torch.Tensor:
        if clip_feats.ndim != 2 or clip_feats.shape[1] != self.cfg.visual_dim:
            raise ValueError(
                f"expected (T, {self.cfg.visual_dim}) clip features, got {tuple(clip_feats.shape)}"
            )
        t = clip_feats.shape[0]
        if t > self.cfg.max_clip_positions:
            raise ValueError(f"video has {t} clips, max is {self.cfg.max_clip_positions}")
        x = self.proj(clip_feats)
        if self.enhancer is not None:
            x = x + self.positions(torch.arange(t, device=x.device))
            x = self.enhancer(x.unsqueeze(0)).squeeze(0)
        return fixed_length_sample(x, self.cfg.sampled_clip_count)


def encode_query(sentence: str, encoder: QueryEncoder, vocab: HashedVocab) -> torch.Tensor:
    """Sentence-level query vector of dimension hidden_dim."""
    embeds = torch.from_numpy(vocab.embed_sentence(sentence))
    return encoder(embeds.to(next(encoder.parameters()).dtype))


def encode_video(clip_feats: np.ndarray | torch.Tensor, encoder: VideoEncoder) -> torch.Tensor:
    """Enhanced (sampled_clip_count, hidden_dim) video feature sequence."""
    if isinstance(clip_feats, np.ndarray):
        clip_feats = torch.from_numpy(np.ascontiguousarray(clip_feats))
    return encoder(clip_feats.to(next(encoder.parameters()).dtype))
