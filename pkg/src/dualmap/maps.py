"""2D temporal proposal maps.

Cell (a, b) of an N x N map represents the moment spanning clips a..b; only
the upper triangle (a <= b) is meaningful, and a sparse validity pattern
bounds the candidate count: short moments are enumerated exhaustively, longer
ones keep end-aligned anchors whose stride doubles per duration octave.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import torch
from torch import nn


@dataclass(frozen=True)
class ValidityMask:
    """Boolean N x N grid of candidate cells, with a canonical cell ordering.

    Flattened per-cell quantities (scores, targets) always follow
    :attr:`cells` order: row-major over the upper triangle.
    """

    grid: np.ndarray

    def __post_init__(self):
        if self.grid.ndim != 2 or self.grid.shape[0] != self.grid.shape[1]:
            raise ValueError(f"mask must be square, got shape {self.grid.shape}")
        if self.grid.dtype != np.bool_:
            raise ValueError("mask grid must be boolean")
        self.grid.setflags(write=False)

    @property
    def n(self) -> int:
        return self.grid.shape[0]

    @property
    def count(self) -> int:
        """M, the number of valid candidate cells."""
        return int(self.grid.sum())

    @cached_property
    def cells(self) -> np.ndarray:
        """(M, 2) array of valid (a, b) coordinates in canonical order."""
        return np.argwhere(self.grid)

    @cached_property
    def torch_grid(self) -> torch.Tensor:
        return torch.from_numpy(self.grid.copy())

    def cell_index(self, a: int, b: int) -> int:
        """Position of cell (a, b) in the canonical ordering."""
        idx = np.flatnonzero((self.cells[:, 0] == a) & (self.cells[:, 1] == b))
        if idx.size == 0:
            raise KeyError(f"cell ({a}, {b}) is not valid under this mask")
        return int(idx[0])


def build_validity_mask(n_clips: int, dense_len: int) -> ValidityMask:
    """Sparse candidate sampling pattern.

    A cell (a, b) with clip span L = b - a + 1 is valid iff L <= dense_len, or
    its end anchor satisfies (b + 1) % s == 0 with s = 2 ** ceil(log2(L / dense_len)).
    Every diagonal cell (L = 1) is always valid.
    """
    if n_clips < 1:
        raise ValueError(f"n_clips must be >= 1, got {n_clips}")
    if not 1 <= dense_len <= n_clips:
        raise ValueError(f"dense_len must be in [1, {n_clips}], got {dense_len}")
    grid = np.zeros((n_clips, n_clips), dtype=np.bool_)
    for a in range(n_clips):
        for b in range(a, n_clips):
            span = b - a + 1
            if span <= dense_len:
                grid[a, b] = True
            else:
                stride = 2 ** math.ceil(math.log2(span / dense_len))
                grid[a, b] = (b + 1) % stride == 0
    return ValidityMask(grid)


def _check_feats(feats: torch.Tensor, mask: ValidityMask) -> None:
    if feats.shape[-2] != mask.n:
        raise ValueError(f"feature rows {feats.shape[-2]} != mask size {mask.n}")


def apply_mask(map2d: torch.Tensor, mask: ValidityMask) -> torch.Tensor:
    """Zero out invalid cells of a (..., N, N, C) map."""
    keep = mask.torch_grid.to(map2d.device)
    return map2d * keep.unsqueeze(-1)


def aggregate_outer_product(feats: torch.Tensor, mask: ValidityMask) -> torch.Tensor:
    """Boundary-product map: cell (a, b) holds the channel-wise product of clip
    vectors a and b. Accepts (N, d) or batched (B, N, d); invalid cells are zero.
    """
    _check_feats(feats, mask)
    map2d = feats.unsqueeze(-2) * feats.unsqueeze(-3)  # (..., a, b, d)
    return apply_mask(map2d, mask)


def aggregate_max_pool(feats: torch.Tensor, mask: ValidityMask) -> torch.Tensor:
    """Max-pool map: cell (a, b) holds the channel-wise max over clip vectors a..b."""
    _check_feats(feats, mask)
    n = mask.n
    rows = []
    for a in range(n):
        running = feats.select(-2, a)
        row = [running]
        for b in range(a + 1, n):
            running = torch.maximum(running, feats.select(-2, b))
            row.append(running)
        pad = [torch.zeros_like(running)] * a
        rows.append(torch.stack(pad + row, dim=-2))
    return apply_mask(torch.stack(rows, dim=-3), mask)


AGGREGATIONS = {
    "outer_product": aggregate_outer_product,
    "max_pool": aggregate_max_pool,
}


def fuse_multimodal(video: torch.Tensor, query: torch.Tensor, projection: nn.Module) -> torch.Tensor:
    """Per-clip Hadamard product with the broadcast query vector, then a learned
    projection down to the conditioned-map channel count.

    Accepts (N, d) with (d,) or batched (B, N, d) with (B, d).
    """
    if video.shape[-1] != query.shape[-1]:
        raise ValueError(f"video dim {video.shape[-1]} != query dim {query.shape[-1]}")
    return projection(video * query.unsqueeze(-2))


class MapConvNet(nn.Module):
    """Stacked same-shape 2D convolutions over a temporal map.

    Zero padding keeps the N x N shape; a rectifier sits between layers (none
    after the last); invalid cells are re-zeroed after every layer so masked
    content never leaks through the receptive field.
    """

    def __init__(self, channels: int, layers: int, kernel_size: int):
        super().__init__()
        if layers < 0:
            raise ValueError(f"layers must be >= 0, got {layers}")
        if kernel_size % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {kernel_size}")
        self.convs = nn.ModuleList(
            nn.Conv2d(channels, channels, kernel_size, padding=kernel_size // 2)
            for _ in range(layers)
        )

    def forward(self, map2d: torch.Tensor, mask: ValidityMask) -> torch.Tensor:
        squeeze = map2d.ndim == 3
        x = map2d.unsqueeze(0) if squeeze else map2d
        x = x.permute(0, 3, 1, 2)  # (B, C, N, N)
        keep = mask.torch_grid.to(x.device).unsqueeze(0).unsqueeze(0)
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i + 1 < len(self.convs):
                x = torch.relu(x)
            x = x * keep
        x = x.permute(0, 2, 3, 1)
        return x.squeeze(0) if squeeze else x
