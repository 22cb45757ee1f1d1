"""Deterministic/stochastic plane split, subarray tiling, row squeezing and packing.

All matrices are crossbar-oriented: rows are driven by inputs, columns carry
outputs, so a layer computes ``y = x @ W``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import PackingError, ShapeMismatchError
from .sparsity import probabilistic_mask


@dataclass(frozen=True)
class PlaneSplit:
    """``deterministic`` is W^D (int8, zeros at probabilistic positions).

    The stochastic-plane template lists the probabilistic positions and their
    ``p_w``; any sampled W_i satisfies ``W_i = W^D + W_i^S``.
    """

    deterministic: np.ndarray = field(repr=False)
    sp_rows: np.ndarray = field(repr=False)
    sp_cols: np.ndarray = field(repr=False)
    sp_probs: np.ndarray = field(repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.deterministic.shape

    @property
    def n_stochastic(self) -> int:
        return int(self.sp_rows.size)

    def template_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[self.sp_rows, self.sp_cols] = True
        return mask

    def stochastic(self, sampled: np.ndarray) -> np.ndarray:
        """W_i^S: the sampled values at template positions, zero elsewhere."""
        sampled = np.asarray(sampled).reshape(self.shape)
        ws = np.zeros(self.shape, dtype=np.int8)
        ws[self.sp_rows, self.sp_cols] = sampled[self.sp_rows, self.sp_cols]
        return ws


def split_dp_sp(p: np.ndarray) -> PlaneSplit:
    p = np.asarray(p)
    if p.ndim != 2:
        raise ShapeMismatchError("split_dp_sp expects a 2-D (lowered) probability matrix")
    wd = np.zeros(p.shape, dtype=np.int8)
    wd[p == 1.0] = 1
    wd[p == 0.0] = -1
    rows, cols = np.nonzero(probabilistic_mask(p))
    for arr in (wd, rows, cols):
        arr.setflags(write=False)
    probs = p[rows, cols].astype(np.float32)
    probs.setflags(write=False)
    return PlaneSplit(wd, rows, cols, probs)


def decomposed_mvm(split: PlaneSplit, sampled: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``x @ W^D + x @ W_i^S`` in exact integer arithmetic."""
    x = np.asarray(x)
    if x.shape[-1] != split.shape[0]:
        raise ShapeMismatchError(f"input length {x.shape[-1]} != matrix rows {split.shape[0]}")
    xi = x.astype(np.int64)
    return xi @ split.deterministic.astype(np.int64) + xi @ split.stochastic(sampled).astype(np.int64)


@dataclass(frozen=True)
class Tile:
    index: int
    row0: int
    col0: int
    rows: int
    cols: int

    @property
    def row_slice(self) -> slice:
        return slice(self.row0, self.row0 + self.rows)

    @property
    def col_slice(self) -> slice:
        return slice(self.col0, self.col0 + self.cols)


def tile(shape: tuple[int, int], subarray: tuple[int, int]) -> list[Tile]:
    """Row-major partition of ``shape`` into subarray-sized tiles (edge tiles may be smaller)."""
    n_rows, n_cols = shape
    r, c = subarray
    if r < 1 or c < 1:
        raise ValueError("subarray dimensions must be >= 1")
    tiles = []
    for row0 in range(0, n_rows, r):
        for col0 in range(0, n_cols, c):
            tiles.append(Tile(len(tiles), row0, col0, min(r, n_rows - row0), min(c, n_cols - col0)))
    return tiles


@dataclass(frozen=True)
class SqueezedSubmatrix:
    """Non-zero rows of one stochastic tile.

    ``gather`` holds tile-local indices of the retained rows (strictly
    increasing); ``origin`` is the tile's (row, col) offset in the layer.
    """

    values: np.ndarray = field(repr=False)
    gather: np.ndarray
    tile_rows: int
    origin: tuple[int, int] = (0, 0)

    @property
    def retained(self) -> int:
        return int(self.gather.size)

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def f_p(self) -> float:
        return self.retained / self.tile_rows if self.tile_rows else 0.0

    @property
    def global_rows(self) -> np.ndarray:
        return self.gather + self.origin[0]


def squeeze_rows(tile_values: np.ndarray, origin: tuple[int, int] = (0, 0)) -> SqueezedSubmatrix:
    """Drop rows without any non-zero (probabilistic) entry."""
    tile_values = np.asarray(tile_values)
    keep = np.flatnonzero(np.any(tile_values != 0, axis=1))
    return SqueezedSubmatrix(tile_values[keep], keep, tile_values.shape[0], origin)


def unsqueeze(sq: SqueezedSubmatrix) -> np.ndarray:
    out = np.zeros((sq.tile_rows, sq.cols), dtype=sq.values.dtype)
    out[sq.gather] = sq.values
    return out


def squeeze_layer(sp_matrix: np.ndarray, tiles: Sequence[Tile]) -> list[SqueezedSubmatrix]:
    return [squeeze_rows(sp_matrix[t.row_slice, t.col_slice], (t.row0, t.col0)) for t in tiles]


@dataclass(frozen=True)
class Segment:
    """A run of physical rows holding part of one ensemble's squeezed tile."""

    ensemble: int
    tile_id: int
    start: int  # first physical row in the subarray
    gather: np.ndarray  # layer-global input row for each physical row

    @property
    def length(self) -> int:
        return int(self.gather.size)

    @property
    def stop(self) -> int:
        return self.start + self.length


@dataclass
class PackedSubarray:
    rows: int
    cols: int
    tile_id: int
    col0: int
    segments: list[Segment] = field(default_factory=list)
    weights: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.weights is None:
            self.weights = np.zeros((self.rows, self.cols), dtype=np.int8)

    @property
    def used_rows(self) -> int:
        return sum(s.length for s in self.segments)

    @property
    def free_rows(self) -> int:
        return self.rows - self.used_rows

    @property
    def ensembles(self) -> set[int]:
        return {s.ensemble for s in self.segments}

    def next_free(self) -> int:
        return max((s.stop for s in self.segments), default=0)

    def place(self, ensemble: int, block: SqueezedSubmatrix, lo: int, hi: int) -> None:
        start = self.next_free()
        n = hi - lo
        if start + n > self.rows:
            raise PackingError("segment overflows subarray")
        self.weights[start:start + n] = block.values[lo:hi]
        self.segments.append(Segment(ensemble, self.tile_id, start, block.global_rows[lo:hi].copy()))


def pack_tile_position(
    blocks: Sequence[SqueezedSubmatrix],
    rows: int,
    cols: int,
    tile_id: int = 0,
    policy: str = "split",
) -> list[PackedSubarray]:
    """Pack the squeezed blocks of every ensemble for one tile position.

    ``blocks[i]`` belongs to ensemble ``i + 1``. The ``split`` policy fills
    subarrays back to back and lets a block straddle a boundary (partial
    column sums add digitally); ``first-fit`` keeps each block whole.
    """
    if any(b.cols > cols for b in blocks):
        raise PackingError(f"tile column extent exceeds subarray width {cols}")
    col0 = blocks[0].origin[1] if blocks else 0
    width = blocks[0].cols if blocks else cols
    out: list[PackedSubarray] = []
    if policy == "split":
        for i, block in enumerate(blocks, start=1):
            lo = 0
            while lo < block.retained:
                if not out or out[-1].next_free() == rows:
                    out.append(PackedSubarray(rows, width, tile_id, col0))
                hi = min(block.retained, lo + rows - out[-1].next_free())
                out[-1].place(i, block, lo, hi)
                lo = hi
    elif policy == "first-fit":
        for i, block in enumerate(blocks, start=1):
            if block.retained == 0:
                continue
            if block.retained > rows:
                raise PackingError("block taller than subarray cannot be placed whole")
            target = next((s for s in out if rows - s.next_free() >= block.retained), None)
            if target is None:
                target = PackedSubarray(rows, width, tile_id, col0)
                out.append(target)
            target.place(i, block, 0, block.retained)
    else:
        raise ValueError(f"unknown packing policy {policy!r}")
    return out


def pack_ensembles(
    squeezed: Sequence[Sequence[SqueezedSubmatrix]],
    n_mc: int,
    rows: int,
    cols: int | None = None,
    policy: str = "split",
) -> list[PackedSubarray]:
    """``squeezed[i][t]`` is ensemble ``i + 1``'s squeezed tile at position ``t``."""
    if len(squeezed) != n_mc:
        raise ValueError(f"expected {n_mc} ensembles, got {len(squeezed)}")
    if n_mc == 0:
        return []
    cols = cols if cols is not None else rows
    out = []
    for t in range(len(squeezed[0])):
        out.extend(pack_tile_position([ens[t] for ens in squeezed], rows, cols, t, policy))
    return out


def subarray_count(retained: Sequence[int], rows: int) -> int:
    """Subarrays needed at one tile position under the split policy."""
    return math.ceil(sum(retained) / rows)


def sp_mvm(packed: Sequence[PackedSubarray], x: np.ndarray, ensemble: int, n_cols: int) -> np.ndarray:
    """Digital SP partial sums for ``ensemble``: gather, multiply, accumulate."""
    x = np.asarray(x, dtype=np.int64)
    out = np.zeros(x.shape[:-1] + (n_cols,), dtype=np.int64)
    found = False
    for sub in packed:
        for seg in sub.segments:
            if seg.ensemble != ensemble:
                continue
            found = True
            w = sub.weights[seg.start:seg.stop].astype(np.int64)
            out[..., sub.col0:sub.col0 + sub.cols] += x[..., seg.gather] @ w
    if not found and not _ensemble_empty_ok(packed, ensemble):
        raise KeyError(f"ensemble {ensemble} not present in packing")
    return out


def _ensemble_empty_ok(packed: Sequence[PackedSubarray], ensemble: int) -> bool:
    # an ensemble with no stochastic rows legitimately owns no segment
    return not packed
