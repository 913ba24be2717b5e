"""
3x3x3 spatial partitioning and the block/label pair structure.

Blocks are indexed j = x + 3(y-1) + 9(z-1) for grid coordinates x, y, z in
{1, 2, 3} (1 = left/front/bottom, 3 = right/back/top). Local labels are
indexed k = 1..9: k_x = x, k_y = 3 + y, k_z = 6 + z.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .errors import EmptyCloud, OutOfRange, ZeroVector

NUM_BLOCKS = 27
NUM_LOCAL_LABELS = 9
FRAMES = ('aabb', 'unit')


class GridCoord(NamedTuple):
    x: int
    y: int
    z: int


def grid_to_block_index(coord):
    x, y, z = coord
    for c in (x, y, z):
        if c not in (1, 2, 3):
            raise OutOfRange(c, 1, 3)
    return x + 3 * (y - 1) + 9 * (z - 1)


def block_index_to_grid(j):
    """Inverse of grid_to_block_index over 1..27."""
    if not isinstance(j, (int, np.integer)) or not 1 <= j <= NUM_BLOCKS:
        raise OutOfRange(j, 1, NUM_BLOCKS)
    r = int(j) - 1
    return GridCoord(r % 3 + 1, (r // 3) % 3 + 1, r // 9 + 1)


def positive_label_indices(j):
    """The three local label indices (one per axis band) positive for block j."""
    x, y, z = block_index_to_grid(j)
    return frozenset((x, 3 + y, 6 + z))


@dataclass(frozen=True)
class PairIndicator:
    """27 x 9 binary table P(j, k); row j - 1, column k - 1."""

    table: np.ndarray

    def positives(self, j):
        return frozenset(int(k) + 1 for k in np.flatnonzero(self.table[j - 1]))


@dataclass(frozen=True)
class SoftIndicator:
    """27 x 9 weights; each row's three axis bands each sum to 1."""

    table: np.ndarray


@lru_cache(maxsize=1)
def pair_indicator():
    table = np.zeros((NUM_BLOCKS, NUM_LOCAL_LABELS), dtype=np.float64)
    for j in range(1, NUM_BLOCKS + 1):
        for k in positive_label_indices(j):
            table[j - 1, k - 1] = 1.0
    table.flags.writeable = False
    return PairIndicator(table)


@dataclass(frozen=True)
class BlockPartition:
    """
    Assignment of every point of one cloud to a block.

    Attributes:
        assignment: [n] block index j (1-based) per point
        per_block_points: 27 arrays of point indices, ascending
        valid_mask: [27] True iff the block holds at least min_points points
        bounds: (lo, hi) corners of the splitting box
        edges: [3 x 4] interval edges per axis
    """

    assignment: np.ndarray
    per_block_points: tuple
    valid_mask: np.ndarray
    bounds: tuple
    edges: np.ndarray
    min_points: int

    @property
    def counts(self):
        return np.array([len(idx) for idx in self.per_block_points], dtype=np.int64)

    def block_centers(self):
        """[27 x 3] centers of the block sub-boxes in the cloud's frame."""
        mids = (self.edges[:, :-1] + self.edges[:, 1:]) / 2.0
        centers = np.empty((NUM_BLOCKS, 3))
        for j in range(1, NUM_BLOCKS + 1):
            g = block_index_to_grid(j)
            centers[j - 1] = [mids[0, g.x - 1], mids[1, g.y - 1], mids[2, g.z - 1]]
        return centers


def _axis_edges(lo, hi):
    extent = hi - lo
    return np.array([lo, lo + extent * (1.0 / 3.0), lo + extent * (2.0 / 3.0), hi])


def partition(cloud, min_points=1, frame='aabb'):
    """
    Split a (normalized) cloud into 3 x 3 x 3 blocks.

    Intervals are half-open [lo, hi) except the topmost per axis, which is
    closed. An axis with zero extent routes every point to its center interval.

    Args:
        cloud: PointCloud, normally normalized
        min_points: Blocks with fewer points are marked invalid
        frame: 'aabb' splits the tight bounding box, 'unit' the cube [-1, 1]^3

    Returns:
        BlockPartition
    """
    if frame not in FRAMES:
        raise ValueError(f"frame must be one of {FRAMES}, got {frame!r}")
    if min_points < 1:
        raise OutOfRange(min_points, 1, float('inf'))
    points = np.asarray(cloud.points if hasattr(cloud, 'points') else cloud, dtype=np.float64)
    if points.shape[0] == 0:
        raise EmptyCloud()

    if frame == 'aabb':
        lo, hi = points.min(axis=0), points.max(axis=0)
    else:
        lo, hi = np.full(3, -1.0), np.full(3, 1.0)

    edges = np.stack([_axis_edges(lo[a], hi[a]) for a in range(3)])
    grid = np.empty(points.shape, dtype=np.int64)
    for a in range(3):
        if hi[a] - lo[a] == 0.0:
            grid[:, a] = 2
        else:
            column = points[:, a]
            grid[:, a] = 1 + (column >= edges[a, 1]).astype(np.int64) + (column >= edges[a, 2])

    assignment = grid[:, 0] + 3 * (grid[:, 1] - 1) + 9 * (grid[:, 2] - 1)
    per_block = tuple(np.flatnonzero(assignment == j) for j in range(1, NUM_BLOCKS + 1))
    valid = np.array([len(idx) >= min_points for idx in per_block])
    return BlockPartition(assignment=assignment, per_block_points=per_block, valid_mask=valid,
                          bounds=(lo.copy(), hi.copy()), edges=edges, min_points=min_points)


def _softmax(x):
    shifted = np.exp(x - x.max(axis=-1, keepdims=True))
    return shifted / shifted.sum(axis=-1, keepdims=True)


def soft_indicator(local_text_embeddings):
    """
    Similarity-based soft indicator from the raw (unprojected) local label embeddings.

    For block j and axis band a the band weights are the softmax over the
    band's three labels of cos(T_pos, T_k), where pos is j's positive label on a.

    Raises:
        ZeroVector: If any embedding is zero (index k is 1-based)
    """
    vectors = np.asarray(local_text_embeddings, dtype=np.float64)
    if vectors.shape[0] != NUM_LOCAL_LABELS:
        raise ValueError(f"expected {NUM_LOCAL_LABELS} local embeddings, got {vectors.shape[0]}")
    norms = np.linalg.norm(vectors, axis=1)
    for k, norm in enumerate(norms, start=1):
        if norm == 0.0:
            raise ZeroVector(k)
    unit = vectors / norms[:, None]
    cosine = unit @ unit.T

    # band_weights[a][p] holds the weights of the band when label p of axis a is positive
    band_weights = [_softmax(cosine[3 * a:3 * a + 3, 3 * a:3 * a + 3]) for a in range(3)]
    table = np.empty((NUM_BLOCKS, NUM_LOCAL_LABELS))
    for j in range(1, NUM_BLOCKS + 1):
        for a, coord in enumerate(block_index_to_grid(j)):
            table[j - 1, 3 * a:3 * a + 3] = band_weights[a][coord - 1]
    table.flags.writeable = False
    return SoftIndicator(table)


def partition_record(cloud, part):
    """JSON-ready audit record of a partition."""
    lo, hi = part.bounds
    return {
        'object_id': cloud.id,
        'counts': [int(c) for c in part.counts],
        'valid_mask': [bool(v) for v in part.valid_mask],
        'bounds': {'min': [float(v) for v in lo], 'max': [float(v) for v in hi]},
    }
