import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from pointcube.blocks import (NUM_BLOCKS, GridCoord, block_index_to_grid, grid_to_block_index,
                              pair_indicator, partition, partition_record, positive_label_indices,
                              soft_indicator)
from pointcube.errors import EmptyCloud, OutOfRange, ZeroVector
from pointcube.geometry import PointCloud, normalize


def _brute_force_assignment(points):
    """Containment test of every point against all 27 sub-boxes of the AABB."""
    lo, hi = points.min(axis=0), points.max(axis=0)
    inside = np.zeros((len(points), NUM_BLOCKS), dtype=bool)
    for j in range(1, NUM_BLOCKS + 1):
        member = np.ones(len(points), dtype=bool)
        for a, coord in enumerate(block_index_to_grid(j)):
            extent = hi[a] - lo[a]
            if extent == 0.0:
                member &= coord == 2
                continue
            low = lo[a] + extent * ((coord - 1) / 3.0) if coord > 1 else lo[a]
            high = lo[a] + extent * (coord / 3.0) if coord < 3 else hi[a]
            column = points[:, a]
            member &= (column >= low) & ((column <= high) if coord == 3 else (column < high))
        inside[:, j - 1] = member
    assert np.all(inside.sum(axis=1) == 1)
    return inside.argmax(axis=1) + 1


def test_partition_matches_brute_force_oracle():
    """Test 1,000 random clouds against an independent containment check."""
    rng = np.random.default_rng(2024)
    for trial in range(1000):
        n = int(rng.integers(1, 513))
        points = rng.normal(size=(n, 3)) * rng.uniform(0.1, 3.0, size=3)
        if trial % 10 == 0:
            # snap to a coarse lattice so points sit exactly on interval edges
            points = np.round(points * 3) / 3
        cloud = normalize(PointCloud(points))

        part = partition(cloud)

        assert_array_equal(part.assignment, _brute_force_assignment(cloud.points))
        assert part.counts.sum() == n
        for j, idx in enumerate(part.per_block_points, start=1):
            assert np.all(part.assignment[idx] == j)


def test_partition_oracle_on_exact_edges():
    points = np.array([[0.0, 0, 0], [1, 1, 1], [3, 3, 3], [2, 2, 2], [3, 0, 1.5]])
    part = partition(PointCloud(points))
    assert_array_equal(part.assignment, _brute_force_assignment(points))


def test_cube_corners_fill_corner_blocks():
    corners = np.array([[x, y, z] for z in (-1, 1) for y in (-1, 1) for x in (-1, 1)], dtype=float)

    part = partition(PointCloud(corners))

    expected = {grid_to_block_index(GridCoord(x, y, z)) for x in (1, 3) for y in (1, 3) for z in (1, 3)}
    assert {j for j in range(1, 28) if part.counts[j - 1] == 1} == expected
    assert part.counts.sum() == 8
    assert (part.counts == 0).sum() == 19


def test_single_point_lands_in_center_block():
    cloud = normalize(PointCloud([[4.0, 5.0, 6.0]]))
    part = partition(cloud)
    assert part.assignment.tolist() == [14]
    assert block_index_to_grid(14) == (2, 2, 2)


def test_partition_counts_sum_for_2048_points(make_cloud):
    part = partition(normalize(make_cloud(2048)))
    assert part.counts.sum() == 2048


def test_min_points_marks_sparse_blocks_invalid(make_cloud):
    cloud = normalize(make_cloud(200))

    part = partition(cloud, min_points=5)

    assert_array_equal(part.valid_mask, part.counts >= 5)
    with pytest.raises(OutOfRange):
        partition(cloud, min_points=0)


def test_partition_is_permutation_equivariant(make_cloud, rng):
    cloud = normalize(make_cloud(300))
    perm = rng.permutation(cloud.n)

    a = partition(cloud)
    b = partition(PointCloud(cloud.points[perm]))

    assert_array_equal(a.assignment[perm], b.assignment)


def test_unit_frame_uses_fixed_cube():
    cloud = PointCloud([[0.0, 0.0, 0.0], [0.2, 0.2, 0.2], [-0.9, 0.0, 0.9]])
    part = partition(cloud, frame='unit')
    assert_array_equal(part.bounds[0], [-1, -1, -1])
    assert [tuple(block_index_to_grid(j)) for j in part.assignment] == [(2, 2, 2), (2, 2, 2), (1, 2, 3)]


def test_partition_rejects_empty_input():
    with pytest.raises(EmptyCloud):
        partition(np.zeros((0, 3)))


@pytest.mark.parametrize('j, grid', [(1, (1, 1, 1)), (27, (3, 3, 3)), (14, (2, 2, 2)), (2, (2, 1, 1)),
                                     (4, (1, 2, 1)), (10, (1, 1, 2))])
def test_block_index_to_grid(j, grid):
    assert tuple(block_index_to_grid(j)) == grid
    assert grid_to_block_index(GridCoord(*grid)) == j


@pytest.mark.parametrize('j', [0, 28, -3])
def test_block_index_out_of_range(j):
    with pytest.raises(OutOfRange):
        block_index_to_grid(j)


def test_pair_structure_is_exhaustively_consistent():
    """Test every block: one positive per band, matching the indicator rows."""
    table = pair_indicator().table
    for j in range(1, NUM_BLOCKS + 1):
        positives = positive_label_indices(j)
        assert len(positives) == 3
        assert [sum(1 for k in positives if 3 * band < k <= 3 * band + 3) for band in range(3)] == [1, 1, 1]
        assert {k + 1 for k in np.flatnonzero(table[j - 1])} == positives
        assert table[j - 1].sum() == 3
    assert_array_equal(table.sum(axis=0), np.full(9, 9.0))
    assert positive_label_indices(1) == {1, 4, 7}
    assert positive_label_indices(27) == {3, 6, 9}
    assert positive_label_indices(14) == {2, 5, 8}


def test_soft_indicator_bands_sum_to_one(rng):
    for _ in range(100):
        soft = soft_indicator(rng.normal(size=(9, 16))).table
        for band in range(3):
            assert_allclose(soft[:, 3 * band:3 * band + 3].sum(axis=1), 1.0, atol=1e-9)
        assert_allclose(soft.sum(axis=1), 3.0, atol=1e-9)


def test_soft_indicator_positive_weight_dominates(rng):
    soft = soft_indicator(rng.normal(size=(9, 8))).table
    hard = pair_indicator().table
    for j in range(NUM_BLOCKS):
        for band in range(3):
            cols = slice(3 * band, 3 * band + 3)
            pos = np.flatnonzero(hard[j, cols])[0]
            assert soft[j, cols][pos] == soft[j, cols].max()


def test_soft_indicator_identical_labels_are_uniform():
    soft = soft_indicator(np.ones((9, 4))).table
    assert_allclose(soft, np.full((27, 9), 1.0 / 3.0), atol=1e-12)


def test_soft_indicator_orthogonal_band_closed_form():
    vectors = np.zeros((9, 9))
    vectors[np.arange(9), np.arange(9)] = 1.0

    soft = soft_indicator(vectors).table

    e = math.e
    assert_allclose(soft[0, 0:3], [e / (e + 2), 1 / (e + 2), 1 / (e + 2)], atol=1e-12)
    assert_allclose(soft[0, 0:3], [0.5761, 0.2119, 0.2119], atol=1e-4)


def test_soft_indicator_rejects_zero_vector(rng):
    vectors = rng.normal(size=(9, 4))
    vectors[4] = 0.0
    with pytest.raises(ZeroVector) as excinfo:
        soft_indicator(vectors)
    assert excinfo.value.index == 5


def test_partition_record_shape(make_cloud):
    cloud = make_cloud(40, object_id='obj-1')
    record = partition_record(cloud, partition(normalize(cloud)))
    assert record['object_id'] == 'obj-1'
    assert len(record['counts']) == 27 and sum(record['counts']) == 40
    assert len(record['valid_mask']) == 27
    assert set(record['bounds']) == {'min', 'max'}
