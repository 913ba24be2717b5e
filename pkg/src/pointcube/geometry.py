"""
Point cloud types, normalization and dataset file I/O.

Objects are stored as text .xyz files (one "x y z" line per point, '#' comment
lines skipped) and listed in a tab-separated manifest "id<TAB>class<TAB>path".
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DuplicateId, EmptyCloud, MalformedLine

logger = logging.getLogger(__name__)

# centroid and radius rounding left by one normalization pass
NORMALIZED_TOL = 1e-9


@dataclass(frozen=True)
class PointCloud:
    """An object as an ordered [n x 3] array of finite coordinates."""

    points: np.ndarray
    id: str = ''
    class_name: Optional[str] = None

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3:
            raise ValueError(f"points must have shape [n, 3], got {points.shape}")
        if points.shape[0] == 0:
            raise EmptyCloud()
        if not np.all(np.isfinite(points)):
            raise ValueError("points must be finite")
        points.flags.writeable = False
        object.__setattr__(self, 'points', points)

    @property
    def n(self):
        return self.points.shape[0]

    def with_points(self, points):
        return PointCloud(points, id=self.id, class_name=self.class_name)


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    class_name: str
    path: Path


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple
    class_vocabulary: tuple = field(default=())

    def __post_init__(self):
        seen = set()
        vocabulary = list(self.class_vocabulary)
        for entry in self.entries:
            if entry.id in seen:
                raise DuplicateId(entry.id)
            seen.add(entry.id)
            if entry.class_name not in vocabulary:
                vocabulary.append(entry.class_name)
        object.__setattr__(self, 'entries', tuple(self.entries))
        object.__setattr__(self, 'class_vocabulary', tuple(vocabulary))

    def __len__(self):
        return len(self.entries)


def load_xyz(path, object_id=None, class_name=None):
    """
    Load a point cloud from a text .xyz file.

    Args:
        path: File with one "x y z" line per point
        object_id: Identifier to attach (default: file stem)
        class_name: Optional class label

    Returns:
        PointCloud with points in file order

    Raises:
        MalformedLine: If a data line is not exactly three finite numbers
        EmptyCloud: If the file has no data lines
    """
    path = Path(path)
    rows = []
    with open(path, encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            text = line.strip()
            if not text or text.startswith('#'):
                continue
            parts = text.split()
            if len(parts) != 3:
                raise MalformedLine(line_no, path, f"expected 3 values, got {len(parts)}")
            try:
                values = [float(p) for p in parts]
            except ValueError:
                raise MalformedLine(line_no, path, "not a number")
            if not all(math.isfinite(v) for v in values):
                raise MalformedLine(line_no, path, "non-finite value")
            rows.append(values)
    if not rows:
        raise EmptyCloud(path)
    return PointCloud(np.array(rows), id=object_id if object_id is not None else path.stem,
                      class_name=class_name)


def save_xyz(cloud, path):
    """Write a cloud as .xyz text at 17 significant digits (exact float64 round trip)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        if cloud.id:
            f.write(f"# {cloud.id}\n")
        for x, y, z in cloud.points:
            f.write(f"{x:.17g} {y:.17g} {z:.17g}\n")


def normalize(cloud):
    """
    Center a cloud on its centroid and scale it to unit max norm.

    Coincident clouds (every point equal) map to all zeros. Point order is
    kept, and the result does not depend on it bit for bit: the centroid is
    summed over each column in sorted order. A cloud already centered with
    unit max norm (within NORMALIZED_TOL) is returned unchanged, so
    normalize(normalize(c)) is normalize(c).
    """
    points = cloud.points
    centroid = np.sort(points, axis=0).mean(axis=0)
    centered = points - centroid
    radius = np.sqrt((centered ** 2).sum(axis=1)).max()
    if radius == 0.0 or not np.isfinite(radius):
        return cloud.with_points(np.zeros_like(points))
    if np.abs(centroid).max() <= NORMALIZED_TOL and abs(radius - 1.0) <= NORMALIZED_TOL:
        return cloud
    return cloud.with_points(centered / radius)


def merge_clouds(clouds, offsets=None, object_id='merged', class_name=None):
    """
    Concatenate several clouds into one object, each shifted by its offset.

    Used for multi-object part reasoning: the merged object's partition frame
    covers the joint bounding box of all inputs.
    """
    if not clouds:
        raise EmptyCloud()
    if offsets is None:
        offsets = [(0.0, 0.0, 0.0)] * len(clouds)
    if len(offsets) != len(clouds):
        raise ValueError("one offset per cloud is required")
    parts = [c.points + np.asarray(o, dtype=np.float64) for c, o in zip(clouds, offsets)]
    return PointCloud(np.concatenate(parts, axis=0), id=object_id, class_name=class_name)


def load_manifest(path):
    """
    Load a dataset manifest.

    Args:
        path: UTF-8 file of "id<TAB>class<TAB>path" records; relative paths
            resolve against the manifest's directory

    Returns:
        DatasetManifest with a first-appearance ordered class vocabulary

    Raises:
        DuplicateId: If an id repeats
        MalformedLine: If a record does not have three fields
    """
    path = Path(path)
    entries = []
    with open(path, encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            text = line.rstrip('\n').rstrip('\r')
            if not text.strip() or text.startswith('#'):
                continue
            fields = text.split('\t')
            if len(fields) != 3 or not all(fld.strip() for fld in fields):
                raise MalformedLine(line_no, path, "expected id<TAB>class<TAB>path")
            object_id, class_name, file_path = (fld.strip() for fld in fields)
            file_path = Path(file_path)
            if not file_path.is_absolute():
                file_path = path.parent / file_path
            entries.append(ManifestEntry(object_id, class_name, file_path))
    manifest = DatasetManifest(tuple(entries))
    logger.debug(f"Loaded manifest {path}: {len(manifest)} objects, "
                 f"{len(manifest.class_vocabulary)} classes")
    return manifest


def save_manifest(manifest, path):
    """Write a manifest; paths are stored relative to the manifest when possible."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for entry in manifest.entries:
            file_path = Path(entry.path)
            try:
                file_path = file_path.resolve().relative_to(path.parent.resolve())
            except ValueError:
                pass
            f.write(f"{entry.id}\t{entry.class_name}\t{file_path.as_posix()}\n")


def load_entry(entry):
    """Load the cloud a manifest entry points at."""
    return load_xyz(entry.path, object_id=entry.id, class_name=entry.class_name)
