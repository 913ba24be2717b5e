"""
Procedural point clouds with a known part layout.

Archetypes:
    slab-table    flat top at the top of the box on four corner legs (most mass in the top z band)
    vertical-pole a straight vertical line through x = y = 0 (every point in the x=2, y=2 column)
    ball          points on a sphere
    pole-on-slab  a thin base slab at the bottom with a pole rising from its center

Every object draws its own aspect scale and sampling from a seed derived from
the SynthSpec seed and the object index, so datasets are reproducible bit for bit.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import DatasetManifest, ManifestEntry, PointCloud, save_manifest, save_xyz
from .labels import (FALLBACK_DIM, LabelSet, classification_labels, embed_label_sets,
                     write_embeddings, write_global_embeddings)

logger = logging.getLogger(__name__)

ARCHETYPES = ('slab-table', 'vertical-pole', 'ball', 'pole-on-slab')
MIN_POINTS = 64

REASONING_SENTENCES = {
    'slab-table': ('a wide flat top resting on four thin legs',
                   'furniture with a broad flat surface raised on legs'),
    'vertical-pole': ('a single thin rod standing upright',
                      'a tall narrow straight post'),
    'ball': ('a round hollow sphere with a curved surface',
             'a smooth spherical shell'),
    'pole-on-slab': ('a lamp shaped object with a heavy flat base and an upright stem',
                     'a stand made of a low base plate carrying a vertical stem'),
}

# Authored paraphrases of the reasoning sentences; never used for training.
PARAPHRASES = {
    'slab-table': ('a wide flat top standing on four thin legs',),
    'vertical-pole': ('one single thin rod standing upright',),
    'ball': ('a round hollow sphere with a curved outer surface',),
    'pole-on-slab': ('a lamp shaped object with a flat heavy base and an upright stem',),
}


@dataclass(frozen=True)
class SynthSpec:
    archetype: str
    points: int = 512
    jitter: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.archetype not in ARCHETYPES:
            raise ValueError(f"archetype must be one of {ARCHETYPES}, got {self.archetype!r}")
        if self.points < MIN_POINTS:
            raise ValueError(f"points must be at least {MIN_POINTS}, got {self.points}")
        if not self.jitter >= 0:
            raise ValueError(f"jitter must be non-negative, got {self.jitter}")


@dataclass
class SynthDataset:
    """
    Attributes:
        manifest: Entries with relative paths "<id>.xyz"
        clouds: object id -> PointCloud
        label_sets: training labels; global pool = class name + reasoning sentences
        classification_sets: class-name-only labels for classification
        paraphrases: class name -> unseen reasoning prompts
    """

    manifest: DatasetManifest
    clouds: dict
    label_sets: dict
    classification_sets: dict
    paraphrases: dict


@dataclass(frozen=True)
class SynthPaths:
    manifest: Path
    embeddings: Path
    classification: Path
    paraphrases: Path


def _slab_table(n, rng):
    n_top = round(0.75 * n)
    top = np.column_stack([rng.uniform(-1, 1, n_top), rng.uniform(-1, 1, n_top),
                           rng.uniform(0.85, 1.0, n_top)])
    legs = []
    corners = ((-0.85, -0.85), (0.85, -0.85), (-0.85, 0.85), (0.85, 0.85))
    for i, (cx, cy) in enumerate(corners):
        m = (n - n_top) // 4 + (1 if i < (n - n_top) % 4 else 0)
        legs.append(np.column_stack([cx + rng.uniform(-0.05, 0.05, m), cy + rng.uniform(-0.05, 0.05, m),
                                     rng.uniform(-1.0, 0.85, m)]))
    return np.concatenate([top, *legs]), None


def _vertical_pole(n, rng):
    z = rng.uniform(-1.0, 1.0, n)
    points = np.column_stack([np.zeros(n), np.zeros(n), z])
    return points, np.arange(n)


def _ball(n, rng):
    directions = rng.normal(size=(n, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return directions, None


def _pole_on_slab(n, rng):
    n_slab = n // 2
    slab = np.column_stack([rng.uniform(-1, 1, n_slab), rng.uniform(-1, 1, n_slab),
                            rng.uniform(-1.0, -0.85, n_slab)])
    m = n - n_slab
    pole = np.column_stack([np.zeros(m), np.zeros(m), rng.uniform(-0.85, 1.0, m)])
    return np.concatenate([slab, pole]), np.arange(n_slab, n)


_BUILDERS = {
    'slab-table': _slab_table,
    'vertical-pole': _vertical_pole,
    'ball': _ball,
    'pole-on-slab': _pole_on_slab,
}


def generate_points(spec, rng):
    """
    One object of an archetype: [points x 3].

    Line-shaped parts (poles) are jittered along z only so they stay exactly
    on the x = y = 0 axis.
    """
    points, line_rows = _BUILDERS[spec.archetype](spec.points, rng)
    points = points * rng.uniform(0.8, 1.2, size=3)
    noise = rng.normal(0.0, spec.jitter, size=points.shape)
    if line_rows is not None:
        noise[line_rows, :2] = 0.0
    return points + noise


def generate(specs, count):
    """
    Build a labelled dataset of `count` objects per spec.

    Args:
        specs: SynthSpec or a sequence of them (one class each, named after the archetype)
        count: Objects per spec

    Returns:
        SynthDataset
    """
    if isinstance(specs, SynthSpec):
        specs = [specs]
    if count < 1:
        raise ValueError(f"count must be at least 1, got {count}")
    entries, clouds = [], {}
    for spec in specs:
        seeds = np.random.SeedSequence([spec.seed, ARCHETYPES.index(spec.archetype)]).spawn(count)
        for i, seed in enumerate(seeds):
            object_id = f"{spec.archetype}-{i:03d}"
            points = generate_points(spec, np.random.default_rng(seed))
            clouds[object_id] = PointCloud(points, id=object_id, class_name=spec.archetype)
            entries.append(ManifestEntry(object_id, spec.archetype, Path(f"{object_id}.xyz")))
    manifest = DatasetManifest(tuple(entries))

    classification_sets = classification_labels(manifest.class_vocabulary)
    label_sets = {
        name: LabelSet(name, (name, *REASONING_SENTENCES[name]), ls.local_labels)
        for name, ls in classification_sets.items()
    }
    paraphrases = {name: PARAPHRASES[name] for name in manifest.class_vocabulary}
    logger.info(f"Generated {len(entries)} synthetic objects over {len(manifest.class_vocabulary)} classes")
    return SynthDataset(manifest, clouds, label_sets, classification_sets, paraphrases)


def write_dataset(dataset, out_dir, dim=FALLBACK_DIM):
    """
    Write clouds, manifest and fallback embeddings so the full pipeline can run from files.

    Files: <id>.xyz, manifest.tsv, embeddings.jsonl (training labels),
    classification.jsonl (class-name labels), paraphrases.jsonl (global records only).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for entry in dataset.manifest.entries:
        save_xyz(dataset.clouds[entry.id], out_dir / entry.path)
    paths = SynthPaths(out_dir / 'manifest.tsv', out_dir / 'embeddings.jsonl',
                       out_dir / 'classification.jsonl', out_dir / 'paraphrases.jsonl')
    resolved = DatasetManifest(tuple(ManifestEntry(e.id, e.class_name, out_dir / e.path)
                                     for e in dataset.manifest.entries))
    save_manifest(resolved, paths.manifest)
    write_embeddings(embed_label_sets(dataset.label_sets, dim), paths.embeddings)
    write_embeddings(embed_label_sets(dataset.classification_sets, dim), paths.classification)
    write_global_embeddings(dataset.paraphrases, paths.paraphrases, dim)
    logger.info(f"Wrote synthetic dataset to {out_dir}")
    return paths
