"""
Classification, reasoning and part-level reasoning with a frozen checkpoint.

All scores are cosines between projected text embeddings and object
embeddings; no classification head is involved. A class with several global
labels scores the max over its labels.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from plyfile import PlyData, PlyElement

from .autodiff import cosine_similarity
from .blocks import NUM_BLOCKS, GridCoord, block_index_to_grid
from .errors import DataError, IoError, ShapeMismatch
from .geometry import load_entry
from .model import embed_text, forward
from .training import prepare_object

logger = logging.getLogger(__name__)

INVALID_COLOR = (128, 128, 128)
PLY_VERTEX_DTYPE = [('x', 'f8'), ('y', 'f8'), ('z', 'f8'), ('red', 'u1'), ('green', 'u1'), ('blue', 'u1')]


@dataclass(frozen=True)
class ClassScore:
    class_name: str
    score: float


@dataclass(frozen=True)
class BlockScore:
    j: int
    grid: GridCoord
    center: tuple
    count: int
    valid: bool
    score: float | None = None


@dataclass
class PartHeatmap:
    """
    Scores of the 27 blocks of one object against one prompt.

    Attributes:
        blocks: 27 BlockScore in block order; invalid blocks carry score None
        assignment: Optional [n] block index per point of the scored cloud
    """

    object_id: str
    blocks: tuple
    prompt_text: str | None = None
    assignment: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.blocks) != NUM_BLOCKS:
            raise ShapeMismatch('PartHeatmap', len(self.blocks), NUM_BLOCKS)

    @property
    def scores(self):
        """[27] scores with NaN for invalid blocks."""
        return np.array([b.score if b.valid else np.nan for b in self.blocks], dtype=np.float64)

    def argmax(self):
        """Highest-scoring valid block (lowest j on ties)."""
        valid = [b for b in self.blocks if b.valid]
        return max(valid, key=lambda b: (b.score, -b.j))


@dataclass
class EmbeddingRecord:
    object_id: str
    class_name: str | None
    global_vector: np.ndarray
    local_vectors: np.ndarray
    valid_mask: np.ndarray


@dataclass
class EvalReport:
    top1: float
    per_class: dict
    predictions: list


def embed_object(cloud, ckpt):
    """Normalize, partition and run the model on one cloud with the checkpoint's settings."""
    obj = prepare_object(cloud, ckpt.config.loss.min_points, ckpt.config.frame)
    return obj, forward(obj.cloud, obj.part, ckpt.params)


def _global_rows(candidate):
    vectors = getattr(candidate, 'global_vectors', candidate)
    return np.atleast_2d(np.asarray(vectors, dtype=np.float64))


def rank_classes(global_vector, params, candidates):
    """
    Rank candidate classes by max cosine between the object and the class's projected labels.

    Args:
        global_vector: F̄^G as a Tensor or array
        params: ModelParams (for W^T)
        candidates: class name -> TextEmbeddingSet or [G x d_ET] array

    Returns:
        ClassScore list, best first (stable for ties)
    """
    if not candidates:
        raise DataError("no candidate classes")
    scores = []
    for name, candidate in candidates.items():
        projected = embed_text(_global_rows(candidate), params).data
        best = max(cosine_similarity(global_vector, row) for row in projected)
        scores.append(ClassScore(name, best))
    return sorted(scores, key=lambda s: s.score, reverse=True)


def classify(cloud, ckpt, class_embedding_sets):
    """
    Zero-shot classification against class-name label embeddings.

    Raises:
        ZeroVector: If the object or a label embedding is zero
    """
    _, out = embed_object(cloud, ckpt)
    return rank_classes(out.global_emb.vector, ckpt.params, class_embedding_sets)


def reason(cloud, ckpt, reasoning_embedding_sets):
    """As classify, with candidates from (possibly paraphrased) reasoning labels."""
    _, out = embed_object(cloud, ckpt)
    return rank_classes(out.global_emb.vector, ckpt.params, reasoning_embedding_sets)


def part_reason(cloud, prompt_embedding, ckpt, prompt_text=None):
    """
    Score every valid block of an object against a user prompt.

    Args:
        cloud: PointCloud (several objects may be merged into one beforehand)
        prompt_embedding: Raw [d_ET] prompt embedding
        ckpt: Checkpoint
        prompt_text: Optional text kept in the heatmap for reference

    Returns:
        PartHeatmap; block centers are in the normalized object frame

    Raises:
        ZeroVector: If the prompt embedding is zero
        DimensionMismatch: If its width is not d_ET
        AllBlocksInvalid: If no block is valid
    """
    query = embed_text(prompt_embedding, ckpt.params).data[0]
    obj, out = embed_object(cloud, ckpt)
    local = out.local.vectors.data
    centers = obj.part.block_centers()
    counts = obj.part.counts
    blocks = []
    for j in range(1, NUM_BLOCKS + 1):
        valid = bool(obj.part.valid_mask[j - 1])
        score = cosine_similarity(local[j - 1], query) if valid else None
        blocks.append(BlockScore(j, block_index_to_grid(j), tuple(float(c) for c in centers[j - 1]),
                                 int(counts[j - 1]), valid, score))
    heatmap = PartHeatmap(cloud.id, tuple(blocks), prompt_text, obj.part.assignment.copy())
    best = heatmap.argmax()
    logger.info(f"Part reasoning on {cloud.id or '<unnamed>'}: best block j={best.j} "
                f"grid={tuple(best.grid)} score={best.score:.4f}")
    return heatmap


def heatmap_colors(heatmap):
    """
    Per-block RGB from a min-max ramp over the valid scores.

    t = (score - min) / (max - min), or 0.5 when all valid scores are equal;
    rgb = (255 t, 255 (1 - |2t - 1|), 255 (1 - t)), rounded. Invalid blocks are gray.
    """
    scores = heatmap.scores
    valid = ~np.isnan(scores)
    lo, hi = np.min(scores[valid]), np.max(scores[valid])
    colors = []
    for s, ok in zip(scores, valid):
        if not ok:
            colors.append(INVALID_COLOR)
            continue
        t = float((s - lo) / (hi - lo)) if hi > lo else 0.5
        colors.append((round(255 * t), round(255 * (1 - abs(2 * t - 1))), round(255 * (1 - t))))
    return colors


def heatmap_record(heatmap):
    record = {'object_id': heatmap.object_id}
    if heatmap.prompt_text is not None:
        record['prompt_text'] = heatmap.prompt_text
    blocks = []
    for b in heatmap.blocks:
        entry = {'j': b.j, 'grid': list(b.grid), 'center': list(b.center), 'count': b.count,
                 'valid': b.valid}
        if b.valid:
            entry['score'] = b.score
        blocks.append(entry)
    record['blocks'] = blocks
    return record


def export_heatmap(heatmap, cloud, path_json, path_ply):
    """
    Write the heatmap as JSON and the cloud as an ASCII PLY colored by block score.

    Raises:
        ShapeMismatch: If the heatmap's point assignment does not match the cloud
        IoError: If a file cannot be written
    """
    if heatmap.assignment is None or len(heatmap.assignment) != cloud.n:
        raise ShapeMismatch('export_heatmap', cloud.n,
                            None if heatmap.assignment is None else len(heatmap.assignment))
    colors = heatmap_colors(heatmap)
    path_json, path_ply = Path(path_json), Path(path_ply)
    try:
        path_json.parent.mkdir(parents=True, exist_ok=True)
        with open(path_json, 'w', encoding='utf-8') as f:
            json.dump(heatmap_record(heatmap), f, indent=2)
            f.write('\n')

        path_ply.parent.mkdir(parents=True, exist_ok=True)
        vertex = np.empty(cloud.n, dtype=PLY_VERTEX_DTYPE)
        vertex['x'], vertex['y'], vertex['z'] = cloud.points.T
        rgb = np.asarray(colors, dtype=np.uint8)[np.asarray(heatmap.assignment) - 1]
        vertex['red'], vertex['green'], vertex['blue'] = rgb.T
        PlyData([PlyElement.describe(vertex, 'vertex')], text=True,
                comments=[f"object {heatmap.object_id or 'unnamed'}"]).write(str(path_ply))
    except OSError as e:
        raise IoError(e.filename or path_json, e)
    logger.info(f"Wrote heatmap {path_json} and {path_ply}")


def load_heatmap(path_json):
    """Read a heatmap JSON file (without the per-point assignment)."""
    try:
        with open(path_json, encoding='utf-8') as f:
            record = json.load(f)
    except OSError as e:
        raise IoError(path_json, e)
    except json.JSONDecodeError as e:
        raise DataError(f"Invalid heatmap JSON in {path_json}: {e}")
    blocks = tuple(BlockScore(b['j'], GridCoord(*b['grid']), tuple(b['center']), b['count'],
                              b['valid'], b.get('score')) for b in record['blocks'])
    return PartHeatmap(record['object_id'], blocks, record.get('prompt_text'))


def _clouds_for(manifest, clouds):
    for entry in manifest.entries:
        yield entry, clouds[entry.id] if clouds is not None else load_entry(entry)


def evaluate(manifest, clouds, ckpt, candidate_sets, threads=1):
    """
    Average top-1 accuracy over a manifest.

    Args:
        manifest: DatasetManifest whose class names are the ground truth
        clouds: Optional object id -> PointCloud (else read from the manifest paths)
        ckpt: Checkpoint
        candidate_sets: Classification or reasoning embeddings per class
        threads: Worker threads; queries are independent

    Returns:
        EvalReport with predictions as (object_id, true_class, predicted_class) triples
    """
    items = list(_clouds_for(manifest, clouds))

    def predict(item):
        return classify(item[1], ckpt, candidate_sets)[0].class_name

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            predicted = list(executor.map(predict, items))
    else:
        predicted = [predict(item) for item in items]

    predictions = [(entry.id, entry.class_name, p) for (entry, _), p in zip(items, predicted)]
    per_class = {}
    for name in manifest.class_vocabulary:
        hits = [truth == p for _, truth, p in predictions if truth == name]
        per_class[name] = sum(hits) / len(hits)
    top1 = sum(truth == p for _, truth, p in predictions) / len(predictions) if predictions else 0.0
    logger.info(f"Top-1 accuracy {top1:.4f} over {len(predictions)} objects")
    return EvalReport(top1, per_class, predictions)


def embed_objects(manifest, clouds, ckpt):
    """Global and local embeddings of every manifest object."""
    records = []
    for entry, cloud in _clouds_for(manifest, clouds):
        _, out = embed_object(cloud, ckpt)
        records.append(EmbeddingRecord(entry.id, entry.class_name, out.global_emb.vector.data[0].copy(),
                                       out.local.vectors.data.copy(), out.local.valid_mask.copy()))
    return records


def export_embeddings(records, path):
    """
    Write embeddings to a .npz archive with arrays ids, classes, global [M x d_out],
    local [M x 27 x d_out] and valid_mask [M x 27].
    """
    if not records:
        raise DataError("no embeddings to export")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'wb') as f:
            np.savez(f,
                     ids=np.array([r.object_id for r in records], dtype=str),
                     classes=np.array([r.class_name or '' for r in records], dtype=str),
                     **{'global': np.stack([r.global_vector for r in records]),
                        'local': np.stack([r.local_vectors for r in records]),
                        'valid_mask': np.stack([r.valid_mask for r in records])})
    except OSError as e:
        raise IoError(path, e)
    logger.info(f"Exported embeddings of {len(records)} objects to {path}")
