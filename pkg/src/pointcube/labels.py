"""
Pseudo-labels, prompt templates and text embeddings.

Each class has one or more global labels and exactly nine local labels,
ordered k = 1..9 as the x band (left, center, right), the y band (front,
center, back) and the z band (bottom, center, top).

Text embeddings come from an embedding file (line-delimited JSON records
{"class", "kind": "global"|"local", "k", "text", "vector"}) so that output of
an external text encoder can be dropped in; fallback_embed provides a
deterministic hashing embedder for hermetic runs. Embeddings are frozen: the
arrays are read-only and training never updates them.
"""

import hashlib
import json
import logging
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import mmh3
import numpy as np

from .blocks import NUM_LOCAL_LABELS
from .errors import (DataError, DimensionMismatch, EmptyText, MalformedLine, MissingEmbeddings,
                     MissingLocalK, ZeroVector)

logger = logging.getLogger(__name__)

AXES = ('x', 'y', 'z')
POSITIONS = {
    'x': ('left', 'center', 'right'),
    'y': ('front', 'center', 'back'),
    'z': ('bottom', 'center', 'top'),
}
FALLBACK_DIM = 256
CLASSIFICATION_LOCAL_TEMPLATE = '{pos} region of the {axis}-axis for {classname}'
_TOKEN = re.compile(r'[a-z0-9]+')


def label_axis_position(k):
    """(axis, position) of local label k in 1..9."""
    if not 1 <= k <= NUM_LOCAL_LABELS:
        raise ValueError(f"local label index must be in 1..9, got {k}")
    axis = AXES[(k - 1) // 3]
    return axis, POSITIONS[axis][(k - 1) % 3]


@dataclass(frozen=True)
class LabelSet:
    class_name: str
    global_labels: tuple
    local_labels: tuple

    def __post_init__(self):
        if not self.global_labels:
            raise DataError(f"Class {self.class_name!r} needs at least one global label")
        if len(self.local_labels) != NUM_LOCAL_LABELS:
            raise DataError(f"Class {self.class_name!r} needs exactly 9 local labels, "
                            f"got {len(self.local_labels)}")
        object.__setattr__(self, 'global_labels', tuple(self.global_labels))
        object.__setattr__(self, 'local_labels', tuple(self.local_labels))


@dataclass(frozen=True)
class TextEmbeddingSet:
    """Frozen text embeddings of one class: global [G x d_ET], local [9 x d_ET]."""

    class_name: str
    global_vectors: np.ndarray
    local_vectors: np.ndarray
    source: str = 'ingested'
    global_texts: tuple = ()
    local_texts: tuple = ()

    def __post_init__(self):
        g = np.array(self.global_vectors, dtype=np.float64, ndmin=2)
        loc = np.array(self.local_vectors, dtype=np.float64, ndmin=2)
        if loc.shape[0] != NUM_LOCAL_LABELS:
            raise DataError(f"Class {self.class_name!r} needs 9 local vectors, got {loc.shape[0]}")
        if g.shape[1] != loc.shape[1]:
            raise DimensionMismatch(g.shape[1], loc.shape[1], self.class_name)
        for i, row in enumerate(np.concatenate([g, loc])):
            if not row.any():
                raise ZeroVector(i)
        g.flags.writeable = False
        loc.flags.writeable = False
        object.__setattr__(self, 'global_vectors', g)
        object.__setattr__(self, 'local_vectors', loc)

    @property
    def dim(self):
        return self.global_vectors.shape[1]


@dataclass(frozen=True)
class PromptBundle:
    global_prompt: str
    local_prompts: tuple
    guidance: str


def _template(name):
    return resources.files('pointcube').joinpath('prompts', name).read_text(encoding='utf-8')


def render_prompts(class_name):
    """Query prompts (1 global, 9 local in k order) and the shared guidance prompt for a class."""
    if not class_name:
        raise DataError("class name must not be empty")
    global_prompt = _template('global_query.txt').strip().format(classname=class_name)
    local_template = _template('local_query.txt').strip()
    local_prompts = tuple(
        local_template.format(pos=pos, axis=axis, classname=class_name)
        for axis in AXES for pos in POSITIONS[axis])
    guidance = '\n'.join(line for line in _template('guidance.txt').splitlines()
                         if not line.startswith('#')).strip()
    return PromptBundle(global_prompt, local_prompts, guidance)


def classification_labels(class_vocabulary):
    """Class-name global label plus the nine "{pos} region of the {axis}-axis" local labels."""
    if not class_vocabulary:
        raise DataError("class vocabulary is empty")
    label_sets = {}
    for name in class_vocabulary:
        local = tuple(CLASSIFICATION_LOCAL_TEMPLATE.format(pos=pos, axis=axis, classname=name)
                      for axis in AXES for pos in POSITIONS[axis])
        label_sets[name] = LabelSet(name, (name,), local)
    return label_sets


def tokenize(text):
    return _TOKEN.findall(text.lower())


def fallback_embed(text, dim=FALLBACK_DIM):
    """
    Deterministic bag-of-words embedding by signed feature hashing.

    Tokens are lowercase alphanumeric runs; each adds +-1 at a MurmurHash3
    index, and the sum is L2-normalized.

    Raises:
        EmptyText: If the text has no tokens
        ZeroVector: If hashed tokens cancel exactly
    """
    tokens = tokenize(text)
    if not tokens:
        raise EmptyText()
    vector = np.zeros(dim, dtype=np.float64)
    for token in tokens:
        index = mmh3.hash(token, 0, signed=False) % dim
        sign = 1.0 if mmh3.hash(token, 1, signed=False) & 1 else -1.0
        vector[index] += sign
    norm = np.linalg.norm(vector)
    if norm == 0.0:
        raise ZeroVector()
    return vector / norm


def embed_label_sets(label_sets, dim=FALLBACK_DIM):
    """Fallback-embed every label of every class."""
    return {
        name: TextEmbeddingSet(
            name,
            np.stack([fallback_embed(t, dim) for t in ls.global_labels]),
            np.stack([fallback_embed(t, dim) for t in ls.local_labels]),
            source='fallback', global_texts=ls.global_labels, local_texts=ls.local_labels)
        for name, ls in label_sets.items()
    }


def _read_records(path):
    with open(path, encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise MalformedLine(line_no, path, f"invalid JSON: {e}")
            if not isinstance(record, dict) or 'class' not in record or \
                    record.get('kind') not in ('global', 'local'):
                raise MalformedLine(line_no, path, "record needs 'class' and kind 'global'|'local'")
            if record['kind'] == 'local':
                k = record.get('k')
                if not isinstance(k, int) or not 1 <= k <= NUM_LOCAL_LABELS:
                    raise MalformedLine(line_no, path, f"local record needs k in 1..9, got {k!r}")
            yield line_no, record


def _record_vector(record, line_no, path):
    try:
        vector = np.asarray(record.get('vector', []), dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise MalformedLine(line_no, path, f"vector is not a list of numbers: {e}")
    if vector.ndim != 1 or vector.size == 0:
        raise MalformedLine(line_no, path, "missing vector")
    if not np.all(np.isfinite(vector)):
        raise MalformedLine(line_no, path, "vector has non-finite entries")
    return vector


def ingest_embeddings(path):
    """
    Read an embedding file into complete per-class embedding sets.

    Returns:
        dict class_name -> TextEmbeddingSet, in first-appearance order

    Raises:
        MissingLocalK: If a class lacks one of the nine local labels
        MissingEmbeddings: If a class has no global label
        DimensionMismatch: If vector widths differ across the file
        ZeroVector: If a vector is all zeros
    """
    path = Path(path)
    collected = {}
    dim = None
    for line_no, record in _read_records(path):
        vector = _record_vector(record, line_no, path)
        if dim is None:
            dim = vector.size
        elif vector.size != dim:
            raise DimensionMismatch(dim, vector.size, f"{path}:{line_no}")
        if not vector.any():
            raise ZeroVector(line_no)
        entry = collected.setdefault(record['class'], {'global': [], 'local': {}})
        text = record.get('text', '')
        if record['kind'] == 'global':
            entry['global'].append((text, vector))
        else:
            if record['k'] in entry['local']:
                raise MalformedLine(line_no, path, f"duplicate local k={record['k']}")
            entry['local'][record['k']] = (text, vector)

    sets = {}
    for name, entry in collected.items():
        for k in range(1, NUM_LOCAL_LABELS + 1):
            if k not in entry['local']:
                raise MissingLocalK(name, k)
        if not entry['global']:
            raise MissingEmbeddings(name)
        local = [entry['local'][k] for k in range(1, NUM_LOCAL_LABELS + 1)]
        sets[name] = TextEmbeddingSet(
            name, np.stack([v for _, v in entry['global']]), np.stack([v for _, v in local]),
            source='ingested', global_texts=tuple(t for t, _ in entry['global']),
            local_texts=tuple(t for t, _ in local))
    logger.info(f"Ingested text embeddings for {len(sets)} classes from {path} (d_ET={dim})")
    return sets


def ingest_global_embeddings(path):
    """Read only global records (e.g. paraphrased user prompts): class -> [G x d] array."""
    path = Path(path)
    vectors = {}
    for line_no, record in _read_records(path):
        if record['kind'] != 'global':
            continue
        vector = _record_vector(record, line_no, path)
        if not vector.any():
            raise ZeroVector(line_no)
        vectors.setdefault(record['class'], []).append(vector)
    dims = {v.size for rows in vectors.values() for v in rows}
    if len(dims) > 1:
        raise DimensionMismatch(min(dims), max(dims), str(path))
    return {name: np.stack(rows) for name, rows in vectors.items()}


def write_embeddings(sets, path):
    """Write embedding sets in the line-delimited JSON file format."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for name, s in sets.items():
            global_texts = s.global_texts or ('',) * len(s.global_vectors)
            for text, vector in zip(global_texts, s.global_vectors):
                f.write(json.dumps({'class': name, 'kind': 'global', 'text': text,
                                    'vector': vector.tolist()}) + '\n')
            local_texts = s.local_texts or ('',) * NUM_LOCAL_LABELS
            for k, (text, vector) in enumerate(zip(local_texts, s.local_vectors), start=1):
                f.write(json.dumps({'class': name, 'kind': 'local', 'k': k, 'text': text,
                                    'vector': vector.tolist()}) + '\n')


def read_label_texts(path):
    """
    Read label text records without vectors into LabelSets.

    Local labels that are missing raise MissingLocalK.
    """
    path = Path(path)
    collected = {}
    for _, record in _read_records(path):
        entry = collected.setdefault(record['class'], {'global': [], 'local': {}})
        if record['kind'] == 'global':
            entry['global'].append(record.get('text', ''))
        else:
            entry['local'][record['k']] = record.get('text', '')
    label_sets = {}
    for name, entry in collected.items():
        for k in range(1, NUM_LOCAL_LABELS + 1):
            if k not in entry['local']:
                raise MissingLocalK(name, k)
        label_sets[name] = LabelSet(name, tuple(entry['global']),
                                    tuple(entry['local'][k] for k in range(1, NUM_LOCAL_LABELS + 1)))
    return label_sets


def embedding_checksum(sets):
    """SHA-256 over every class's vectors, for the frozen-text check."""
    h = hashlib.sha256()
    for name in sorted(sets):
        s = sets[name]
        h.update(name.encode('utf-8'))
        h.update(np.ascontiguousarray(s.global_vectors, dtype='<f8').tobytes())
        h.update(np.ascontiguousarray(s.local_vectors, dtype='<f8').tobytes())
    return h.hexdigest()


def write_global_embeddings(texts_by_class, path, dim=FALLBACK_DIM):
    """Fallback-embed free-standing global texts (e.g. user prompts) and write them as global records."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for name, texts in texts_by_class.items():
            for text in texts:
                f.write(json.dumps({'class': name, 'kind': 'global', 'text': text,
                                    'vector': fallback_embed(text, dim).tolist()}) + '\n')
