"""
Training loop, optimizer and checkpoints.

One step samples a batch of objects, runs the forward passes (fanned out over
a thread pool, each on its own tape), projects one global pseudo-label per
object and the nine local labels per class, reduces the total loss and
applies one Adam update on the calling thread. Text embeddings are never
modified.

Checkpoint layout (all integers little-endian):

    b"PCUBE" | u32 version | u32 n + config JSON (n bytes)
    | u32 count | count x (u16 n + name, u8 dtype, u8 ndim, ndim x u32 dims)
    | raw tensor payload in table order | sha256 of everything before it
"""

import hashlib
import json
import logging
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import Tensor, concat_rows
from .blocks import FRAMES, pair_indicator, partition, soft_indicator
from .config_utils import config_from_dict, config_to_dict
from .errors import (AllBlocksInvalid, CorruptFile, DataError, DimensionMismatch, IoError,
                     MissingEmbeddings, NonFiniteLoss, VersionMismatch)
from .geometry import load_entry, normalize
from .labels import embedding_checksum
from .logging_utils import MetricsWriter
from .losses import LossConfig, LossValue, global_loss, local_loss_hard, local_loss_soft, total_loss
from .model import ModelConfig, ModelParams, embed_text, forward, init_params

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b'PCUBE'
CHECKPOINT_VERSION = 1
DTYPES = ('float32', 'float64')
_DTYPE_CODES = {'<f4': 0, '<f8': 1}
_CODE_DTYPES = {code: np.dtype(name) for name, code in _DTYPE_CODES.items()}
_DIGEST_SIZE = hashlib.sha256().digest_size


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 8
    learning_rate: float = 1e-3
    seed: int = 0
    label_seed: int = 0
    threads: int = 0
    dtype: str = 'float32'
    frame: str = 'aabb'
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"train.epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ValueError(f"train.batch_size must be at least 2, got {self.batch_size}")
        # zero is allowed: it turns a run into a pure forward/loss evaluation
        if not self.learning_rate >= 0:
            raise ValueError(f"train.learning_rate must be non-negative, got {self.learning_rate}")
        if self.seed < 0 or self.label_seed < 0:
            raise ValueError("train.seed and train.label_seed must be non-negative")
        if self.threads < 0:
            raise ValueError(f"train.threads must be non-negative, got {self.threads}")
        if self.dtype not in DTYPES:
            raise ValueError(f"train.dtype must be one of {DTYPES}, got {self.dtype!r}")
        if self.frame not in FRAMES:
            raise ValueError(f"train.frame must be one of {FRAMES}, got {self.frame!r}")

    @property
    def workers(self):
        return self.threads or os.cpu_count() or 1


@dataclass
class Checkpoint:
    params: ModelParams
    config: TrainConfig
    rng_state: dict = field(default_factory=dict)
    step: int = 0
    version: int = CHECKPOINT_VERSION


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: list
    epoch_losses: list
    text_checksum: str


@dataclass
class PreparedObject:
    """A normalized cloud with its partition, ready for the forward pass."""

    id: str
    class_name: str
    cloud: object
    part: object


def prepare_object(cloud, min_points=1, frame='aabb'):
    """
    Normalize and partition a cloud.

    Raises:
        AllBlocksInvalid: If min_points leaves no valid block
    """
    normalized = normalize(cloud)
    part = partition(normalized, min_points=min_points, frame=frame)
    if not part.valid_mask.any():
        raise AllBlocksInvalid(cloud.id)
    return PreparedObject(cloud.id, cloud.class_name, normalized, part)


class Adam:
    """Adam with bias correction over a name -> Tensor mapping."""

    def __init__(self, params, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            grad = p.grad.astype(p.data.dtype, copy=False)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * grad
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * grad * grad
            update = (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
            p.data = (p.data - self.learning_rate * update).astype(p.data.dtype, copy=False)


def batch_loss(params, batch, label_choice, embeddings, cfg, soft_tables=None, executor=None):
    """
    Total loss of one batch.

    Args:
        params: ModelParams
        batch: Sequence of PreparedObject
        label_choice: object id -> row of the class's global label pool
        embeddings: class name -> TextEmbeddingSet
        cfg: TrainConfig
        soft_tables: class name -> SoftIndicator (soft local mode only)
        executor: Optional executor for the per-object forward passes

    Returns:
        LossValue
    """
    def run(obj):
        return forward(obj.cloud, obj.part, params)

    outputs = list(executor.map(run, batch)) if executor is not None else [run(o) for o in batch]

    raw = np.stack([embeddings[o.class_name].global_vectors[label_choice[o.id]] for o in batch])
    g = global_loss(concat_rows([out.global_emb.vector for out in outputs]),
                    embed_text(raw, params), cfg.loss)

    if cfg.loss.local_mode == 'off':
        local_term = Tensor(np.zeros((), dtype=params.dtype))
    else:
        projected = {}
        for o in batch:
            if o.class_name not in projected:
                projected[o.class_name] = embed_text(embeddings[o.class_name].local_vectors, params)
        local_embs = [out.local for out in outputs]
        local_texts = [projected[o.class_name] for o in batch]
        if cfg.loss.local_mode == 'hard':
            local_term = local_loss_hard(local_embs, local_texts, pair_indicator(), cfg.loss)
        else:
            local_term = local_loss_soft(local_embs, local_texts, [soft_tables[o.class_name] for o in batch],
                                         cfg.loss)
    return LossValue(g, local_term, total_loss(g, local_term))


def _check_inputs(manifest, label_sets, embeddings):
    for name in manifest.class_vocabulary:
        if name not in embeddings:
            raise MissingEmbeddings(name)
        if label_sets is not None:
            if name not in label_sets:
                raise DataError(f"No label set for class {name!r}")
            labels, vectors = label_sets[name].global_labels, embeddings[name].global_vectors
            if len(labels) != len(vectors):
                raise DimensionMismatch(len(labels), len(vectors), f"global labels of {name!r}")
    dims = {embeddings[name].dim for name in manifest.class_vocabulary}
    if len(dims) > 1:
        raise DimensionMismatch(min(dims), max(dims), 'text embeddings')
    return dims.pop()


def train(manifest, label_sets, embeddings, cfg, *, clouds=None, metrics_path=None):
    """
    Optimize every model parameter against frozen text embeddings.

    Args:
        manifest: DatasetManifest
        label_sets: class name -> LabelSet (or None); global pools must match the embeddings
        embeddings: class name -> TextEmbeddingSet
        cfg: TrainConfig (model.d_et is replaced by the embedding width)
        clouds: Optional object id -> PointCloud, instead of reading manifest paths
        metrics_path: Optional JSON-lines file receiving one record per step

    Returns:
        TrainResult

    Raises:
        MissingEmbeddings: If a manifest class has no embedding set
        NonFiniteLoss: If a step's loss is NaN or infinite
    """
    d_et = _check_inputs(manifest, label_sets, embeddings)
    if d_et != cfg.model.d_et:
        logger.info(f"Using text embedding width d_ET={d_et} (config had {cfg.model.d_et})")
        cfg = replace(cfg, model=replace(cfg.model, d_et=d_et))
    checksum = embedding_checksum(embeddings)

    init_seq, shuffle_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    params = init_params(cfg.model, np.random.default_rng(init_seq), np.dtype(cfg.dtype))
    shuffle_rng = np.random.default_rng(shuffle_seq)
    label_rng = np.random.default_rng(cfg.label_seed)

    objects = []
    for entry in manifest.entries:
        cloud = clouds[entry.id] if clouds is not None else load_entry(entry)
        obj = prepare_object(cloud, cfg.loss.min_points, cfg.frame)
        objects.append(replace(obj, id=entry.id, class_name=entry.class_name))

    soft_tables = None
    if cfg.loss.local_mode == 'soft':
        soft_tables = {name: soft_indicator(embeddings[name].local_vectors)
                       for name in manifest.class_vocabulary}

    optimizer = Adam(params.named_tensors(), cfg.learning_rate)
    batches_per_epoch = math.ceil(len(objects) / cfg.batch_size)
    workers = min(cfg.workers, cfg.batch_size)
    logger.info(f"Training on {len(objects)} objects, {len(manifest.class_vocabulary)} classes: "
                f"{cfg.epochs} epochs x {batches_per_epoch} batches, local loss {cfg.loss.local_mode}, "
                f"{workers} worker(s)")

    metrics, epoch_losses = [], []
    step = 0
    writer = MetricsWriter(metrics_path) if metrics_path is not None else None
    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            label_choice = {o.id: int(label_rng.integers(len(embeddings[o.class_name].global_vectors)))
                            for o in objects}
            order = shuffle_rng.permutation(len(objects))
            totals = []
            for index in np.array_split(order, batches_per_epoch):
                step += 1
                batch = [objects[i] for i in index]
                loss = batch_loss(params, batch, label_choice, embeddings, cfg, soft_tables, executor)
                value = loss.total.item()
                if not math.isfinite(value):
                    raise NonFiniteLoss(step, value)

                optimizer.zero_grad()
                loss.total.backward()
                optimizer.step()

                record = {'step': step, 'epoch': epoch, **loss.as_record()}
                metrics.append(record)
                totals.append(value)
                if writer is not None:
                    writer.write(record)
                logger.debug(f"step {step}: global={record['global']:.6f} local={record['local']:.6f}")
            epoch_losses.append(float(np.mean(totals)))
            logger.info(f"Epoch {epoch}/{cfg.epochs}: mean loss {epoch_losses[-1]:.6f}")
    finally:
        if executor is not None:
            executor.shutdown(wait=True)
        if writer is not None:
            writer.close()

    if embedding_checksum(embeddings) != checksum:
        raise DataError("Text embeddings changed during training")

    rng_state = {'shuffle': shuffle_rng.bit_generator.state, 'labels': label_rng.bit_generator.state}
    checkpoint = Checkpoint(params, cfg, rng_state, step)
    return TrainResult(checkpoint, metrics, epoch_losses, checksum)


def checkpoint_bytes(ckpt):
    """Serialized checkpoint, checksum included."""
    header = json.dumps({'config': config_to_dict(ckpt.config), 'rng_state': ckpt.rng_state,
                         'step': ckpt.step}, sort_keys=True, separators=(',', ':')).encode('utf-8')
    out = bytearray(CHECKPOINT_MAGIC)
    out += struct.pack('<I', ckpt.version)
    out += struct.pack('<I', len(header)) + header

    named = ckpt.params.named_tensors()
    out += struct.pack('<I', len(named))
    payload = []
    for name, t in named.items():
        array = np.ascontiguousarray(t.data, dtype=t.dtype.newbyteorder('<'))
        encoded = name.encode('utf-8')
        out += struct.pack('<H', len(encoded)) + encoded
        out += struct.pack('<BB', _DTYPE_CODES[array.dtype.str], array.ndim)
        out += struct.pack(f'<{array.ndim}I', *array.shape)
        payload.append(array.tobytes())
    for chunk in payload:
        out += chunk
    out += hashlib.sha256(out).digest()
    return bytes(out)


def save_checkpoint(ckpt, path):
    """
    Write a checkpoint file.

    Raises:
        IoError: If the file cannot be written
    """
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(checkpoint_bytes(ckpt))
    except OSError as e:
        raise IoError(path, e)
    logger.info(f"Saved checkpoint {path} (step {ckpt.step})")


def load_checkpoint(path):
    """
    Read a checkpoint file.

    Raises:
        VersionMismatch: If the file was written by another format version
        CorruptFile: On bad magic, checksum mismatch or an unreadable layout
        IoError: If the file cannot be read
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise IoError(path, e)

    if len(data) < len(CHECKPOINT_MAGIC) + 4 or not data.startswith(CHECKPOINT_MAGIC):
        raise CorruptFile(path, "not a pointcube checkpoint")
    (version,) = struct.unpack_from('<I', data, len(CHECKPOINT_MAGIC))
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(CHECKPOINT_VERSION, version)
    body, digest = data[:-_DIGEST_SIZE], data[-_DIGEST_SIZE:]
    if len(data) < len(CHECKPOINT_MAGIC) + 4 + _DIGEST_SIZE or hashlib.sha256(body).digest() != digest:
        raise CorruptFile(path, "checksum mismatch")

    try:
        offset = len(CHECKPOINT_MAGIC) + 4
        (size,) = struct.unpack_from('<I', body, offset)
        offset += 4
        header = json.loads(body[offset:offset + size].decode('utf-8'))
        offset += size

        (count,) = struct.unpack_from('<I', body, offset)
        offset += 4
        table = []
        for _ in range(count):
            (name_len,) = struct.unpack_from('<H', body, offset)
            offset += 2
            name = body[offset:offset + name_len].decode('utf-8')
            offset += name_len
            code, ndim = struct.unpack_from('<BB', body, offset)
            offset += 2
            shape = struct.unpack_from(f'<{ndim}I', body, offset)
            offset += 4 * ndim
            table.append((name, _CODE_DTYPES[code], shape))

        arrays = {}
        for name, dtype, shape in table:
            count = int(np.prod(shape, dtype=np.int64))
            arrays[name] = np.frombuffer(body, dtype=dtype, count=count, offset=offset).reshape(shape).copy()
            offset += count * dtype.itemsize
        if offset != len(body):
            raise ValueError(f"{len(body) - offset} trailing bytes")
    except (struct.error, KeyError, ValueError, UnicodeDecodeError) as e:
        raise CorruptFile(path, f"unreadable layout: {e}")

    config = config_from_dict(header['config'])
    try:
        params = ModelParams.from_named(config.model, arrays)
    except KeyError as e:
        raise CorruptFile(path, f"missing tensor {e}")
    return Checkpoint(params, config, header.get('rng_state', {}), header.get('step', 0), version)
