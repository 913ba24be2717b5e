"""
Contrastive losses.

Kernel f(a, b) in standard mode is exp(cos(a, b) / tau). In literal mode it is
exp(cos(a, b)) / tau: the 1/tau factor multiplies numerator and denominator
of every ratio alike, so the losses never apply it and are exactly
independent of tau in that mode.

    global:  -1/N sum_l log[ f(F_l, T_l) / sum_m f(F_l, T_m) ]
    local:   E_objects -log[ sum_{valid j,k} W(j,k) f(F_j, T_k) / sum_{valid j,k} f(F_j, T_k) ]

with W the hard pair indicator P or the soft indicator S. Local negatives
are intra-object only.
"""

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (Tensor, concat_rows, cosine_matrix, exp, log, logsumexp_lastdim,
                       take_rows)
from .errors import AllBlocksInvalid, ShapeMismatch, ZeroVector
from .model import LocalEmbeddings

KERNEL_MODES = ('standard', 'literal')
LOCAL_MODES = ('hard', 'soft', 'off')


@dataclass
class LossConfig:
    tau: float = 0.07
    kernel_mode: str = 'standard'
    local_mode: str = 'hard'
    min_points: int = 1

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"loss.tau must be positive, got {self.tau}")
        if self.kernel_mode not in KERNEL_MODES:
            raise ValueError(f"loss.kernel_mode must be one of {KERNEL_MODES}, got {self.kernel_mode!r}")
        if self.local_mode not in LOCAL_MODES:
            raise ValueError(f"loss.local_mode must be one of {LOCAL_MODES}, got {self.local_mode!r}")
        if self.min_points < 1:
            raise ValueError(f"loss.min_points must be at least 1, got {self.min_points}")


@dataclass
class LossValue:
    """global_term + local_term == total, as scalar Tensors."""

    global_term: Tensor
    local_term: Tensor
    total: Tensor

    def as_record(self):
        return {'global': self.global_term.item(), 'local': self.local_term.item(),
                'total': self.total.item()}


def similarity_kernel(a, b, cfg):
    """f(a, b) for two nonzero vectors, as a float."""
    a = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64).reshape(-1)
    b = np.asarray(b.data if isinstance(b, Tensor) else b, dtype=np.float64).reshape(-1)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0:
        raise ZeroVector(0)
    if nb == 0.0:
        raise ZeroVector(1)
    cos = float(a @ b / (na * nb))
    if cfg.kernel_mode == 'literal':
        return math.exp(cos) / cfg.tau
    return math.exp(cos / cfg.tau)


def _logits(cosine, cfg):
    if cfg.kernel_mode == 'literal':
        return cosine
    return cosine * (1.0 / cfg.tau)


def _rows(x):
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (list, tuple)):
        rows = [r if isinstance(r, Tensor) else Tensor(np.atleast_2d(r)) for r in x]
        return concat_rows([r if r.ndim == 2 else r.reshape(1, -1) for r in rows])
    return Tensor(np.atleast_2d(x))


def global_loss(batch_global_embs, batch_global_text_embs, cfg):
    """
    Batch InfoNCE between object embeddings and their paired text embeddings.

    Args:
        batch_global_embs: [N x d] Tensor (or N row vectors); row l pairs with text row l
        batch_global_text_embs: [N x d] Tensor (or N row vectors)
        cfg: LossConfig

    Returns:
        Scalar Tensor >= 0
    """
    objects = _rows(batch_global_embs)
    texts = _rows(batch_global_text_embs)
    if objects.shape != texts.shape:
        raise ShapeMismatch('global_loss', objects.shape, texts.shape)
    logits = _logits(cosine_matrix(objects, texts), cfg)
    diagonal = (logits * np.eye(objects.shape[0], dtype=logits.dtype)).sum(axis=1, keepdims=True)
    return (logsumexp_lastdim(logits) - diagonal).mean()


def _object_local_loss(local_embs, text_embs, weights, cfg):
    valid = local_embs.valid_index
    if valid.size == 0:
        raise AllBlocksInvalid()
    texts = _rows(text_embs)
    logits = _logits(cosine_matrix(take_rows(local_embs.vectors, valid), texts), cfg)
    # A constant shift leaves the ratio unchanged and keeps exp() in range.
    shifted = exp(logits - float(logits.data.max()))
    w = np.asarray(weights, dtype=logits.dtype)[valid]
    return log(shifted.sum()) - log((shifted * w).sum())


def _local_loss(local_embs, local_text_embs, tables, cfg):
    if isinstance(local_embs, LocalEmbeddings):
        local_embs, local_text_embs = [local_embs], [local_text_embs]
    if len(local_embs) != len(local_text_embs):
        raise ShapeMismatch('local_loss', len(local_embs), len(local_text_embs))
    if not isinstance(tables, (list, tuple)):
        tables = [tables] * len(local_embs)
    terms = [_object_local_loss(e, t, w, cfg) for e, t, w in zip(local_embs, local_text_embs, tables)]
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total * (1.0 / len(terms))


def local_loss_hard(local_embs, local_text_embs, indicator, cfg):
    """
    Pooled-ratio local loss with the binary pair indicator, averaged over objects.

    Args:
        local_embs: LocalEmbeddings, or a sequence of them (one per object)
        local_text_embs: projected [9 x d] local text embeddings per object
        indicator: PairIndicator
        cfg: LossConfig

    Raises:
        AllBlocksInvalid: If an object has no valid block
    """
    return _local_loss(local_embs, local_text_embs, indicator.table, cfg)


def local_loss_soft(local_embs, local_text_embs, soft, cfg):
    """As local_loss_hard with the soft indicator (one per object, or one shared)."""
    tables = [s.table for s in soft] if isinstance(soft, (list, tuple)) else soft.table
    return _local_loss(local_embs, local_text_embs, tables, cfg)


def total_loss(global_term, local_term):
    """L_total = L_global + L_local."""
    return global_term + local_term
