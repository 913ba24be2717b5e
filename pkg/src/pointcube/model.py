"""
Global and local branches.

Global:  F^G = maxpool(f) ; F̄^G = F^G W^G
Local:   F^L = per-block maxpool(f) ; F^self = selfAttn(F^L) ; F̄^self = F^self W^L
         F̄^cross = crossAttn(Q = F̄^G, K = V = F̄^self) ; F̄^L = layerNorm(F̄^self + F̄^cross)
Text:    T̄ = T W^T (one W^T shared by global and local labels)
"""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import AttentionParams, Tensor, layer_norm, maxpool_rows, multihead_attention
from .encoder import EncoderParams, block_features, encode
from .errors import AllBlocksInvalid, DimensionMismatch, ZeroVector


@dataclass
class ModelConfig:
    d_e: int = 256
    d_out: int = 128
    d_et: int = 256
    heads: int = 4
    hidden: list = field(default_factory=lambda: [64, 128])
    ff_mult: int = 2
    self_attention: bool = True
    cross_attention: bool = True
    ln_eps: float = 1e-5

    def __post_init__(self):
        for name in ('d_e', 'd_out', 'd_et', 'heads', 'ff_mult'):
            if getattr(self, name) < 1:
                raise ValueError(f"model.{name} must be positive")
        if self.d_e % self.heads or self.d_out % self.heads:
            raise ValueError(f"d_e={self.d_e} and d_out={self.d_out} must be divisible by heads={self.heads}")


@dataclass
class SelfAttentionLayer:
    """One pre-norm transformer encoder layer over the 27 block tokens."""

    ln1_gain: Tensor
    ln1_bias: Tensor
    attn: AttentionParams
    ln2_gain: Tensor
    ln2_bias: Tensor
    ff_w1: Tensor
    ff_b1: Tensor
    ff_w2: Tensor
    ff_b2: Tensor

    def named_tensors(self, prefix):
        named = {f"{prefix}.{name}": getattr(self, name)
                 for name in ('ln1_gain', 'ln1_bias', 'ln2_gain', 'ln2_bias',
                              'ff_w1', 'ff_b1', 'ff_w2', 'ff_b2')}
        named.update(self.attn.named_tensors(f"{prefix}.attn"))
        return named

    def __call__(self, x, heads, mask, eps):
        h = layer_norm(x, self.ln1_gain, self.ln1_bias, eps)
        x = x + multihead_attention(h, h, h, self.attn, heads, mask)
        h = layer_norm(x, self.ln2_gain, self.ln2_bias, eps)
        return x + ((h @ self.ff_w1 + self.ff_b1).relu() @ self.ff_w2 + self.ff_b2)


@dataclass
class ModelParams:
    config: ModelConfig
    encoder: EncoderParams
    w_g: Tensor
    w_l: Tensor
    w_t: Tensor
    self_layer: SelfAttentionLayer
    cross_attn: AttentionParams
    ln_gain: Tensor
    ln_bias: Tensor

    @property
    def dtype(self):
        return self.w_g.dtype

    def named_tensors(self):
        """All trainable tensors by stable name, in a fixed order."""
        named = dict(self.encoder.named_tensors('encoder'))
        named['w_g'] = self.w_g
        named['w_l'] = self.w_l
        named['w_t'] = self.w_t
        named.update(self.self_layer.named_tensors('self_layer'))
        named.update(self.cross_attn.named_tensors('cross_attn'))
        named['ln_gain'] = self.ln_gain
        named['ln_bias'] = self.ln_bias
        return named

    @classmethod
    def from_named(cls, config, named):
        """Rebuild parameters from a name -> array mapping (inverse of named_tensors)."""
        def t(name):
            return Tensor(np.array(named[name]), requires_grad=True)
        layers = len(config.hidden) + 1
        encoder = EncoderParams([t(f"encoder.layer{i}.weight") for i in range(layers)],
                                [t(f"encoder.layer{i}.bias") for i in range(layers)])

        def attention(prefix):
            return AttentionParams(*(t(f"{prefix}.{n}") for n in ('w_q', 'w_k', 'w_v', 'w_o')))
        layer = SelfAttentionLayer(
            t('self_layer.ln1_gain'), t('self_layer.ln1_bias'), attention('self_layer.attn'),
            t('self_layer.ln2_gain'), t('self_layer.ln2_bias'),
            t('self_layer.ff_w1'), t('self_layer.ff_b1'), t('self_layer.ff_w2'), t('self_layer.ff_b2'))
        return cls(config, encoder, t('w_g'), t('w_l'), t('w_t'), layer,
                   attention('cross_attn'), t('ln_gain'), t('ln_bias'))


def init_params(config, rng, dtype=np.float64):
    """Randomly initialized parameters for a configuration."""
    def dense(fan_in, fan_out, gain=1.0):
        return Tensor(rng.normal(0.0, gain / np.sqrt(fan_in), (fan_in, fan_out)),
                      requires_grad=True, dtype=dtype)

    def const(value, n):
        return Tensor(np.full(n, value), requires_grad=True, dtype=dtype)

    d_e, d_out, ff = config.d_e, config.d_out, config.ff_mult * config.d_e
    encoder = EncoderParams.init([3, *config.hidden, d_e], rng, dtype)
    w_g = dense(d_e, d_out)
    w_l = dense(d_e, d_out)
    w_t = dense(config.d_et, d_out)
    layer = SelfAttentionLayer(
        const(1.0, d_e), const(0.0, d_e), AttentionParams.init(d_e, rng, dtype),
        const(1.0, d_e), const(0.0, d_e),
        dense(d_e, ff, np.sqrt(2.0)), const(0.0, ff), dense(ff, d_e), const(0.0, d_e))
    cross = AttentionParams.init(d_out, rng, dtype)
    return ModelParams(config, encoder, w_g, w_l, w_t, layer, cross,
                       const(1.0, d_out), const(0.0, d_out))


@dataclass
class GlobalEmbedding:
    """F̄^G [1 x d_out]; pooled holds the pre-projection F^G [1 x d_E]."""

    vector: Tensor
    pooled: Tensor


@dataclass
class LocalEmbeddings:
    """F̄^L [27 x d_out]; rows of invalid blocks are ignored downstream."""

    vectors: Tensor
    valid_mask: np.ndarray

    @property
    def valid_index(self):
        return np.flatnonzero(self.valid_mask)


def global_branch(feats, params):
    """Max-pool the point features over points, then project by W^G."""
    pooled, _ = maxpool_rows(feats.features)
    return GlobalEmbedding(pooled @ params.w_g, pooled)


def local_branch(block_feats, global_emb, params):
    """
    Block tokens -> self-attention -> W^L -> cross-attention with F̄^G -> residual + layer norm.

    Invalid blocks are masked as attention keys but stay as query tokens, so
    the output always has 27 rows.

    Raises:
        AllBlocksInvalid: If no block is valid
    """
    cfg = params.config
    mask = np.asarray(block_feats.valid_mask, dtype=bool)
    if not mask.any():
        raise AllBlocksInvalid()
    tokens = block_feats.features
    if cfg.self_attention:
        tokens = params.self_layer(tokens, cfg.heads, mask, cfg.ln_eps)
    projected = tokens @ params.w_l
    if cfg.cross_attention:
        cross = multihead_attention(global_emb.vector, projected, projected,
                                    params.cross_attn, cfg.heads, mask)
        projected = projected + cross
    return LocalEmbeddings(layer_norm(projected, params.ln_gain, params.ln_bias, cfg.ln_eps), mask)


def embed_text(raw, params):
    """
    Project raw text embeddings by W^T: [d_ET] or [m x d_ET] -> [1 or m x d_out].

    Raises:
        ZeroVector: If a raw vector is zero
        DimensionMismatch: If the width is not d_ET
    """
    raw = np.asarray(raw.data if isinstance(raw, Tensor) else raw, dtype=params.dtype)
    if raw.ndim == 1:
        raw = raw[None, :]
    if raw.shape[1] != params.w_t.shape[0]:
        raise DimensionMismatch(params.w_t.shape[0], raw.shape[1], 'text embedding')
    zero = np.flatnonzero(~raw.any(axis=1))
    if zero.size:
        raise ZeroVector(int(zero[0]))
    return Tensor(raw) @ params.w_t


@dataclass
class ObjectEmbeddings:
    global_emb: GlobalEmbedding
    local: LocalEmbeddings


def forward(cloud, part, params):
    """Full forward pass for one normalized cloud and its partition."""
    feats = encode(cloud, params.encoder)
    global_emb = global_branch(feats, params)
    local = local_branch(block_features(feats, part), global_emb, params)
    return ObjectEmbeddings(global_emb, local)
