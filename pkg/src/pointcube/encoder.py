"""
Per-point 3D feature extraction.

The default encoder is a PointNet-style shared MLP 3 -> h1 -> ... -> d_E with
ReLU between layers: each feature row depends on its own point only. Any
object honoring the PointEncoder protocol ([n x 3] -> [n x d_E] Tensor) can
be dropped in.
"""

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .autodiff import Tensor, segment_max


@runtime_checkable
class PointEncoder(Protocol):
    out_dim: int

    def __call__(self, points: np.ndarray) -> Tensor: ...

    def named_tensors(self, prefix: str) -> dict: ...


@dataclass
class EncoderParams:
    """Shared MLP weights; weights[i] is [in_i x out_i], biases[i] is [out_i]."""

    weights: list
    biases: list

    def __post_init__(self):
        if self.weights[0].shape[0] != 3:
            raise ValueError(f"first encoder layer must take 3 inputs, got {self.weights[0].shape[0]}")
        for prev, cur in zip(self.weights, self.weights[1:]):
            if prev.shape[1] != cur.shape[0]:
                raise ValueError(f"encoder layers do not chain: {prev.shape} -> {cur.shape}")

    @property
    def out_dim(self):
        return self.weights[-1].shape[1]

    @classmethod
    def init(cls, dims, rng, dtype=np.float64):
        """He-initialized layers for dims = (3, h1, ..., d_E)."""
        weights, biases = [], []
        for fan_in, fan_out in zip(dims, dims[1:]):
            weights.append(Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out)),
                                  requires_grad=True, dtype=dtype))
            biases.append(Tensor(np.zeros(fan_out), requires_grad=True, dtype=dtype))
        return cls(weights, biases)

    def __call__(self, points):
        h = Tensor(np.asarray(points), dtype=self.weights[0].dtype)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = h.relu()
        return h

    def named_tensors(self, prefix='encoder'):
        named = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            named[f"{prefix}.layer{i}.weight"] = w
            named[f"{prefix}.layer{i}.bias"] = b
        return named


@dataclass
class PointFeatures:
    """[n x d_E] features aligned row-for-row with the input points."""

    features: Tensor


@dataclass
class BlockFeatures:
    """[27 x d_E] per-block max-pooled features; invalid blocks hold zero rows."""

    features: Tensor
    valid_mask: np.ndarray


def encode(cloud, params):
    """Run the point encoder over every point of a (normalized) cloud."""
    points = cloud.points if hasattr(cloud, 'points') else cloud
    return PointFeatures(params(points))


def block_features(feats, part):
    """
    Representative feature per block: columnwise max over the block's points.

    Features come from the single whole-cloud encoding; nothing is re-encoded.
    Blocks below the partition's min_points threshold get a zero row and are
    marked invalid.
    """
    segments = [idx if part.valid_mask[j] else idx[:0]
                for j, idx in enumerate(part.per_block_points)]
    return BlockFeatures(segment_max(feats.features, segments), part.valid_mask.copy())
