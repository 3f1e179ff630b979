"""Channel co-attention between the feature maps of a same-class image pair.

The channel similarity ``M = F1' F2'^T`` (feature maps flattened to c x l) is
negated and softmaxed row-wise into ``W``; both maps are then re-mixed as
``W F``.  All functions accept a single map (c, h, w) or a stack of pairs
(p, c, h, w) and treat the leading axis as independent pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import instrument
from . import tensor as T
from .tensor import DimensionError, Tensor


@dataclass
class FeaturePair:
    f1: Tensor
    f2: Tensor
    label: int | None = None

    def __post_init__(self):
        if self.f1.shape != self.f2.shape:
            raise DimensionError(f"feature pair shapes differ: {self.f1.shape} vs {self.f2.shape}")
        if self.f1.ndim not in (3, 4):
            raise DimensionError(f"feature maps must be (c, h, w) or (p, c, h, w), got {self.f1.shape}")


@dataclass
class ChannelWeightMatrix:
    """Row-stochastic c x c weights plus the similarity matrix they came from."""

    w: Tensor
    similarity: Tensor | None = None


def _flatten(f: Tensor) -> Tensor:
    *lead, c, h, w = f.shape
    return T.reshape(f, (*lead, c, h * w))


def channel_weights(pair: FeaturePair) -> ChannelWeightMatrix:
    f1, f2 = _flatten(pair.f1), _flatten(pair.f2)
    m = T.matmul(f1, T.transpose(f2))
    return ChannelWeightMatrix(T.softmax_rows(T.neg(m)), m)


def apply_channel_weights(w: ChannelWeightMatrix | Tensor, f: Tensor, transpose: bool = False) -> Tensor:
    """Return ``W @ F'`` reshaped back to the shape of ``f``.

    With ``transpose=True`` the transposed weights are applied instead.
    """
    wt = w.w if isinstance(w, ChannelWeightMatrix) else w
    c = f.shape[-3]
    if wt.shape[-2:] != (c, c) or wt.shape[:-2] != f.shape[:-3]:
        raise DimensionError(f"weights {wt.shape} do not match feature map {f.shape}")
    if transpose:
        wt = T.transpose(wt)
    return T.reshape(T.matmul(wt, _flatten(f)), f.shape)


def coattend(pair: FeaturePair, transpose_for_second: bool = False):
    """Co-attend a pair; returns ``(fw1, fw2, weights)``.

    The same ``W`` re-weights both maps unless ``transpose_for_second`` is set,
    in which case ``W^T`` is used for the second map.
    """
    instrument.count("coattend")
    weights = channel_weights(pair)
    fw1 = apply_channel_weights(weights, pair.f1)
    fw2 = apply_channel_weights(weights, pair.f2, transpose=transpose_for_second)
    return fw1, fw2, weights
