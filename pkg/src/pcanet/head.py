"""Bilinear pooling, the shared linear classifier, and the training losses."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import instrument
from . import tensor as T
from .tensor import DimensionError, Tensor


def bilinear_pool(f: Tensor, normalize: bool = True) -> Tensor:
    """Second-order pooling of feature maps (..., c, h, w) into (..., c*c) vectors.

    ``B = F' F'^T / l`` flattened row-major, then signed square root and L2
    normalisation (skipped when ``normalize`` is false).
    """
    *lead, c, h, w = f.shape
    l = h * w
    flat = T.reshape(f, (*lead, c, l))
    b = T.scale(T.matmul(flat, T.transpose(flat)), 1.0 / l)
    v = T.reshape(b, (*lead, c * c))
    if normalize:
        v = T.l2_normalize(T.signed_sqrt(v))
    return v


def classify(v: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Logits ``weights @ v + bias`` for one vector (d,) or a batch (b, d)."""
    if weights.ndim != 2 or v.shape[-1] != weights.shape[1] or bias.shape != (weights.shape[0],):
        raise DimensionError(
            f"classify: feature {v.shape}, weights {weights.shape}, bias {bias.shape} do not agree")
    instrument.count("classify")
    batch = v if v.ndim == 2 else T.reshape(v, (1, -1))
    logits = T.add(T.matmul(batch, T.transpose(weights)), bias)
    return logits if v.ndim == 2 else T.reshape(logits, (weights.shape[0],))


def _check_labels(labels, n: int, k: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.shape[0] != n:
        raise DimensionError(f"got {y.shape[0]} labels for a batch of {n}")
    if y.size and (y.min() < 0 or y.max() >= k):
        raise ValueError(f"labels must lie in [0, {k}), got range [{y.min()}, {y.max()}]")
    return y


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Batch mean of ``-log softmax(logits)[label]`` (log-sum-exp stabilised)."""
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects (b, K) logits, got {logits.shape}")
    b, k = logits.shape
    y = _check_labels(labels, b, k)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    loss = np.asarray(-logp[np.arange(b), y].mean(), dtype=logits.dtype)

    def bw(g):
        p = np.exp(logp)
        p[np.arange(b), y] -= 1
        return (p * (g / b),)
    return T.apply_op("cross_entropy", loss, (logits,), bw)


@dataclass
class ClassCenters:
    """Per-class centres of the bilinear features, moved online by ``update_centers``."""

    centers: np.ndarray
    alpha: float = 0.5
    lam: float = 0.5

    @classmethod
    def zeros(cls, num_classes: int, dim: int, alpha: float = 0.5, lam: float = 0.5, dtype=None):
        return cls(np.zeros((num_classes, dim), dtype=dtype or T.get_dtype()), alpha, lam)

    @property
    def num_classes(self) -> int:
        return self.centers.shape[0]


def center_loss(feats: Tensor, labels, centers: ClassCenters) -> Tensor:
    """``(1 / 2b) * sum_i ||v_i - c_{y_i}||^2``; the centres are constants on the tape."""
    b = feats.shape[0]
    y = _check_labels(labels, b, centers.num_classes)
    diff = T.sub(feats, Tensor(centers.centers[y], dtype=feats.dtype))
    return T.scale(T.tsum(T.mul(diff, diff)), 1.0 / (2 * b))


def update_centers(centers: ClassCenters, feats, labels) -> ClassCenters:
    """One centre step: ``c_j -= alpha * sum_{y_i=j}(c_j - v_i) / (1 + n_j)``.

    Classes absent from the batch keep their centres.  Updates ``centers`` in
    place and returns it.
    """
    v = feats.data if isinstance(feats, Tensor) else np.asarray(feats)
    y = _check_labels(labels, v.shape[0], centers.num_classes)
    instrument.count("update_centers")
    c = centers.centers
    for j in np.unique(y):
        members = v[y == j]
        delta = (c[j] - members).sum(axis=0) / (1 + len(members))
        c[j] = c[j] - c.dtype.type(centers.alpha) * delta.astype(c.dtype)
    return centers


@dataclass
class StreamOutputs:
    """Logits and bilinear features of the original / weighted / erased streams.

    Disabled streams are left as ``None`` and contribute nothing to the loss.
    """

    logits_o: Tensor
    feat_o: Tensor
    logits_w: Tensor | None = None
    feat_w: Tensor | None = None
    logits_e: Tensor | None = None
    feat_e: Tensor | None = None
    extras: dict = field(default_factory=dict)

    def streams(self):
        for name in ("o", "w", "e"):
            logits = getattr(self, f"logits_{name}")
            if logits is not None:
                yield name, logits, getattr(self, f"feat_{name}")


def total_loss(streams: StreamOutputs, labels, centers: ClassCenters, lam: float | None = None,
               parts: dict | None = None) -> Tensor:
    """Sum over enabled streams of cross-entropy plus ``lam`` times centre loss.

    ``lam`` defaults to ``centers.lam``.  When ``parts`` is given it receives
    the float value of every component (``ce_o``, ``ce_w``, ``ce_e``, ``center``).
    """
    lam = centers.lam if lam is None else lam
    total = None
    center_sum = 0.0
    for name, logits, feat in streams.streams():
        term = cross_entropy(logits, labels)
        if parts is not None:
            parts[f"ce_{name}"] = term.item()
        if lam:
            cl = center_loss(feat, labels, centers)
            center_sum += cl.item()
            term = T.add(term, T.scale(cl, lam))
        total = term if total is None else T.add(total, term)
    if total is None:
        raise ValueError("no stream is enabled")
    if parts is not None:
        parts["center"] = center_sum
    return total
