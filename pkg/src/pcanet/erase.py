"""Attention-guided erasing.

An attention map is taken from the (co-attention weighted) features, scaled to
[0, 1], thresholded into a binary drop mask and multiplied into the raw image.
Everything here runs off the tape: the erased image is plain input data for a
second forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import instrument
from .errors import ConfigError
from .tensor import DimensionError, Tensor, upsample_bilinear

REDUCTIONS = ("argmax_gap", "pixel_max")


@dataclass
class AttentionMap:
    a: Tensor
    source_channel: int  # -1 when reduced by pixelwise max


@dataclass
class DropMask:
    m: Tensor
    theta_used: float

    @property
    def erased_fraction(self) -> float:
        return 1.0 - float(self.m.data.mean())


def _values(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _attention(f: np.ndarray, image_size: int, reduce: str) -> tuple[np.ndarray, np.ndarray]:
    """Batched attention maps for features (n, c, h, w); returns (maps, channels)."""
    if reduce == "argmax_gap":
        channels = np.argmax(f.mean(axis=(2, 3)), axis=1)
        raw = f[np.arange(len(f)), channels]
    elif reduce == "pixel_max":
        channels = np.full(len(f), -1)
        raw = f.max(axis=1)
    else:
        raise ConfigError(f"attention_reduce must be one of {REDUCTIONS}, got {reduce!r}")
    a = upsample_bilinear(raw, image_size, image_size).data
    lo = a.min(axis=(1, 2), keepdims=True)
    hi = a.max(axis=(1, 2), keepdims=True)
    span = np.where(hi > lo, hi - lo, 1)
    a = np.where(hi > lo, (a - lo) / span, 0).astype(a.dtype)
    instrument.count("attention_map", len(f))
    return a, channels


def attention_map(fw, image_size: int, reduce: str = "argmax_gap") -> AttentionMap:
    """Attention over an image from one feature map (c, h, w).

    ``argmax_gap`` picks the channel with the largest spatial mean (lowest
    index on ties); ``pixel_max`` takes the max over channels at each pixel.
    The upsampled map is min-max normalised; a constant map becomes all zeros.
    """
    f = _values(fw)
    if f.ndim != 3 or f.shape[0] < 1:
        raise DimensionError(f"attention_map expects (c, h, w) features, got {f.shape}")
    a, channels = _attention(f[None], image_size, reduce)
    return AttentionMap(Tensor(a[0], dtype=a.dtype), int(channels[0]))


def drop_mask(a: AttentionMap, theta: float) -> DropMask:
    """Zero where the attention exceeds ``theta``, one elsewhere."""
    _check_theta(theta)
    vals = _values(a.a)
    return DropMask(Tensor((vals <= theta).astype(vals.dtype), dtype=vals.dtype), float(theta))


def _check_theta(theta: float) -> None:
    if not 0.0 < theta < 1.0:
        raise ConfigError(f"theta must lie in (0, 1), got {theta}")


def erase(image, mask: DropMask) -> Tensor:
    """Multiply every colour channel of ``image`` (3, s, s) by the mask."""
    img = _values(image)
    m = _values(mask.m)
    if img.ndim != 3 or img.shape[1:] != m.shape:
        raise DimensionError(f"cannot erase image {img.shape} with mask {m.shape}")
    instrument.count("erase")
    return Tensor(img * m.astype(img.dtype), dtype=img.dtype)


def erase_batch(images, features, theta: float, reduce: str = "argmax_gap") -> tuple[Tensor, np.ndarray]:
    """Erase each image (n, 3, s, s) with the attention of its own features (n, c, h, w).

    Same arithmetic as attention_map -> drop_mask -> erase applied per image.
    Returns the erased batch and the per-image erased fractions.
    """
    imgs = _values(images)
    feats = _values(features)
    if imgs.ndim != 4 or feats.ndim != 4 or len(imgs) != len(feats):
        raise DimensionError(f"erase_batch: images {imgs.shape} and features {feats.shape} do not match")
    _check_theta(theta)
    a, _ = _attention(feats, imgs.shape[-1], reduce)
    masks = (a <= theta).astype(imgs.dtype)
    instrument.count("erase", len(imgs))
    out = imgs * masks[:, None]
    return Tensor(out, dtype=out.dtype), 1.0 - masks.mean(axis=(1, 2))
