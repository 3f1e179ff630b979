"""Grad-CAM heatmaps over the last backbone stage and their rendering."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from ._jet import JET
from .data import LabeledImage, encode_ppm, to_uint8, write_image
from .tensor import DimensionError, Tensor

JET_TABLE = np.array(JET, dtype=np.uint8)
GUTTER = 4


@dataclass
class CamMap:
    cam: Tensor            # (s, s) in [0, 1]
    class_index: int
    image_id: str
    weights: np.ndarray | None = None  # per-channel gradient means


def cam_from_gradients(features: np.ndarray, grads: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Class activation map from feature maps (c, h, w) and their gradients.

    ``w_k = mean(dF_k)``, ``cam = relu(sum_k w_k F_k)``, divided by its max
    (an all-zero map stays zero), then upsampled to ``size`` x ``size``.
    Returns (cam, w).
    """
    f = np.asarray(features, dtype=np.float64)
    g = np.asarray(grads, dtype=np.float64)
    if f.ndim != 3 or f.shape != g.shape:
        raise DimensionError(f"features {f.shape} and gradients {g.shape} must both be (c, h, w)")
    w = g.mean(axis=(1, 2))
    raw = np.maximum(np.tensordot(w, f, axes=1), 0.0)
    top = raw.max()
    if top > 0:
        raw = raw / top
    with T.precision(64):
        cam = T.upsample_bilinear(raw, size, size).data
    return np.clip(cam, 0.0, 1.0), w


def grad_cam(state, image: LabeledImage, target_class: int) -> CamMap:
    """Grad-CAM of ``target_class`` for one model-sized image (3, s, s)."""
    model = state.model
    k = model.num_classes
    if not 0 <= target_class < k:
        raise ValueError(f"target_class must lie in [0, {k}), got {target_class}")
    s = state.cfg.backbone.input_size
    pixels = np.asarray(image.pixels)
    if pixels.shape != (3, s, s):
        raise DimensionError(f"grad_cam expects a (3, {s}, {s}) image, got {pixels.shape}")
    with T.precision(state.cfg.train.precision):
        with T.no_grad():
            f = model.features(Tensor(pixels[None])).data
        leaf = Tensor(f, requires_grad=True)
        _, logits = model.head(leaf, "o")
        T.backward(T.getitem(logits, (0, target_class)))
    cam, w = cam_from_gradients(f[0], leaf.grad[0], s)
    return CamMap(Tensor(cam, dtype=np.float64), int(target_class), str(image.id), w)


def colorize(cam: np.ndarray) -> np.ndarray:
    """Jet colours (3, s, s) in [0, 1] for a map in [0, 1]."""
    idx = np.round(np.clip(cam, 0.0, 1.0) * 255).astype(np.intp)
    return JET_TABLE[idx].transpose(2, 0, 1).astype(np.float64) / 255


def heatmap_panel(cam: CamMap, image: LabeledImage, gutter: int = GUTTER) -> np.ndarray:
    """Side-by-side (h, 3w + 2 gutter, 3) bytes: original | colormap | 0.5 overlay."""
    img = np.asarray(image.pixels, dtype=np.float64)
    c = cam.cam.data if isinstance(cam.cam, Tensor) else np.asarray(cam.cam)
    if img.ndim != 3 or img.shape[0] != 3 or img.shape[1:] != c.shape:
        raise DimensionError(f"cam {c.shape} does not match image {img.shape}")
    colors = colorize(c)
    overlay = 0.5 * img + 0.5 * colors
    h, w = c.shape
    panel = np.full((3, h, 3 * w + 2 * gutter), 1.0)
    for i, part in enumerate((img, colors, overlay)):
        x0 = i * (w + gutter)
        panel[:, :, x0:x0 + w] = part
    return to_uint8(panel)


def render_heatmap(cam: CamMap, image: LabeledImage, out: str | os.PathLike,
                   gutter: int = GUTTER) -> Path:
    """Write the three-panel heatmap to ``out`` (PPM, or PNG by suffix)."""
    out = Path(out)
    panel = heatmap_panel(cam, image, gutter)
    try:
        if out.suffix.lower() == ".png":
            write_image(out, panel)
        else:
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_bytes(encode_ppm(panel))
    except OSError as exc:
        raise OSError(f"cannot write heatmap to {out}: {exc.strerror or exc}") from exc
    return out
