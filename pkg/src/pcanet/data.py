"""Datasets, image codec, augmentation and the pair-structured batch sampler.

Images are float arrays (3, s, s) in [0, 1].  Synthetic images are quantised
to multiples of 1/255 so that a PPM round trip is lossless.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import instrument
from .errors import ConfigError
from .tensor import Tensor, upsample_bilinear

RESIZE_FACTOR = 1.15


class ImageFormatError(ValueError):
    """A file could not be decoded as an image."""


@dataclass
class LabeledImage:
    pixels: np.ndarray
    label: int
    id: str


@dataclass
class PairBatch:
    """Images ``i`` and ``i + b/2`` always share a label."""

    images: Tensor
    labels: np.ndarray
    ids: list[str]

    def __post_init__(self):
        b = len(self.labels)
        if b % 2:
            raise ValueError(f"pair batch must have even size, got {b}")
        if np.any(self.labels[: b // 2] != self.labels[b // 2:]):
            raise ValueError("pair batch halves carry different labels")


class Dataset:
    """In-memory labelled images stored as one (n, 3, s, s) array."""

    def __init__(self, images: np.ndarray, labels: Sequence[int], ids: Sequence[str],
                 class_names: Sequence[str]):
        self.images = np.ascontiguousarray(images, dtype=np.float32)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.ids = list(ids)
        self.class_names = list(class_names)
        if not (len(self.images) == len(self.labels) == len(self.ids)):
            raise ValueError("images, labels and ids differ in length")
        self._resized: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> LabeledImage:
        return LabeledImage(self.images[i], int(self.labels[i]), self.ids[i])

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def image_size(self) -> int:
        return self.images.shape[-1]

    def resized(self, size: int) -> np.ndarray:
        """All images resized to ``size`` (cached)."""
        if size not in self._resized:
            self._resized[size] = resize(self.images, size)
        return self._resized[size]

    def class_members(self) -> dict[int, np.ndarray]:
        return {int(k): np.flatnonzero(self.labels == k) for k in np.unique(self.labels)}


# ----------------------------------------------------------------------
# synthetic fine-grained data
# ----------------------------------------------------------------------

GLYPH_SHAPES = ("square", "disc", "triangle", "plus", "ring", "diamond", "bars", "cross",
                "hbar", "vbar", "corner", "dot4")

GLYPH_COLORS = (
    (0.90, 0.15, 0.15), (0.15, 0.75, 0.20), (0.20, 0.30, 0.95), (0.95, 0.85, 0.10),
    (0.85, 0.20, 0.85), (0.10, 0.85, 0.85), (0.95, 0.55, 0.10), (0.55, 0.25, 0.85),
    (0.50, 0.80, 0.10), (0.95, 0.45, 0.65), (0.10, 0.50, 0.55), (0.60, 0.40, 0.20),
)


@dataclass
class SyntheticSpec:
    """Parameters of the synthetic fine-grained image set.

    Every image has a textured noise background, a few grey distractor
    shapes, and one small glyph whose shape and colour identify its class.
    """

    num_classes: int = 8
    images_per_class: int = 120
    test_images_per_class: int = 40
    image_size: int = 64
    glyph_size: int = 12
    distractors: int = 3

    def validate(self) -> None:
        if not 1 <= self.num_classes <= len(GLYPH_SHAPES):
            raise ConfigError(f"num_classes must be in [1, {len(GLYPH_SHAPES)}], got {self.num_classes}")
        if self.images_per_class < 1 or self.test_images_per_class < 0:
            raise ConfigError("images_per_class must be >= 1 and test_images_per_class >= 0")
        if self.image_size < 16 or self.glyph_size * 2 > self.image_size:
            raise ConfigError(f"image_size {self.image_size} too small for glyph_size {self.glyph_size}")


def _shape_mask(kind: str, n: int) -> np.ndarray:
    yy, xx = np.mgrid[0:n, 0:n] + 0.5
    c = n / 2
    r = n / 2
    dy, dx = yy - c, xx - c
    t = max(1.0, n / 5)
    if kind == "square":
        m = np.ones((n, n), bool)
    elif kind == "disc":
        m = dx ** 2 + dy ** 2 <= r ** 2
    elif kind == "triangle":
        m = yy >= 2 * abs(dx)
    elif kind == "plus":
        m = (abs(dx) <= t / 2 + 0.5) | (abs(dy) <= t / 2 + 0.5)
    elif kind == "ring":
        d = np.sqrt(dx ** 2 + dy ** 2)
        m = (d <= r) & (d >= r - t)
    elif kind == "diamond":
        m = abs(dx) + abs(dy) <= r
    elif kind == "bars":
        m = (xx % (2 * t) < t)
    elif kind == "cross":
        m = (abs(dx - dy) <= t * 0.75) | (abs(dx + dy) <= t * 0.75)
    elif kind == "hbar":
        m = abs(dy) <= t
    elif kind == "vbar":
        m = abs(dx) <= t
    elif kind == "corner":
        m = (xx <= 1.5 * t) | (yy >= n - 1.5 * t)
    elif kind == "dot4":
        m = ((dx - r / 2) ** 2 + (dy - r / 2) ** 2 <= (r / 3) ** 2) | \
            ((dx + r / 2) ** 2 + (dy - r / 2) ** 2 <= (r / 3) ** 2) | \
            ((dx - r / 2) ** 2 + (dy + r / 2) ** 2 <= (r / 3) ** 2) | \
            ((dx + r / 2) ** 2 + (dy + r / 2) ** 2 <= (r / 3) ** 2)
    else:
        raise ValueError(kind)
    return m


def _background(rng: np.random.Generator, s: int) -> np.ndarray:
    coarse = rng.uniform(0.25, 0.65, size=(3, 6, 6))
    img = upsample_bilinear(coarse.astype(np.float64), s, s).data
    img += rng.normal(0.0, 0.06, size=(3, s, s))
    return img


def _render(rng: np.random.Generator, spec: SyntheticSpec, label: int) -> np.ndarray:
    s = spec.image_size
    img = _background(rng, s)
    # keep everything inside the region that survives the training crop
    margin = int(np.ceil(s * (RESIZE_FACTOR - 1))) + 1
    for _ in range(spec.distractors):
        kind = GLYPH_SHAPES[rng.integers(len(GLYPH_SHAPES))]
        n = int(rng.integers(spec.glyph_size - 3, spec.glyph_size + 3))
        y, x = rng.integers(0, s - n + 1, size=2)
        grey = rng.uniform(0.1, 0.9)
        m = _shape_mask(kind, n)
        img[:, y:y + n, x:x + n][:, m] = grey
    n = int(rng.integers(spec.glyph_size - 2, spec.glyph_size + 3))
    y, x = rng.integers(margin, s - margin - n + 1, size=2)
    color = np.asarray(GLYPH_COLORS[label]) + rng.normal(0.0, 0.04, size=3)
    m = _shape_mask(GLYPH_SHAPES[label], n)
    img[:, y:y + n, x:x + n][:, m] = color[:, None]
    return np.round(np.clip(img, 0.0, 1.0) * 255) / 255


def generate_synthetic(spec: SyntheticSpec, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic train/test split; both splits are class-balanced."""
    spec.validate()
    names = [f"class_{k:02d}_{GLYPH_SHAPES[k]}" for k in range(spec.num_classes)]
    out = []
    for split, per_class in (("train", spec.images_per_class), ("test", spec.test_images_per_class)):
        # separate seed streams per split keep train and test disjoint by construction
        rng = np.random.default_rng([seed, 0 if split == "train" else 1])
        images, labels, ids = [], [], []
        for k in range(spec.num_classes):
            for i in range(per_class):
                images.append(_render(rng, spec, k))
                labels.append(k)
                ids.append(f"{split}_{k:02d}_{i:04d}")
        arr = np.stack(images) if images else np.zeros((0, 3, spec.image_size, spec.image_size))
        out.append(Dataset(arr, labels, ids, names))
    return out[0], out[1]


def export_synthetic(spec: SyntheticSpec, seed: int, root: str | os.PathLike) -> tuple[Dataset, Dataset]:
    """Write ``root/{train,test}/<class>/<id>.ppm`` plus ``root/manifest.json``."""
    train, test = generate_synthetic(spec, seed)
    root = Path(root)
    for name, ds in (("train", train), ("test", test)):
        save_image_folder(ds, root / name)
    manifest = {"seed": seed, "spec": asdict(spec),
                "splits": {"train": len(train), "test": len(test)}}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return train, test


# ----------------------------------------------------------------------
# codec and folders
# ----------------------------------------------------------------------

def to_uint8(pixels: np.ndarray) -> np.ndarray:
    """(3, h, w) floats in [0, 1] -> (h, w, 3) bytes."""
    return np.round(np.clip(pixels, 0.0, 1.0) * 255).astype(np.uint8).transpose(1, 2, 0)


def encode_ppm(pixels: np.ndarray) -> bytes:
    """Binary P6 with maxval 255.  Accepts (3, h, w) floats or (h, w, 3) uint8."""
    arr = pixels if pixels.dtype == np.uint8 else to_uint8(pixels)
    h, w, _ = arr.shape
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(arr).tobytes()


def _ppm_tokens(buf: bytes, count: int) -> tuple[list[int], int]:
    tokens, pos = [], 2
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in b"\r\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and buf[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ImageFormatError("malformed PPM header")
        tokens.append(int(buf[start:pos]))
    return tokens, pos + 1


def decode_ppm(buf: bytes) -> np.ndarray:
    """Decode binary P6 (maxval 255) to (3, h, w) floats in [0, 1]."""
    if buf[:2] != b"P6":
        raise ImageFormatError("not a binary PPM (P6) file")
    (w, h, maxval), pos = _ppm_tokens(buf, 3)
    if maxval != 255:
        raise ImageFormatError(f"unsupported PPM maxval {maxval}")
    body = buf[pos:pos + w * h * 3]
    if len(body) != w * h * 3:
        raise ImageFormatError(f"PPM body truncated: expected {w * h * 3} bytes, got {len(body)}")
    arr = np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)
    return arr.transpose(2, 0, 1).astype(np.float32) / 255


def read_image(path: str | os.PathLike) -> np.ndarray:
    path = Path(path)
    try:
        if path.suffix.lower() == ".ppm":
            return decode_ppm(path.read_bytes())
        from PIL import Image  # optional dependency, PNG only

        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255
        return arr.transpose(2, 0, 1)
    except ImportError as exc:
        raise ImageFormatError(f"{path}: reading PNG needs Pillow") from exc
    except ImageFormatError as exc:
        raise ImageFormatError(f"{path}: {exc}") from exc
    except Exception as exc:
        raise ImageFormatError(f"{path}: cannot decode image ({exc})") from exc


def write_image(path: str | os.PathLike, pixels: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".png":
        from PIL import Image

        arr = pixels if pixels.dtype == np.uint8 else to_uint8(pixels)
        Image.fromarray(arr).save(path, format="PNG")
    else:
        path.write_bytes(encode_ppm(pixels))


def save_image_folder(ds: Dataset, root: str | os.PathLike) -> None:
    root = Path(root)
    for img, label, ident in zip(ds.images, ds.labels, ds.ids):
        write_image(root / ds.class_names[label] / f"{ident}.ppm", img)


IMAGE_SUFFIXES = (".ppm", ".png")


def load_image_folder(root: str | os.PathLike, image_size: int | None = None) -> Dataset:
    """Load ``root/<class_name>/*.ppm|*.png``; classes are indexed in sorted name order."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} does not exist")
    classes = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not classes:
        raise ValueError(f"dataset root {root} contains no class folders")
    images, labels, ids = [], [], []
    for k, name in enumerate(classes):
        files = sorted(p for p in (root / name).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise ValueError(f"class folder {root / name} contains no images")
        for f in files:
            img = read_image(f)
            if image_size is not None and img.shape[1:] != (image_size, image_size):
                img = resize(img, image_size)
            images.append(img)
            labels.append(k)
            ids.append(f"{name}/{f.stem}")
    shapes = {im.shape for im in images}
    if len(shapes) > 1:
        raise ValueError(f"images under {root} differ in size {sorted(shapes)}; pass image_size")
    return Dataset(np.stack(images), labels, ids, classes)


# ----------------------------------------------------------------------
# augmentation
# ----------------------------------------------------------------------

def resize(images: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of the last two axes to ``size`` x ``size``."""
    return upsample_bilinear(np.asarray(images, dtype=np.float32), size, size).data


def crop_geometry(size: int) -> tuple[int, int]:
    """(resized side, maximum crop offset) for a target side ``size``."""
    big = int(round(size * RESIZE_FACTOR))
    return big, big - size


def augment_train(img: LabeledImage, rng: np.random.Generator, force_flip: bool | None = None) -> LabeledImage:
    """Resize to 1.15x, take a random crop of the original size, flip with p = 0.5."""
    s = img.pixels.shape[-1]
    big, span = crop_geometry(s)
    return LabeledImage(_crop_flip(resize(img.pixels, big), s, span, rng, force_flip), img.label, img.id)


def _crop_flip(big: np.ndarray, s: int, span: int, rng: np.random.Generator,
               force_flip: bool | None = None) -> np.ndarray:
    y, x = rng.integers(0, span + 1, size=2)
    flip = rng.random() < 0.5
    if force_flip is not None:
        flip = force_flip
    out = big[:, y:y + s, x:x + s]
    return np.ascontiguousarray(out[:, :, ::-1] if flip else out)


def transform_eval(img: LabeledImage) -> LabeledImage:
    """Resize to 1.15x and take the centre crop."""
    s = img.pixels.shape[-1]
    return LabeledImage(center_crop(resize(img.pixels, crop_geometry(s)[0]), s), img.label, img.id)


def center_crop(big: np.ndarray, s: int) -> np.ndarray:
    """Central s x s window; an odd margin leaves the extra pixel on the far side."""
    off = (big.shape[-1] - s) // 2
    return np.ascontiguousarray(big[..., off:off + s, off:off + s])


def eval_images(ds: Dataset) -> np.ndarray:
    s = ds.image_size
    return center_crop(ds.resized(crop_geometry(s)[0]), s)


# ----------------------------------------------------------------------
# pair sampling
# ----------------------------------------------------------------------

def epoch_order(ds: Dataset, batch_size: int, seed: int, epoch: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Index pairs ``(first_half, partners)`` for every batch of one epoch."""
    if batch_size < 2 or batch_size % 2:
        raise ValueError(f"batch_size must be a positive even number, got {batch_size}")
    if len(ds) == 0:
        raise ValueError("cannot sample pairs from an empty dataset")
    half = batch_size // 2
    rng = np.random.default_rng([seed, epoch, 0])
    perm = rng.permutation(len(ds))
    members = ds.class_members()
    batches = []
    for start in range(0, len(perm), half):
        first = perm[start:start + half]
        partners = np.empty_like(first)
        for n, i in enumerate(first):
            pool = members[int(ds.labels[i])]
            if len(pool) > 1:
                pool = pool[pool != i]
            partners[n] = pool[rng.integers(len(pool))]
        batches.append((first, partners))
    return batches


def pair_batches(ds: Dataset, batch_size: int, seed: int, epoch: int = 0,
                 augment: bool = True) -> Iterator[PairBatch]:
    """One epoch of same-class paired batches.

    The first halves traverse a seeded permutation of the dataset; each
    partner is drawn from the same class (excluding the image itself unless it
    is alone in its class).  Training augmentation uses a second seeded stream.
    """
    instrument.count("pair_batches")
    s = ds.image_size
    big, span = crop_geometry(s)
    source = ds.resized(big) if augment else None
    aug_rng = np.random.default_rng([seed, epoch, 1])
    for first, partners in epoch_order(ds, batch_size, seed, epoch):
        idx = np.concatenate([first, partners])
        if augment:
            imgs = np.stack([_crop_flip(source[i], s, span, aug_rng) for i in idx])
        else:
            imgs = ds.images[idx]
        yield PairBatch(Tensor(imgs), ds.labels[idx], [ds.ids[i] for i in idx])
