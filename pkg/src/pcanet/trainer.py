"""Training and evaluation of the pair-based network.

One training step runs up to three classification streams over a paired
batch: the original features, their co-attention re-weighting, and the
features of attention-erased images.  Inference uses the original stream only.
"""

from __future__ import annotations

import json
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import instrument
from . import tensor as T
from .backbone import BackboneParams, extract_features, init_backbone
from .coattention import FeaturePair, coattend
from .config import RunConfig, TrainConfig
from .data import Dataset, PairBatch, eval_images, pair_batches
from .erase import erase_batch
from .errors import CheckpointError
from .head import (ClassCenters, StreamOutputs, bilinear_pool, classify,
                   total_loss, update_centers)
from .tensor import Tensor

__all__ = [
    "TrainConfig", "Model", "TrainState", "lr_at", "sgd_step", "train_step",
    "train_epoch", "fit", "evaluate", "predict", "save_checkpoint", "load_checkpoint",
    "init_state",
]


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Step-annealed learning rate: ``base_lr * anneal_factor ** (epoch // anneal_every)``.

    Rounded to 12 significant digits so decimal schedules come out as written
    (0.01 * 0.9 gives 0.009, not 0.009000000000000001).
    """
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return float(f"{cfg.base_lr * cfg.anneal_factor ** (epoch // cfg.anneal_every):.12g}")


def sgd_step(params: dict[str, Tensor], grads: dict[str, np.ndarray | None],
             buffers: dict[str, np.ndarray], lr: float, momentum: float, weight_decay: float) -> None:
    """In-place SGD with momentum and L2 weight decay.

    ``g' = grad + wd * p``, ``buf = momentum * buf + g'``, ``p -= lr * buf``.
    A missing gradient counts as zero.
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.shape:
            raise T.DimensionError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        dt = p.data.dtype.type
        g = g + dt(weight_decay) * p.data
        buf = buffers.get(name)
        buf = g if buf is None else dt(momentum) * buf + g
        buffers[name] = buf
        p.data -= dt(lr) * buf


class Model:
    """Backbone plus linear classifier(s) over bilinear features."""

    def __init__(self, cfg: RunConfig, num_classes: int, seed: int | None = None):
        seed = cfg.train.seed if seed is None else seed
        self.cfg = cfg
        self.num_classes = num_classes
        self.backbone: BackboneParams = init_backbone(cfg.backbone, seed)
        dim = cfg.backbone.channels ** 2
        rng = np.random.default_rng([seed, 1])
        self.classifier: dict[str, Tensor] = {}
        for stream in ("",) if cfg.train.shared_classifier else ("o", "w", "e"):
            prefix = "classifier" if not stream else f"classifier_{stream}"
            w = rng.standard_normal((num_classes, dim)) * math.sqrt(1.0 / dim)
            self.classifier[f"{prefix}.weight"] = Tensor(w, requires_grad=True)
            self.classifier[f"{prefix}.bias"] = Tensor(np.zeros(num_classes), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        return {**self.backbone, **self.classifier}

    def features(self, images: Tensor) -> Tensor:
        return extract_features(self.backbone, images)

    def head(self, f: Tensor, stream: str = "o") -> tuple[Tensor, Tensor]:
        """Bilinear vector and logits of feature maps ``f`` for one stream."""
        v = bilinear_pool(f, normalize=self.cfg.train.bilinear_normalize)
        prefix = "classifier" if self.cfg.train.shared_classifier else f"classifier_{stream}"
        return v, classify(v, self.classifier[f"{prefix}.weight"], self.classifier[f"{prefix}.bias"])


@dataclass
class TrainState:
    model: Model
    centers: ClassCenters
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    epoch: int = 0
    step: int = 0
    class_names: list[str] = field(default_factory=list)

    @property
    def cfg(self) -> RunConfig:
        return self.model.cfg


def init_state(cfg: RunConfig, num_classes: int, class_names=None) -> TrainState:
    with T.precision(cfg.train.precision):
        model = Model(cfg, num_classes)
        centers = ClassCenters.zeros(num_classes, cfg.backbone.channels ** 2,
                                     cfg.train.alpha, cfg.train.lam, dtype=T.get_dtype())
    names = list(class_names) if class_names is not None else [str(k) for k in range(num_classes)]
    return TrainState(model, centers, class_names=names)


def forward_streams(state: TrainState, batch: PairBatch) -> StreamOutputs:
    """Run every enabled stream over a paired batch."""
    tc = state.cfg.train
    model = state.model
    images = batch.images
    half = len(batch.labels) // 2
    f_o = model.features(images)
    v_o, logits_o = model.head(f_o, "o")
    out = StreamOutputs(logits_o, v_o, extras={"f_o": f_o})
    attention_source = f_o
    if tc.enable_ca:
        instrument.count("pairing")
        pair = FeaturePair(f_o[:half], f_o[half:])
        fw1, fw2, weights = coattend(pair, transpose_for_second=tc.transpose_w_second)
        f_w = T.concat([fw1, fw2], axis=0)
        out.feat_w, out.logits_w = model.head(f_w, "w")
        out.extras.update(f_w=f_w, weights=weights)
        attention_source = f_w
    if tc.enable_ae:
        erased, fractions = erase_batch(images, attention_source.data, tc.theta, tc.attention_reduce)
        f_e = model.features(erased)
        out.feat_e, out.logits_e = model.head(f_e, "e")
        out.extras.update(f_e=f_e, erased=erased, erased_fraction=float(fractions.mean()))
    return out


def train_step(batch: PairBatch, state: TrainState, lr: float | None = None) -> dict:
    """Forward all enabled streams, backpropagate, update parameters and centres."""
    tc = state.cfg.train
    lr = lr_at(state.epoch, tc) if lr is None else lr
    with T.precision(tc.precision):
        streams = forward_streams(state, batch)
        lam = tc.lam if tc.enable_center else 0.0
        parts: dict[str, float] = {}
        loss = total_loss(streams, batch.labels, state.centers, lam=lam, parts=parts)
        params = state.model.parameters()
        for p in params.values():
            p.zero_grad()
        T.backward(loss)
        sgd_step(params, {k: p.grad for k, p in params.items()}, state.buffers,
                 lr, tc.momentum, tc.weight_decay)
        if tc.enable_center:
            feats = np.concatenate([f.data for _, _, f in streams.streams()])
            labels = np.tile(batch.labels, len(feats) // len(batch.labels))
            update_centers(state.centers, feats, labels)
    state.step += 1
    acc = float((streams.logits_o.data.argmax(axis=1) == batch.labels).mean())
    return {
        "loss_total": loss.item(),
        "loss_ce_o": parts.get("ce_o", 0.0),
        "loss_ce_w": parts.get("ce_w", 0.0),
        "loss_ce_e": parts.get("ce_e", 0.0),
        "loss_center": parts.get("center", 0.0),
        "acc_train": acc,
        "streams": sum(1 for _ in streams.streams()),
    }


def predict(state: TrainState, images: np.ndarray, chunk: int = 64) -> np.ndarray:
    """Logits of the original-image stream for already-transformed images."""
    tc = state.cfg.train
    out = []
    with T.precision(tc.precision), T.no_grad():
        for start in range(0, len(images), chunk):
            x = Tensor(images[start:start + chunk])
            _, logits = state.model.head(state.model.features(x), "o")
            out.append(logits.data)
    return np.concatenate(out) if out else np.zeros((0, state.model.num_classes))


def evaluate(ds: Dataset, state: TrainState) -> float:
    """Top-1 accuracy with centre-crop inputs and the original stream only."""
    if len(ds) == 0:
        return float("nan")
    logits = predict(state, eval_images(ds))
    return float((logits.argmax(axis=1) == ds.labels).mean())


def train_epoch(state: TrainState, train: Dataset, on_step: Callable[[dict], None] | None = None) -> dict:
    tc = state.cfg.train
    lr = lr_at(state.epoch, tc)
    totals: dict[str, float] = {}
    n = 0
    for batch in pair_batches(train, tc.batch_size, tc.seed, state.epoch):
        m = train_step(batch, state, lr)
        m.pop("streams")
        n += 1
        for k, v in m.items():
            totals[k] = totals.get(k, 0.0) + v
        if on_step is not None:
            on_step({"epoch": state.epoch, "step": state.step, "lr": lr, **m})
    state.epoch += 1
    return {"epoch": state.epoch - 1, "lr": lr, **{k: v / max(n, 1) for k, v in totals.items()}}


def fit(state: TrainState, train: Dataset, test: Dataset | None = None,
        out_dir: str | Path | None = None, log_steps: bool = True,
        progress: Callable[[dict], None] | None = None) -> list[dict]:
    """Train until ``cfg.epochs`` epochs are complete.

    With ``out_dir`` every step and epoch record is appended to
    ``metrics.jsonl`` and ``checkpoint.pcan`` is rewritten after each epoch.
    """
    history = []
    metrics_file = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_file = open(out_dir / "metrics.jsonl", "a" if state.epoch else "w")

    def write(rec):
        if metrics_file is not None:
            metrics_file.write(json.dumps(rec, sort_keys=True) + "\n")

    try:
        while state.epoch < state.cfg.train.epochs:
            t0 = time.perf_counter()
            rec = train_epoch(state, train, on_step=(lambda r: write({"kind": "step", **r, "acc_test": None}))
                              if log_steps else None)
            rec["acc_test"] = evaluate(test, state) if test is not None and len(test) else None
            rec["step"] = state.step
            rec["kind"] = "epoch"
            write(rec)
            history.append({**rec, "seconds": time.perf_counter() - t0})
            if progress is not None:
                progress(history[-1])
            if out_dir is not None:
                metrics_file.flush()
                save_checkpoint(state, out_dir / "checkpoint.pcan")
    finally:
        if metrics_file is not None:
            metrics_file.close()
    return history


# ----------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------

MAGIC = b"PCAN"
FORMAT_VERSION = 1


def _tensor_table(state: TrainState) -> dict[str, np.ndarray]:
    table = {name: p.data for name, p in state.model.parameters().items()}
    table["centers"] = state.centers.centers
    for name, buf in state.buffers.items():
        table[f"momentum/{name}"] = buf
    return table


def save_checkpoint(state: TrainState, path: str | Path) -> None:
    """Write ``MAGIC | u32 version | u32 header length | JSON header | raw little-endian floats``."""
    entries, blobs, offset = [], [], 0
    for name, arr in _tensor_table(state).items():
        dtype = "<f8" if arr.dtype == np.float64 else "<f4"
        raw = np.ascontiguousarray(arr, dtype=dtype).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dtype, "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "config": state.cfg.to_dict(),
        "num_classes": state.model.num_classes,
        "class_names": state.class_names,
        "epoch": state.epoch,
        "step": state.step,
        "rng": {"seed": state.cfg.train.seed, "next_epoch": state.epoch},
        "tensors": entries,
        "data_bytes": offset,
    }
    hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", FORMAT_VERSION, len(hdr)) + hdr)
        for b in blobs:
            fh.write(b)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> TrainState:
    path = Path(path)
    buf = path.read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}, not a checkpoint")
    if len(buf) < 12:
        raise CheckpointError(f"{path}: truncated header")
    version, hlen = struct.unpack("<II", buf[4:12])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    if len(buf) < 12 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(buf[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    body = buf[12 + hlen:]
    if len(body) != header["data_bytes"]:
        raise CheckpointError(f"{path}: truncated data, {len(body)} of {header['data_bytes']} bytes")

    cfg = RunConfig.from_dict(header["config"])
    state = init_state(cfg, header["num_classes"], header["class_names"])
    state.epoch = header["epoch"]
    state.step = header["step"]
    params = state.model.parameters()
    for e in header["tensors"]:
        count = int(np.prod(e["shape"]))
        arr = np.frombuffer(body, dtype=e["dtype"], count=count, offset=e["offset"]).reshape(e["shape"])
        arr = arr.astype(arr.dtype.newbyteorder("="))
        name = e["name"]
        if name == "centers":
            state.centers.centers = arr
        elif name.startswith("momentum/"):
            state.buffers[name.split("/", 1)[1]] = arr
        elif name in params:
            params[name].data = arr
        else:
            raise CheckpointError(f"{path}: unknown tensor {name!r}")
    return state
