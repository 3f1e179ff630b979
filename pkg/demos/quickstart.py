"""Train a small model on the synthetic glyph set and score it.

The default run (8 classes, 64x64 images, 30 epochs) takes several minutes
on one core.  This demo shrinks everything so it finishes in seconds
while still going through the full training path: paired batches,
co-attention, attention erase and the centre loss.

    python3 demos/quickstart.py [out_dir]
"""

import sys
from pathlib import Path

from pcanet.config import RunConfig
from pcanet.data import generate_synthetic
from pcanet.trainer import evaluate, fit, init_state, load_checkpoint

out = Path(sys.argv[1] if len(sys.argv) > 1 else "quickstart-run")

cfg = RunConfig().updated({
    "num_classes": 4, "images_per_class": 40, "test_images_per_class": 20,
    "image_size": 32, "glyph_size": 8, "distractors": 2,
    "input_size": 32, "stage_channels": [8, 16], "epochs": 6,
})
train, test = generate_synthetic(cfg.data, seed=0)
print(f"{len(train)} training and {len(test)} test images, classes: {', '.join(train.class_names)}")

state = init_state(cfg, train.num_classes, train.class_names)
print(f"untrained accuracy {evaluate(test, state):.3f}")


def show(rec):
    if rec["kind"] == "epoch":
        print(f"epoch {rec['epoch']:2d}  lr {rec['lr']:.4f}  loss {rec['loss_total']:.3f}  "
              f"train {rec['acc_train']:.3f}  test {rec['acc_test']:.3f}")


fit(state, train, test, out_dir=out, progress=show)

# the checkpoint holds everything needed to continue or to evaluate later
restored = load_checkpoint(out / "checkpoint.pcan")
print(f"reloaded checkpoint from epoch {restored.epoch}: accuracy {evaluate(test, restored):.3f}")
