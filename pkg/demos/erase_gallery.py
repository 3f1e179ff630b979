"""Attention erase on real synthetic images, written out as a PPM strip.

For each image we take the backbone features of an untrained model, pick
the channel with the largest average response, upsample it to image size,
and zero every pixel whose normalised attention exceeds theta.  The strip
shows the original and the erased versions for a few thresholds.

    python3 demos/erase_gallery.py [out.ppm]
"""

import sys

import numpy as np

from pcanet.config import RunConfig
from pcanet.data import eval_images, generate_synthetic, write_image
from pcanet.erase import attention_map, drop_mask, erase
from pcanet.tensor import Tensor
from pcanet.trainer import init_state

out = sys.argv[1] if len(sys.argv) > 1 else "erase_gallery.ppm"
thetas = (0.3, 0.5, 0.7, 0.9)

cfg = RunConfig().updated({"images_per_class": 2, "test_images_per_class": 1})
_, test = generate_synthetic(cfg.data, seed=0)
state = init_state(cfg, test.num_classes)
images = eval_images(test)[:4]
feats = state.model.features(Tensor(images)).data

rows = []
for img, f in zip(images, feats):
    amap = attention_map(f, img.shape[-1])
    tiles = [img]
    for theta in thetas:
        mask = drop_mask(amap, theta)
        tiles.append(erase(img, mask).data)
        print(f"channel {amap.source_channel}  theta {theta}: {mask.erased_fraction:6.1%} erased")
    rows.append(np.concatenate(tiles, axis=2))
write_image(out, np.concatenate(rows, axis=1))
print("wrote", out)
