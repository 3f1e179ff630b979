"""Small convolutional feature extractor standing in for a ResNet trunk.

Each stage is conv (same padding) -> relu -> 2x2 max pool.  No batch
normalisation, so every sample's features depend on that sample alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import Tensor


@dataclass
class BackboneConfig:
    input_size: int = 64
    stage_channels: tuple[int, ...] = (16, 32, 64)
    kernel_size: int = 3
    pool: str = "max"

    def __post_init__(self):
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        self.validate()

    def validate(self) -> None:
        if not self.stage_channels or any(c < 1 for c in self.stage_channels):
            raise ConfigError(f"stage_channels must be positive ints, got {self.stage_channels}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if self.pool != "max":
            raise ConfigError(f"only max pooling is supported, got {self.pool!r}")
        side = self.input_size // 2 ** len(self.stage_channels)
        if self.input_size % 2 ** len(self.stage_channels) or side < 2:
            raise ConfigError(
                f"input_size {self.input_size} with {len(self.stage_channels)} stages "
                f"leaves a {self.input_size / 2 ** len(self.stage_channels):g}-pixel map; need an integer >= 2")

    @property
    def channels(self) -> int:
        return self.stage_channels[-1]

    @property
    def feature_shape(self) -> tuple[int, int, int]:
        side = self.input_size // 2 ** len(self.stage_channels)
        return (self.channels, side, side)


class BackboneParams(dict):
    """Name -> Tensor table that remembers the config it was built for."""

    def __init__(self, config: BackboneConfig, items=()):
        super().__init__(items)
        self.config = config


def init_backbone(config: BackboneConfig, seed: int) -> BackboneParams:
    """Kaiming-normal kernels (std sqrt(2 / fan_in)) and zero biases."""
    config.validate()
    rng = np.random.default_rng(seed)
    params = BackboneParams(config)
    c_in = 3
    k = config.kernel_size
    for i, c_out in enumerate(config.stage_channels):
        fan_in = c_in * k * k
        w = rng.standard_normal((c_out, c_in, k, k)) * np.sqrt(2.0 / fan_in)
        params[f"stage{i}.weight"] = Tensor(w, requires_grad=True)
        params[f"stage{i}.bias"] = Tensor(np.zeros(c_out), requires_grad=True)
        c_in = c_out
    return params


def extract_features(params: BackboneParams, images: Tensor) -> Tensor:
    """Map images (b, 3, s, s) to feature maps (b, c, h, w)."""
    cfg = params.config
    if images.ndim != 4 or images.shape[1] != 3 or images.shape[2:] != (cfg.input_size, cfg.input_size):
        raise T.DimensionError(
            f"backbone expects (b, 3, {cfg.input_size}, {cfg.input_size}) images, got {images.shape}")
    h = images
    pad = cfg.kernel_size // 2
    for i in range(len(cfg.stage_channels)):
        h = T.conv2d(h, params[f"stage{i}.weight"], 1, pad, bias=params[f"stage{i}.bias"])
        # relu commutes with max pooling (values and gradients); pooling first is cheaper
        h = T.relu(T.maxpool2d(h, 2))
    return h
