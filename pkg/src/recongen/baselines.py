"""Reference generators for controlled comparisons.

The human-designed generator follows the ACGAN-style layout used by
generator-based data-free quantization: FC stem to a quarter-resolution map,
two (upsample, 3x3 conv, BN, leaky-ReLU) blocks, a 3x3 conv head and tanh.
Layer sizes are pinned here as the baseline contract.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ConfigError
from .search_space.derived import DerivedArch, sample_random_arch, scaled_channels
from .search_space.macro import MacroArchitecture
from .search_space.networks import generator_bn

HUMAN, RANDOM, SEARCHED = "human", "random", "searched"


@dataclass(frozen=True)
class BaselineSpec:
    kind: str
    base_channels: int
    seed: int = 0


class HumanGenerator(nn.Module):
    def __init__(self, image_shape, base_channels: int, latent_dim: int, num_classes: int,
                 *, embed_dim: int | None = None, channel_scale: float = 1.0):
        super().__init__()
        c_img, h, w = image_shape
        if h % 4 or w % 4:
            raise ConfigError(f"image size {h}x{w} is not divisible by 4")
        c = base_channels if channel_scale == 1.0 else scaled_channels(base_channels, channel_scale)
        embed_dim = embed_dim if embed_dim is not None else num_classes
        self.latent_dim = latent_dim
        self.channels = c
        self.init_size = (h // 4, w // 4)
        self.embed = nn.Embedding(num_classes, embed_dim)
        self.fc = nn.Linear(latent_dim + embed_dim, c * self.init_size[0] * self.init_size[1])
        self.bn0 = generator_bn(c)
        self.blocks = nn.Sequential(
            nn.Upsample(scale_factor=2), nn.Conv2d(c, c, 3, padding=1), generator_bn(c), nn.LeakyReLU(0.2),
            nn.Upsample(scale_factor=2), nn.Conv2d(c, c, 3, padding=1), generator_bn(c), nn.LeakyReLU(0.2),
        )
        self.head = nn.Conv2d(c, c_img, 3, padding=1)

    def forward(self, z, y):
        x = self.fc(torch.cat([z, self.embed(y)], dim=1))
        x = self.bn0(x.view(z.shape[0], self.channels, *self.init_size))
        return torch.tanh(self.head(self.blocks(x)))


def build_human_generator(image_shape, base_channels: int, latent_dim: int, num_classes: int,
                          **kwargs) -> HumanGenerator:
    return HumanGenerator(image_shape, base_channels, latent_dim, num_classes, **kwargs)


def random_baseline(macro: MacroArchitecture, seed: int) -> DerivedArch:
    return sample_random_arch(macro, seed)
