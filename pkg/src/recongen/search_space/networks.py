"""Stochastic supernet over the macro DAG and the discrete generators derived from it."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import StructuralError
from .derived import DerivedArch, scaled_channels
from .macro import CROSS, UP, MacroArchitecture, OperationSpec
from .sampling import ArchParams, edge_probabilities, gumbel_mix_weights, sample_gumbel

MODES = ("sampled", "expected")


def generator_bn(channels: int) -> nn.BatchNorm2d:
    # Generators always normalize with batch statistics, so train/eval behave alike.
    return nn.BatchNorm2d(channels, track_running_stats=False)


class ConvOp(nn.Sequential):
    def __init__(self, channels: int, kernel: int, dilation: int):
        pad = dilation * (kernel - 1) // 2
        super().__init__(
            nn.Conv2d(channels, channels, kernel, padding=pad, dilation=dilation, bias=False),
            generator_bn(channels),
            nn.LeakyReLU(0.2),
        )


class Interpolate(nn.Module):
    def __init__(self, mode: str, scale: int = 2):
        super().__init__()
        self.mode = mode
        self.scale = scale

    def forward(self, x):
        if self.mode == "nearest":
            return F.interpolate(x, scale_factor=self.scale, mode="nearest")
        return F.interpolate(x, scale_factor=self.scale, mode="bilinear", align_corners=False)


class Zero(nn.Module):
    """The ``none`` candidate: zeros shaped like the destination node."""

    def __init__(self, scale: int = 1):
        super().__init__()
        self.scale = scale

    def forward(self, x):
        b, c, h, w = x.shape
        return x.new_zeros(b, c, h * self.scale, w * self.scale)


def make_op(spec: OperationSpec, channels: int, edge_kind: str) -> nn.Module:
    scale = 2 if edge_kind in (UP, CROSS) else 1
    if spec.is_conv:
        return ConvOp(channels, spec.kernel, spec.dilation)
    if spec.name == "identity":
        return nn.Identity()
    if spec.name == "none":
        return Zero(scale)
    if spec.name == "nn-interp":
        return Interpolate("nearest", scale)
    if spec.name == "bilinear-interp":
        return Interpolate("bilinear", scale)
    raise StructuralError(f"unknown operation {spec.name!r}")


class Stem(nn.Module):
    """Label embedding concatenated to z, projected to the initial feature map."""

    def __init__(self, latent_dim: int, num_classes: int, embed_dim: int, channels: int, resolution):
        super().__init__()
        self.channels = channels
        self.resolution = tuple(resolution)
        h, w = self.resolution
        self.embed = nn.Embedding(num_classes, embed_dim)
        self.fc = nn.Linear(latent_dim + embed_dim, channels * h * w)
        self.bn = generator_bn(channels)

    def forward(self, z, y):
        h, w = self.resolution
        x = self.fc(torch.cat([z, self.embed(y)], dim=1))
        return self.bn(x.view(z.shape[0], self.channels, h, w))


class Head(nn.Module):
    def __init__(self, channels: int, image_channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, image_channels, 3, padding=1)

    def forward(self, x):
        return torch.tanh(self.conv(x))


def _check_inputs(macro: MacroArchitecture, z, y):
    if z.dim() != 2 or z.shape[1] != macro.latent_dim:
        raise StructuralError(f"z must be (B, {macro.latent_dim}), got {tuple(z.shape)}")
    if y.shape != (z.shape[0],):
        raise StructuralError(f"y must be ({z.shape[0]},), got {tuple(y.shape)}")


class Supernet(nn.Module):
    """Every edge holds all of its candidate operations at once."""

    def __init__(self, macro: MacroArchitecture, channel_scale: float = 1.0):
        super().__init__()
        self.macro = macro
        self.channel_scale = channel_scale
        c = scaled_channels(macro.base_channels, channel_scale) if channel_scale != 1.0 else macro.base_channels
        self.channels = c
        self.stem = Stem(macro.latent_dim, macro.num_classes, macro.embed_dim, c, macro.stem_resolution)
        self.edge_ops = nn.ModuleList(
            nn.ModuleList(make_op(op, c, e.kind) for op in e.candidates) for e in macro.edges
        )
        self.head = Head(c, macro.image_shape[0])

    def mix_weights(self, arch: ArchParams, mode: str = "sampled", *, generator=None,
                    gumbel_on_log_probs: bool = False) -> list[torch.Tensor]:
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        probs = [edge_probabilities(a) for a in arch.alpha]
        if mode == "expected":
            return probs
        return [
            gumbel_mix_weights(p, sample_gumbel(p.shape, generator=generator, dtype=p.dtype), arch.tau,
                               gumbel_on_log_probs=gumbel_on_log_probs)
            for p in probs
        ]

    def forward(self, z, y, arch: ArchParams | None = None, mode: str = "sampled", *,
                mix: list[torch.Tensor] | None = None, generator: torch.Generator | None = None,
                gumbel_on_log_probs: bool = False):
        _check_inputs(self.macro, z, y)
        if mix is None:
            if arch is None:
                raise ValueError("either arch or mix is required")
            arch.validate(self.macro)
            mix = self.mix_weights(arch, mode, generator=generator, gumbel_on_log_probs=gumbel_on_log_probs)
        if len(mix) != self.macro.num_edges:
            raise StructuralError(f"expected {self.macro.num_edges} mix vectors, got {len(mix)}")

        values = {self.macro.nodes[0].id: self.stem(z, y)}
        for node in self.macro.nodes[1:]:
            total = None
            for edge in self.macro.incoming(node.id):
                x = values[edge.src]
                m = mix[edge.id]
                for j, (spec, op) in enumerate(zip(edge.candidates, self.edge_ops[edge.id])):
                    if spec.is_none:
                        continue  # contributes m_j * 0
                    out = m[j] * op(x)
                    total = out if total is None else total + out
            if total is None:
                b = z.shape[0]
                total = z.new_zeros(b, self.channels, *node.resolution)
            values[node.id] = total
        return self.head(values[self.macro.output_node])

    def extract(self, derived: DerivedArch) -> "DerivedGenerator":
        """Discrete generator that shares this supernet's modules."""
        derived.validate(self.macro)
        if derived.channel_scale != self.channel_scale:
            raise StructuralError("cannot share weights across channel scales")
        ops = {e.id: self.edge_ops[e.id][derived.choices[e.id]] for e in self.macro.edges}
        return DerivedGenerator(self.macro, derived, self.stem, ops, self.head)


class DerivedGenerator(nn.Module):
    """Generator with exactly one operation per edge."""

    def __init__(self, macro: MacroArchitecture, derived: DerivedArch, stem: Stem,
                 ops: dict[int, nn.Module], head: Head):
        super().__init__()
        derived.validate(macro)
        self.macro = macro
        self.derived = derived
        self.channels = stem.channels
        self.stem = stem
        self.edge_ops = nn.ModuleDict({str(k): v for k, v in ops.items()})
        self.head = head

    def forward(self, z, y):
        _check_inputs(self.macro, z, y)
        values = {self.macro.nodes[0].id: self.stem(z, y)}
        for node in self.macro.nodes[1:]:
            total = None
            for edge in self.macro.incoming(node.id):
                if edge.candidates[self.derived.choices[edge.id]].is_none:
                    continue
                out = self.edge_ops[str(edge.id)](values[edge.src])
                total = out if total is None else total + out
            if total is None:
                total = z.new_zeros(z.shape[0], self.channels, *node.resolution)
            values[node.id] = total
        return self.head(values[self.macro.output_node])


def instantiate_derived(macro: MacroArchitecture, derived: DerivedArch) -> DerivedGenerator:
    """Fresh, randomly initialized generator for a discrete architecture."""
    derived.validate(macro)
    c = macro.base_channels if derived.channel_scale == 1.0 else scaled_channels(macro.base_channels, derived.channel_scale)
    stem = Stem(macro.latent_dim, macro.num_classes, macro.embed_dim, c, macro.stem_resolution)
    ops = {e.id: make_op(e.candidates[derived.choices[e.id]], c, e.kind) for e in macro.edges}
    return DerivedGenerator(macro, derived, stem, ops, Head(c, macro.image_shape[0]))


def count_parameters(module: nn.Module, *, conv_only: bool = False) -> int:
    if not conv_only:
        return sum(p.numel() for p in module.parameters())
    return sum(m.weight.numel() for m in module.modules() if isinstance(m, nn.Conv2d))
