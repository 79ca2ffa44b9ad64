"""Reconstruction loss: cross-entropy through the frozen classifier plus
distance between generated-batch BN statistics and the stored ones."""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import AlignmentError, InputError, UnsupportedModelError
from .zoo.models import bn_layers


@dataclass
class LayerStats:
    layer: str
    mean: torch.Tensor
    var: torch.Tensor


@dataclass
class BNStatsSnapshot:
    layers: list[LayerStats]

    def __len__(self):
        return len(self.layers)

    def layer_ids(self) -> list[str]:
        return [s.layer for s in self.layers]


@dataclass
class ReconBatch:
    x: torch.Tensor
    y: torch.Tensor


@dataclass
class ReconLossTerms:
    l_class: torch.Tensor
    l_bns: torch.Tensor
    beta: float

    @property
    def total(self) -> torch.Tensor:
        return self.l_class + self.beta * self.l_bns

    def as_floats(self) -> dict[str, float]:
        return {"l_class": self.l_class.item(), "l_bns": self.l_bns.item(), "total": self.total.item()}


def capture_original_stats(model: nn.Module) -> BNStatsSnapshot:
    """Snapshot of the stored running statistics, in module traversal order."""
    layers = bn_layers(model)
    if not layers:
        raise UnsupportedModelError("model has no batch-normalization layers")
    out = []
    for name, bn in layers:
        if bn.running_mean is None:
            raise UnsupportedModelError(f"BN layer {name!r} keeps no running statistics")
        out.append(LayerStats(name, bn.running_mean.detach().clone(), bn.running_var.detach().clone()))
    return BNStatsSnapshot(out)


@contextmanager
def _recording(model: nn.Module):
    """Record per-channel mean and biased variance of every BN input."""
    records: list[LayerStats] = []
    handles = []

    def hook_for(name):
        def hook(module, inputs, output):
            x = inputs[0]
            dims = [0] + list(range(2, x.dim()))
            records.append(LayerStats(name, x.mean(dim=dims), x.var(dim=dims, unbiased=False)))
        return hook

    for name, bn in bn_layers(model):
        handles.append(bn.register_forward_hook(hook_for(name)))
    was_training = model.training
    model.eval()
    try:
        yield records
    finally:
        for h in handles:
            h.remove()
        model.train(was_training)


def forward_with_stats(model: nn.Module, x: torch.Tensor) -> tuple[torch.Tensor, BNStatsSnapshot]:
    if x.shape[0] < 2:
        raise InputError("batch statistics need a batch of at least 2")
    with _recording(model) as records:
        logits = model(x)
    return logits, BNStatsSnapshot(records)


def batch_stats(model: nn.Module, x: torch.Tensor) -> BNStatsSnapshot:
    return forward_with_stats(model, x)[1]


def bns_loss(r: BNStatsSnapshot, o: BNStatsSnapshot) -> torch.Tensor:
    """Layer mean of channel-averaged squared errors of means and variances."""
    if r.layer_ids() != o.layer_ids():
        raise AlignmentError(f"BN layers differ: {r.layer_ids()} vs {o.layer_ids()}")
    terms = []
    for a, b in zip(r.layers, o.layers):
        if a.mean.shape != b.mean.shape:
            raise AlignmentError(f"layer {a.layer}: {tuple(a.mean.shape)} vs {tuple(b.mean.shape)}")
        terms.append(((a.mean - b.mean) ** 2).mean() + ((a.var - b.var) ** 2).mean())
    return torch.stack(terms).mean()


def reconstruction_loss(model: nn.Module, x_r: torch.Tensor, y_o: torch.Tensor,
                        original: BNStatsSnapshot, beta: float = 0.1) -> ReconLossTerms:
    logits, stats = forward_with_stats(model, x_r)
    return ReconLossTerms(F.cross_entropy(logits, y_o), bns_loss(stats, original), beta)


def sample_latent(batch_size: int, latent_dim: int, num_classes: int, generator: torch.Generator | None = None):
    """Standard-normal noise and uniformly drawn labels."""
    z = torch.randn(batch_size, latent_dim, generator=generator)
    y = torch.randint(0, num_classes, (batch_size,), generator=generator)
    return z, y


def generate(generator_net: nn.Module, batch_size: int, latent_dim: int, num_classes: int,
             rng: torch.Generator | None = None) -> ReconBatch:
    z, y = sample_latent(batch_size, latent_dim, num_classes, rng)
    return ReconBatch(generator_net(z, y), y)
