from __future__ import annotations

import logging
import math
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .. import audit
from ..errors import InputError, PretrainingFailure, UpstreamMissingError
from .data import LabeledSet, load_dataset
from .models import FULL_MNIST_FLOOR, ZooModelSpec, get_spec

log = logging.getLogger(__name__)


@torch.no_grad()
def evaluate(model: nn.Module, eval_set: LabeledSet, batch_size: int = 500) -> float:
    """Top-1 accuracy in [0, 1]."""
    if len(eval_set) == 0:
        raise InputError("evaluation set is empty")
    was_training = model.training
    model.eval()
    correct = 0
    with audit.allowed("eval"):
        for x, y in eval_set.batches(batch_size):
            correct += int((model(x).argmax(dim=1) == y).sum())
    model.train(was_training)
    return correct / len(eval_set)


def pretrain(spec: ZooModelSpec | str, data_dir=None, seed: int = 0, *, source: str = "auto",
             download: bool = False, epochs: int | None = None, batch_size: int = 64,
             lr: float = 1e-3, image_size: int | None = None):
    """Train a zoo classifier on real data; return ``(model, metadata)``."""
    if isinstance(spec, str):
        spec = get_spec(spec)
    if image_size is None:
        image_size = 16 if spec.dataset == "mnist_like" else 32
    train, test = load_dataset(spec.dataset, data_dir, source=source, download=download, image_size=image_size)
    floor = spec.accuracy_floor
    if spec.dataset == "mnist_like" and len(train) >= 50000 and image_size == 32:
        floor = FULL_MNIST_FLOOR

    torch.manual_seed(seed)
    model = spec.build(train.image_shape, num_classes=10)
    epochs = epochs or spec.max_epochs
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    steps_per_epoch = math.ceil(len(train) / batch_size)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=epochs * steps_per_epoch)
    shuffle = torch.Generator().manual_seed(seed)

    trajectory = []
    for epoch in range(epochs):
        model.train()
        with audit.allowed("pretrain"):
            for x, y in train.batches(batch_size, shuffle=True, generator=shuffle):
                loss = F.cross_entropy(model(x), y)
                opt.zero_grad()
                loss.backward()
                opt.step()
                sched.step()
        acc = evaluate(model, test)
        trajectory.append(acc)
        log.info("pretrain %s epoch %d acc %.4f", spec.name, epoch, acc)

    model.eval()
    if trajectory[-1] < floor:
        raise PretrainingFailure(f"{spec.name} reached {trajectory[-1]:.4f} < floor {floor}", trajectory)
    meta = {
        "spec": spec.name,
        "dataset": spec.dataset,
        "seed": seed,
        "accuracy": trajectory[-1],
        "epoch": epochs,
        "image_shape": list(train.image_shape),
        "num_classes": 10,
        "trajectory": trajectory,
    }
    return model, meta


def freeze(model: nn.Module) -> nn.Module:
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


def save_checkpoint(model: nn.Module, meta: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"state_dict": model.state_dict(), "meta": dict(meta)}, path)
    return path


def load_checkpoint(path) -> tuple[nn.Module, dict]:
    path = Path(path)
    if not path.exists():
        raise UpstreamMissingError(f"checkpoint {path} not found (run the 'pretrain' subcommand first)")
    blob = torch.load(path, map_location="cpu", weights_only=False)
    meta = blob["meta"]
    model = get_spec(meta["spec"]).build(tuple(meta["image_shape"]), meta["num_classes"])
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model, meta
