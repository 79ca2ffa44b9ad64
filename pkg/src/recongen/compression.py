"""Stage 2: train a generator on the reconstruction loss, then fine-tune a
quantized (or distilled) copy of the classifier on its samples only."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, NumericError
from .quantizer import QuantScheme, build_quantized
from .reconstruction import capture_original_stats, reconstruction_loss, sample_latent
from .zoo.data import LabeledSet
from .zoo.models import get_spec
from .zoo.training import evaluate

log = logging.getLogger(__name__)

QUANTIZE, DISTILL = "quantize", "distill"


@dataclass
class GeneratorTrainConfig:
    steps: int = 300
    batch_size: int = 32
    lr: float = 1e-3
    betas: tuple[float, float] = (0.5, 0.999)
    beta: float = 0.1
    seed: int = 0


def train_generator(model: nn.Module, generator: nn.Module, cfg: GeneratorTrainConfig,
                    *, latent_dim: int, num_classes: int) -> nn.Module:
    """Minimize the reconstruction loss w.r.t. the generator weights only."""
    for p in model.parameters():
        p.requires_grad_(False)
    model.eval()
    if cfg.steps <= 0:
        return generator
    original = capture_original_stats(model)
    rng = torch.Generator().manual_seed(cfg.seed)
    params = list(generator.parameters())
    opt = torch.optim.Adam(params, lr=cfg.lr, betas=cfg.betas)
    generator.train()
    for step in range(cfg.steps):
        z, y = sample_latent(cfg.batch_size, latent_dim, num_classes, rng)
        terms = reconstruction_loss(model, generator(z, y), y, original, cfg.beta)
        total = terms.total.item()
        if not math.isfinite(total):
            raise NumericError(f"generator training diverged at step {step}: {terms.as_floats()}")
        opt.zero_grad()
        terms.total.backward(inputs=params)
        opt.step()
    return generator


def kd_loss(student_logits: torch.Tensor, teacher_logits: torch.Tensor, temperature: float = 1.0) -> torch.Tensor:
    """``T^2 * KL(softmax(teacher/T) || softmax(student/T))``, batch-averaged."""
    log_p = F.log_softmax(student_logits / temperature, dim=1)
    q = F.softmax(teacher_logits / temperature, dim=1)
    return F.kl_div(log_p, q, reduction="batchmean") * temperature**2


@dataclass
class CompressConfig:
    epochs: int = 5
    steps_per_epoch: int = 50
    batch_size: int = 64
    mode: str = QUANTIZE
    scheme: QuantScheme | None = None
    student: str | None = None
    kd_temperature: float = 1.0
    gamma: float = 1.0
    lr: float = 1e-3
    momentum: float = 0.9
    calib_batches: int = 4
    joint_generator: bool = False
    generator_lr: float = 1e-3
    beta: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.steps_per_epoch < 1:
            raise ConfigError("epochs and steps_per_epoch must be >= 1")
        if not self.kd_temperature > 0 or self.gamma < 0:
            raise ConfigError("kd_temperature must be > 0 and gamma >= 0")
        if self.mode == QUANTIZE:
            if self.scheme is None or self.student is not None:
                raise ConfigError("quantize mode needs a scheme and no student")
        elif self.mode == DISTILL:
            if self.scheme is not None or self.student is None:
                raise ConfigError("distill mode needs a student spec and no scheme")
        else:
            raise ConfigError(f"unknown mode {self.mode!r}")

    def describe(self) -> dict:
        d = asdict(self)
        d["scheme"] = self.scheme.notation if self.scheme else None
        return d


@dataclass
class CompressResult:
    model: nn.Module
    accuracy: list[float]
    ptq_accuracy: float | None
    config: dict
    wall_clock: float
    losses: list[float] = field(default_factory=list)

    @property
    def final_accuracy(self) -> float:
        return self.accuracy[-1]


def compression_loss(student_logits, teacher_logits, labels, cfg: CompressConfig) -> torch.Tensor:
    kd = kd_loss(student_logits, teacher_logits, cfg.kd_temperature)
    if cfg.mode == DISTILL:
        return cfg.gamma * kd
    return F.cross_entropy(student_logits, labels) + cfg.gamma * kd


def compress(model: nn.Module, generator: nn.Module, cfg: CompressConfig, eval_set: LabeledSet,
             *, latent_dim: int, num_classes: int) -> CompressResult:
    """Fine-tune a compressed copy of ``model`` on generated data only.

    ``eval_set`` is read solely for per-epoch accuracy reporting.
    """
    start = time.perf_counter()
    for p in model.parameters():
        p.requires_grad_(False)
    model.eval()
    if not cfg.joint_generator:
        for p in generator.parameters():
            p.requires_grad_(False)
    generator.eval()
    rng = torch.Generator().manual_seed(cfg.seed)
    torch.manual_seed(cfg.seed)

    def sample():
        z, y = sample_latent(cfg.batch_size, latent_dim, num_classes, rng)
        if cfg.joint_generator:
            return generator(z, y), y
        with torch.no_grad():
            return generator(z, y), y

    ptq = None
    if cfg.mode == QUANTIZE:
        calib = [sample()[0].detach() for _ in range(cfg.calib_batches)]
        student = build_quantized(model, cfg.scheme, calib)
        ptq = evaluate(student, eval_set)
    else:
        student = get_spec(cfg.student).build(eval_set.image_shape, num_classes)

    opt = torch.optim.SGD(student.parameters(), lr=cfg.lr, momentum=cfg.momentum, nesterov=True)
    g_opt = g_original = None
    if cfg.joint_generator:
        g_opt = torch.optim.Adam(generator.parameters(), lr=cfg.generator_lr, betas=(0.5, 0.999))
        g_original = capture_original_stats(model)

    accuracy, losses = [], []
    for epoch in range(cfg.epochs):
        student.train()
        for _ in range(cfg.steps_per_epoch):
            x, y = sample()
            if cfg.joint_generator:
                generator.train()
                terms = reconstruction_loss(model, x, y, g_original, cfg.beta)
                g_opt.zero_grad()
                terms.total.backward(inputs=list(generator.parameters()))
                g_opt.step()
                x = x.detach()
            with torch.no_grad():
                teacher = model(x)
            loss = compression_loss(student(x), teacher, y, cfg)
            if not math.isfinite(loss.item()):
                raise NumericError(f"compression loss diverged at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        accuracy.append(evaluate(student, eval_set))
        log.info("compress epoch %d acc %.4f", epoch, accuracy[-1])

    student.eval()
    return CompressResult(student, accuracy, ptq, cfg.describe(), time.perf_counter() - start, losses)
