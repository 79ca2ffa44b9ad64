"""Bilevel generator search: alternate supernet-weight steps on generated
training batches with architecture steps on fresh generated validation
batches, annealing the Gumbel temperature per epoch."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
import torch.nn as nn

from .errors import ConfigError, NumericError
from .reconstruction import BNStatsSnapshot, capture_original_stats, reconstruction_loss, sample_latent
from .search_space.derived import DerivedArch, derive
from .search_space.macro import MacroArchitecture
from .search_space.networks import Supernet
from .search_space.sampling import ArchParams

log = logging.getLogger(__name__)

# Validation noise is drawn from its own stream so that switching architecture
# steps on or off leaves the weight-step noise sequence untouched.
VAL_STREAM_OFFSET = 1_000_003


@dataclass
class SearchConfig:
    epochs: int = 10
    weight_steps: int = 10
    arch_steps: int = 5
    batch_size: int = 32
    weight_lr: float = 1e-3
    weight_betas: tuple[float, float] = (0.5, 0.999)
    arch_lr: float = 3e-4
    arch_weight_decay: float = 1e-3
    tau_start: float = 5.0
    tau_end: float = 0.5
    beta: float = 0.1
    seed: int = 0
    gumbel_on_log_probs: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.weight_steps < 0 or self.arch_steps < 0 or self.batch_size < 2:
            raise ConfigError("epochs >= 1, steps >= 0 and batch_size >= 2 are required")
        if not self.tau_start >= self.tau_end > 0:
            raise ConfigError("need tau_start >= tau_end > 0")


@dataclass
class SearchState:
    supernet: Supernet
    arch: ArchParams
    epoch: int = 0
    tau: float = 1.0
    telemetry: list[dict] = field(default_factory=list)


def anneal_tau(epoch: int, cfg: SearchConfig) -> float:
    """Exponential interpolation from ``tau_start`` to ``tau_end``."""
    if cfg.epochs == 1:
        return cfg.tau_start
    frac = epoch / (cfg.epochs - 1)
    return cfg.tau_start * (cfg.tau_end / cfg.tau_start) ** frac


def _check_finite(terms, step, phase, tau):
    for name, value in terms.as_floats().items():
        if not math.isfinite(value):
            raise NumericError(f"non-finite {name}={value} at step {step} ({phase}), tau={tau:.4g}")


def validation_loss(model: nn.Module, supernet: Supernet, arch: ArchParams, original: BNStatsSnapshot,
                    *, beta: float, batch_size: int, num_batches: int = 4, seed: int = 12345) -> float:
    """Mean expected-mode reconstruction loss on a fixed set of noise batches."""
    rng = torch.Generator().manual_seed(seed)
    macro = supernet.macro
    total = 0.0
    with torch.no_grad():
        for _ in range(num_batches):
            z, y = sample_latent(batch_size, macro.latent_dim, macro.num_classes, rng)
            x = supernet(z, y, arch, mode="expected")
            total += float(reconstruction_loss(model, x, y, original, beta).total)
    return total / num_batches


def _save_checkpoint(path: Path, state: SearchState, cfg: SearchConfig, w_opt, a_opt, rngs) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "supernet": state.supernet.state_dict(),
        "arch": state.arch.state_dict(),
        "epoch": state.epoch,
        "tau": state.tau,
        "seed": cfg.seed,
        "config": asdict(cfg),
        "w_opt": w_opt.state_dict(),
        "a_opt": a_opt.state_dict(),
        "rngs": [g.get_state() for g in rngs],
        "telemetry": state.telemetry,
    }, path)


def search(model: nn.Module, macro: MacroArchitecture, cfg: SearchConfig, *,
           telemetry_path=None, checkpoint_dir=None, checkpoint_every: int = 0,
           resume_from=None) -> tuple[DerivedArch, SearchState]:
    """Run the alternating search and return the derived architecture."""
    for p in model.parameters():
        p.requires_grad_(False)
    model.eval()
    original = capture_original_stats(model)

    torch.manual_seed(cfg.seed)
    supernet = Supernet(macro)
    arch = ArchParams.init(macro, tau=anneal_tau(0, cfg))
    w_params = list(supernet.parameters())
    w_opt = torch.optim.Adam(w_params, lr=cfg.weight_lr, betas=cfg.weight_betas)
    a_opt = torch.optim.Adam(arch.parameters(), lr=cfg.arch_lr, betas=(0.5, 0.999),
                             weight_decay=cfg.arch_weight_decay)
    train_rng = torch.Generator().manual_seed(cfg.seed)
    val_rng = torch.Generator().manual_seed(cfg.seed + VAL_STREAM_OFFSET)
    state = SearchState(supernet, arch, tau=arch.tau)
    start = 0

    if resume_from is not None:
        blob = torch.load(resume_from, map_location="cpu", weights_only=False)
        supernet.load_state_dict(blob["supernet"])
        with torch.no_grad():
            for a, saved in zip(arch.alpha, blob["arch"]["alpha"]):
                a.copy_(saved)
        w_opt.load_state_dict(blob["w_opt"])
        a_opt.load_state_dict(blob["a_opt"])
        train_rng.set_state(blob["rngs"][0])
        val_rng.set_state(blob["rngs"][1])
        state.telemetry = list(blob["telemetry"])
        start = blob["epoch"] + 1

    sink = open(telemetry_path, "a" if resume_from else "w") if telemetry_path else None
    step = len(state.telemetry)

    def record(phase, terms):
        nonlocal step
        rec = {"step": step, "phase": phase, **terms.as_floats(), "tau": arch.tau}
        state.telemetry.append(rec)
        if sink:
            sink.write(json.dumps(rec) + "\n")
        step += 1

    try:
        supernet.train()
        for epoch in range(start, cfg.epochs):
            arch.tau = anneal_tau(epoch, cfg)
            state.epoch, state.tau = epoch, arch.tau

            for _ in range(cfg.weight_steps):
                z, y = sample_latent(cfg.batch_size, macro.latent_dim, macro.num_classes, train_rng)
                x = supernet(z, y, arch, "sampled", generator=train_rng,
                             gumbel_on_log_probs=cfg.gumbel_on_log_probs)
                terms = reconstruction_loss(model, x, y, original, cfg.beta)
                _check_finite(terms, step, "weight", arch.tau)
                w_opt.zero_grad()
                terms.total.backward(inputs=w_params)
                w_opt.step()
                record("weight", terms)

            for _ in range(cfg.arch_steps):
                z, y = sample_latent(cfg.batch_size, macro.latent_dim, macro.num_classes, val_rng)
                x = supernet(z, y, arch, "sampled", generator=val_rng,
                             gumbel_on_log_probs=cfg.gumbel_on_log_probs)
                terms = reconstruction_loss(model, x, y, original, cfg.beta)
                _check_finite(terms, step, "arch", arch.tau)
                a_opt.zero_grad()
                terms.total.backward(inputs=arch.parameters())
                a_opt.step()
                record("arch", terms)

            log.info("search epoch %d tau %.3f last total %.4f", epoch, arch.tau,
                     state.telemetry[-1]["total"] if state.telemetry else float("nan"))
            if checkpoint_dir and checkpoint_every and (epoch + 1) % checkpoint_every == 0:
                _save_checkpoint(Path(checkpoint_dir) / f"search_epoch{epoch:04d}.pt", state, cfg,
                                 w_opt, a_opt, (train_rng, val_rng))
    finally:
        if sink:
            sink.close()

    return derive(arch, macro), state
