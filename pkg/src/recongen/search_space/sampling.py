"""Architecture parameters and the Gumbel-Softmax relaxation over edges."""
from __future__ import annotations

from dataclasses import dataclass

import torch

from ..errors import ConfigError
from .macro import MacroArchitecture


def edge_probabilities(alpha: torch.Tensor) -> torch.Tensor:
    """Softmax over the last dimension of the architecture logits."""
    shifted = alpha - alpha.max(dim=-1, keepdim=True).values.detach()
    e = shifted.exp()
    return e / e.sum(dim=-1, keepdim=True)


def sample_gumbel(shape, *, generator: torch.Generator | None = None, dtype=torch.float32) -> torch.Tensor:
    """Standard Gumbel(0, 1) noise via inverse CDF."""
    u = torch.rand(shape, generator=generator, dtype=dtype)
    tiny = torch.finfo(dtype).tiny
    return -torch.log((-torch.log(u.clamp_min(tiny))).clamp_min(tiny))


def gumbel_mix_weights(
    p: torch.Tensor,
    g: torch.Tensor,
    tau: float,
    *,
    gumbel_on_log_probs: bool = False,
) -> torch.Tensor:
    """Relaxed one-hot mixing weights for an edge.

    By default the noise is added to the probabilities themselves,
    ``softmax((p + g) / tau)``. With ``gumbel_on_log_probs`` the
    conventional Gumbel-Softmax ``softmax((log p + g) / tau)`` is used.
    """
    if not tau > 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    logits = torch.log(p) if gumbel_on_log_probs else p
    return edge_probabilities((logits + g) / tau)


@dataclass
class ArchParams:
    """Per-edge logits ``alpha`` plus the current sampling temperature."""

    alpha: list[torch.nn.Parameter]
    tau: float = 1.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"temperature must be positive, got {self.tau}")

    @classmethod
    def init(cls, macro: MacroArchitecture, tau: float = 1.0, *, std: float = 0.0,
             generator: torch.Generator | None = None, dtype=torch.float32) -> "ArchParams":
        alpha = []
        for edge in macro.edges:
            a = torch.zeros(edge.num_candidates, dtype=dtype)
            if std > 0:
                a += std * torch.randn(edge.num_candidates, generator=generator, dtype=dtype)
            alpha.append(torch.nn.Parameter(a))
        return cls(alpha, tau)

    def parameters(self) -> list[torch.nn.Parameter]:
        return list(self.alpha)

    def probabilities(self) -> list[torch.Tensor]:
        return [edge_probabilities(a) for a in self.alpha]

    def validate(self, macro: MacroArchitecture) -> None:
        from ..errors import StructuralError

        if len(self.alpha) != macro.num_edges:
            raise StructuralError(f"expected {macro.num_edges} alpha vectors, got {len(self.alpha)}")
        for edge, a in zip(macro.edges, self.alpha):
            if a.shape != (edge.num_candidates,):
                raise StructuralError(f"edge {edge.id}: alpha shape {tuple(a.shape)} != ({edge.num_candidates},)")
            if not torch.isfinite(a).all():
                raise StructuralError(f"edge {edge.id}: non-finite alpha")

    def state_dict(self) -> dict:
        return {"alpha": [a.detach().clone() for a in self.alpha], "tau": self.tau}

    @classmethod
    def from_state_dict(cls, state: dict) -> "ArchParams":
        return cls([torch.nn.Parameter(a.clone()) for a in state["alpha"]], float(state["tau"]))


def total_variation(p: torch.Tensor, q: torch.Tensor) -> float:
    return 0.5 * (p - q).detach().abs().sum().item()
