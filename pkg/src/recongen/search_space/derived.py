"""Discrete architectures: derivation from logits, repair, scaling, file I/O."""
from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path

import torch

from ..errors import ConfigError, ParseError
from .macro import CANDIDATES, EDGE_KINDS, NORMAL, MacroArchitecture, build_macro
from .sampling import ArchParams, edge_probabilities

FORMAT_VERSION = 1
MIN_CHANNELS = 8


@dataclass
class DerivedArch:
    """One candidate index per edge id, plus a channel multiplier."""

    choices: dict[int, int]
    channel_scale: float = 1.0

    def validate(self, macro: MacroArchitecture) -> None:
        if sorted(self.choices) != list(range(macro.num_edges)):
            raise ConfigError(f"choices must cover edge ids 0..{macro.num_edges - 1}")
        for edge in macro.edges:
            c = self.choices[edge.id]
            if not 0 <= c < edge.num_candidates:
                raise ConfigError(f"edge {edge.id}: choice {c} out of range for {edge.kind} edge")
        if not self.channel_scale > 0:
            raise ConfigError("channel_scale must be positive")

    def op_names(self, macro: MacroArchitecture) -> dict[int, str]:
        return {e.id: e.candidates[self.choices[e.id]].name for e in macro.edges}


def scaled_channels(base_channels: int, s: float) -> int:
    """Channel count after scaling: nearest even number, never below 8."""
    if not s > 0:
        raise ConfigError(f"scale must be positive, got {s}")
    c = base_channels * s
    if math.floor(c) < MIN_CHANNELS:
        raise ConfigError(f"base_channels={base_channels} scaled by {s} gives {c:g} < {MIN_CHANNELS} channels")
    return max(MIN_CHANNELS, 2 * math.floor(c / 2 + 0.5))


def scale_channels(derived: DerivedArch, s: float, base_channels: int | None = None) -> DerivedArch:
    if base_channels is not None:
        scaled_channels(base_channels, s)
    elif not s > 0:
        raise ConfigError(f"scale must be positive, got {s}")
    return replace(derived, choices=dict(derived.choices), channel_scale=float(s))


def _live_nodes(macro: MacroArchitecture, choices: dict[int, int]) -> set[str]:
    """Nodes that can carry a non-zero signal under ``choices``."""
    live = {macro.nodes[0].id}
    for node in macro.nodes[1:]:
        for e in macro.incoming(node.id):
            if e.src in live and not e.candidates[choices[e.id]].is_none:
                live.add(node.id)
                break
    return live


def repair_connectivity(
    macro: MacroArchitecture,
    choices: dict[int, int],
    probs: list[torch.Tensor] | None = None,
    rng: random.Random | None = None,
) -> dict[int, int]:
    """Make every block's N5 node reachable from the stem.

    When a block output has no live incoming edge, the incoming edge from a
    live source with the most non-``none`` probability is switched to its best
    non-``none`` candidate. Without ``probs`` the first such edge is used and
    the replacement is drawn from ``rng``.
    """
    choices = dict(choices)
    for out in macro.block_outputs():
        live = _live_nodes(macro, choices)
        if out in live:
            continue
        feeders = [e for e in macro.incoming(out) if e.src in live]
        if probs is not None:
            def mass(e):
                p = probs[e.id]
                return sum(float(p[j]) for j, op in enumerate(e.candidates) if not op.is_none)
            edge = max(feeders, key=mass)  # first max wins on ties
            options = [j for j, op in enumerate(edge.candidates) if not op.is_none]
            p = probs[edge.id]
            choices[edge.id] = max(options, key=lambda j: (float(p[j]), -j))
        else:
            edge = feeders[0]
            options = [j for j, op in enumerate(edge.candidates) if not op.is_none]
            choices[edge.id] = (rng or random.Random(0)).choice(options)
    return choices


def derive(arch: ArchParams, macro: MacroArchitecture) -> DerivedArch:
    """Per-edge argmax of the logits (lowest index on ties), then repair."""
    arch.validate(macro)
    choices = {}
    for edge, a in zip(macro.edges, arch.alpha):
        values = a.detach().tolist()
        best = max(values)
        choices[edge.id] = values.index(best)
    probs = [edge_probabilities(a.detach().double()) for a in arch.alpha]
    return DerivedArch(repair_connectivity(macro, choices, probs))


def sample_random_arch(macro: MacroArchitecture, seed: int) -> DerivedArch:
    """Uniform candidate per edge, repaired like a derived architecture."""
    rng = random.Random(seed)
    choices = {e.id: rng.randrange(e.num_candidates) for e in macro.edges}
    return DerivedArch(repair_connectivity(macro, choices, rng=rng))


# --- file format -----------------------------------------------------------

def arch_to_dict(macro: MacroArchitecture, derived: DerivedArch) -> dict:
    derived.validate(macro)
    desc = macro.describe()
    normal_names = None
    for e in macro.edges:
        if e.kind == NORMAL:
            normal_names = [op.name for op in e.candidates]
            break
    if normal_names is not None and normal_names != [op.name for op in CANDIDATES[NORMAL]]:
        desc["normal_ops"] = normal_names
    return {
        "format_version": FORMAT_VERSION,
        "macro": desc,
        "channel_scale": derived.channel_scale,
        "edges": [
            {"id": e.id, "kind": e.kind, "src": e.src, "dst": e.dst,
             "op_name": e.candidates[derived.choices[e.id]].name}
            for e in macro.edges
        ],
    }


def macro_from_dict(desc: dict) -> MacroArchitecture:
    try:
        return build_macro(
            tuple(desc["image_shape"]),
            int(desc["base_channels"]),
            int(desc["latent_dim"]),
            int(desc["num_classes"]),
            embed_dim=desc.get("embed_dim"),
            num_blocks=int(desc.get("blocks", 3)),
            normal_ops=tuple(desc["normal_ops"]) if "normal_ops" in desc else None,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"invalid macro description: {exc}") from exc


def arch_from_dict(data: dict) -> tuple[MacroArchitecture, DerivedArch]:
    if not isinstance(data, dict):
        raise ParseError("architecture file must contain a mapping")
    if data.get("format_version") != FORMAT_VERSION:
        raise ParseError(f"unsupported format_version {data.get('format_version')!r}")
    macro = macro_from_dict(data.get("macro", {}))
    edges = data.get("edges")
    if not isinstance(edges, list) or len(edges) != macro.num_edges:
        raise ParseError(f"expected {macro.num_edges} edges")
    choices = {}
    for raw in edges:
        try:
            eid = int(raw["id"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"edge entry without a valid id: {raw!r}") from exc
        if not 0 <= eid < macro.num_edges or eid in choices:
            raise ParseError(f"edge {eid}: id out of range or duplicated")
        spec = macro.edges[eid]
        kind, op_name = raw.get("kind"), raw.get("op_name")
        if kind not in EDGE_KINDS or kind != spec.kind:
            raise ParseError(f"edge {eid}: kind {kind!r} does not match macro ({spec.kind})")
        if (raw.get("src"), raw.get("dst")) != (spec.src, spec.dst):
            raise ParseError(f"edge {eid}: endpoints {raw.get('src')}->{raw.get('dst')} do not match macro")
        try:
            choices[eid] = spec.index_of(op_name)
        except KeyError:
            raise ParseError(f"edge {eid}: {op_name!r} is not a candidate for a {kind} edge") from None
    try:
        scale = float(data.get("channel_scale", 1.0))
    except (TypeError, ValueError) as exc:
        raise ParseError(f"invalid channel_scale: {exc}") from exc
    derived = DerivedArch(choices, scale)
    try:
        derived.validate(macro)
    except ConfigError as exc:
        raise ParseError(str(exc)) from exc
    return macro, derived


def export_arch(derived: DerivedArch, path, macro: MacroArchitecture) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(arch_to_dict(macro, derived), indent=2) + "\n")
    return path


def read_arch_file(path) -> tuple[MacroArchitecture, DerivedArch]:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON ({exc})") from exc
    return arch_from_dict(data)


def import_arch(path) -> DerivedArch:
    return read_arch_file(path)[1]
