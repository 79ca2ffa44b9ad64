"""Fixed macro-architecture of the generator search space.

The generator is a chain of convolutional blocks. Each block has five node
positions; position 5 of block ``b`` is the same feature map as position 1 of
block ``b + 1``. Inside a block an up-edge doubles resolution (N1 -> N2) and
six normal-edges densely connect N2..N5. Cross-edges link N2 of consecutive
blocks, interpolating by 2x.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import ConfigError

NORMAL, UP, CROSS = "normal", "up", "cross"
EDGE_KINDS = (NORMAL, UP, CROSS)


@dataclass(frozen=True)
class OperationSpec:
    name: str
    kernel: int | None = None
    dilation: int | None = None

    @property
    def is_conv(self) -> bool:
        return self.kernel is not None

    @property
    def is_none(self) -> bool:
        return self.name == "none"


def _conv(k: int, d: int) -> OperationSpec:
    return OperationSpec(f"conv{k}x{k}-d{d}", kernel=k, dilation=d)


OPERATIONS: dict[str, OperationSpec] = {
    op.name: op
    for op in (
        _conv(1, 1),
        _conv(3, 1),
        _conv(5, 1),
        _conv(3, 2),
        _conv(5, 2),
        OperationSpec("identity"),
        OperationSpec("none"),
        OperationSpec("nn-interp"),
        OperationSpec("bilinear-interp"),
    )
}

# Index within each tuple is the identity of the op; never reorder.
CANDIDATES: dict[str, tuple[OperationSpec, ...]] = {
    NORMAL: tuple(
        OPERATIONS[n]
        for n in ("conv1x1-d1", "conv3x3-d1", "conv5x5-d1", "conv3x3-d2", "conv5x5-d2", "identity", "none")
    ),
    UP: (OPERATIONS["nn-interp"], OPERATIONS["bilinear-interp"]),
    CROSS: (OPERATIONS["nn-interp"], OPERATIONS["bilinear-interp"], OPERATIONS["none"]),
}

NODES_PER_BLOCK = 5
_NORMAL_PAIRS = ((2, 3), (2, 4), (3, 4), (2, 5), (3, 5), (4, 5))


@dataclass(frozen=True)
class Node:
    id: str
    block: int
    position: int
    resolution: tuple[int, int]
    channels: int


@dataclass(frozen=True)
class EdgeSpec:
    id: int
    kind: str
    src: str
    dst: str
    candidates: tuple[OperationSpec, ...]

    @property
    def num_candidates(self) -> int:
        return len(self.candidates)

    def index_of(self, op_name: str) -> int:
        for i, op in enumerate(self.candidates):
            if op.name == op_name:
                return i
        raise KeyError(op_name)


@dataclass
class MacroArchitecture:
    image_shape: tuple[int, int, int]
    base_channels: int
    latent_dim: int
    num_classes: int
    embed_dim: int
    num_blocks: int
    nodes: list[Node] = field(default_factory=list)
    edges: list[EdgeSpec] = field(default_factory=list)

    @property
    def stem_resolution(self) -> tuple[int, int]:
        return self.nodes[0].resolution

    @property
    def stem_shape(self) -> tuple[int, int, int]:
        h, w = self.stem_resolution
        return (self.base_channels, h, w)

    @property
    def output_node(self) -> str:
        return self.nodes[-1].id

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def node(self, node_id: str) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def incoming(self, node_id: str) -> list[EdgeSpec]:
        return [e for e in self.edges if e.dst == node_id]

    def block_outputs(self) -> list[str]:
        """N5 node id of every block, in block order."""
        return [node_id(b, NODES_PER_BLOCK) for b in range(1, self.num_blocks + 1)]

    def topological_nodes(self) -> list[str]:
        return [n.id for n in self.nodes]

    def describe(self) -> dict:
        return {
            "blocks": self.num_blocks,
            "base_channels": self.base_channels,
            "latent_dim": self.latent_dim,
            "num_classes": self.num_classes,
            "embed_dim": self.embed_dim,
            "image_shape": list(self.image_shape),
        }


def node_id(block: int, position: int) -> str:
    """Canonical id; N1 of block b > 1 resolves to N5 of block b - 1."""
    if position == 1 and block > 1:
        return f"B{block - 1}-N{NODES_PER_BLOCK}"
    return f"B{block}-N{position}"


def build_macro(
    image_shape: tuple[int, int, int],
    base_channels: int,
    latent_dim: int,
    num_classes: int,
    *,
    embed_dim: int | None = None,
    num_blocks: int = 3,
    normal_ops: tuple[str, ...] | None = None,
) -> MacroArchitecture:
    """Build the macro DAG for images of ``image_shape`` = (C, H, W).

    ``normal_ops`` restricts the normal-edge candidate list (in canonical
    order); it exists for miniature instances used in gradient checks.
    """
    channels, height, width = image_shape
    factor = 2**num_blocks
    if num_blocks < 1:
        raise ConfigError("num_blocks must be >= 1")
    if height % factor or width % factor:
        raise ConfigError(f"image size {height}x{width} is not divisible by {factor}")
    if base_channels < 1 or channels < 1:
        raise ConfigError("channel counts must be >= 1")
    if latent_dim < 1 or num_classes < 1:
        raise ConfigError("latent_dim and num_classes must be >= 1")

    normal = CANDIDATES[NORMAL]
    if normal_ops is not None:
        unknown = set(normal_ops) - {op.name for op in normal}
        if unknown or not normal_ops:
            raise ConfigError(f"invalid normal_ops {normal_ops!r}")
        normal = tuple(op for op in normal if op.name in normal_ops)
    candidates = {NORMAL: normal, UP: CANDIDATES[UP], CROSS: CANDIDATES[CROSS]}

    h0, w0 = height // factor, width // factor
    nodes = [Node("B1-N1", 1, 1, (h0, w0), base_channels)]
    edges: list[EdgeSpec] = []

    def add_edge(kind: str, src: str, dst: str) -> None:
        edges.append(EdgeSpec(len(edges), kind, src, dst, candidates[kind]))

    for b in range(1, num_blocks + 1):
        res = (h0 * 2**b, w0 * 2**b)
        for pos in range(2, NODES_PER_BLOCK + 1):
            nodes.append(Node(node_id(b, pos), b, pos, res, base_channels))
        if b > 1:
            add_edge(CROSS, node_id(b - 1, 2), node_id(b, 2))
        add_edge(UP, node_id(b, 1), node_id(b, 2))
        for s, d in _NORMAL_PAIRS:
            add_edge(NORMAL, node_id(b, s), node_id(b, d))

    return MacroArchitecture(
        image_shape=tuple(image_shape),
        base_channels=base_channels,
        latent_dim=latent_dim,
        num_classes=num_classes,
        embed_dim=embed_dim if embed_dim is not None else num_classes,
        num_blocks=num_blocks,
        nodes=nodes,
        edges=edges,
    )
