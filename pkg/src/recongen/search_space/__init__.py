"""Generator search space: macro DAG, candidate operations, supernet, derivation."""
from .derived import (
    DerivedArch,
    derive,
    export_arch,
    import_arch,
    read_arch_file,
    repair_connectivity,
    sample_random_arch,
    scale_channels,
    scaled_channels,
)
from .macro import CANDIDATES, CROSS, NORMAL, OPERATIONS, UP, EdgeSpec, MacroArchitecture, OperationSpec, build_macro
from .networks import DerivedGenerator, Supernet, count_parameters, instantiate_derived
from .sampling import ArchParams, edge_probabilities, gumbel_mix_weights, sample_gumbel, total_variation

__all__ = [
    "ArchParams",
    "CANDIDATES",
    "CROSS",
    "DerivedArch",
    "DerivedGenerator",
    "EdgeSpec",
    "MacroArchitecture",
    "NORMAL",
    "OPERATIONS",
    "OperationSpec",
    "Supernet",
    "UP",
    "build_macro",
    "count_parameters",
    "derive",
    "edge_probabilities",
    "export_arch",
    "gumbel_mix_weights",
    "import_arch",
    "instantiate_derived",
    "read_arch_file",
    "repair_connectivity",
    "sample_gumbel",
    "sample_random_arch",
    "scale_channels",
    "scaled_channels",
    "total_variation",
]
