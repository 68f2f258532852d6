"""Recovery of radial distribution-grid structure, load statistics, and line
parameters from nodal voltage observations."""

from .errors import GridForestError
from .moments import MomentSet, estimate, sqdiff
from .network import (
    Line,
    Node,
    PathSets,
    RadialForest,
    build_forest,
    compute_path_sets,
    descendant_set,
    h_inverse_diff,
    h_inverse_entry,
    line_param_map,
)
from .powerflow import (
    AnalyticMoments,
    InjectionModel,
    VoltageSamples,
    analytic_moments,
    pairwise_sqdiff_analytic,
    sample_voltages,
    solve_lcpf,
)
from .lines import EdgeEstimate, estimate_edge, learn_structure_and_params
from .missing import (
    HiddenNodeInfo,
    MissingSpec,
    learn_with_missing,
    residual_match,
    validate_missing_spec,
)
from .structure import (
    LearnResult,
    estimate_injection_stats,
    learn,
    learn_structure,
)
from .synth import FeederSpec, choose_hidden, preset, synth_feeder

__version__ = "0.1.0"

__all__ = [
    "AnalyticMoments",
    "EdgeEstimate",
    "FeederSpec",
    "GridForestError",
    "HiddenNodeInfo",
    "InjectionModel",
    "LearnResult",
    "Line",
    "MissingSpec",
    "MomentSet",
    "Node",
    "PathSets",
    "RadialForest",
    "VoltageSamples",
    "analytic_moments",
    "build_forest",
    "choose_hidden",
    "compute_path_sets",
    "descendant_set",
    "estimate",
    "estimate_edge",
    "estimate_injection_stats",
    "h_inverse_diff",
    "h_inverse_entry",
    "learn",
    "learn_structure",
    "learn_structure_and_params",
    "learn_with_missing",
    "line_param_map",
    "pairwise_sqdiff_analytic",
    "preset",
    "residual_match",
    "sample_voltages",
    "solve_lcpf",
    "sqdiff",
    "synth_feeder",
    "validate_missing_spec",
]
