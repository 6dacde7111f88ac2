"""Distributed 2-D shape learning with a grid-basis Gaussian-kernel classifier.

Multiple simulated robots label LiDAR-style point pairs as inside/outside
an unknown object, each builds hard-margin classifier constraints over a
shared grid-point kernel basis, and a consensus solver drives all agents
to one implicit function whose zero level set is the learned shape.
"""

from .consensus import (
    AgentProblem,
    AgentState,
    ConsensusState,
    ConvergenceReport,
    SolverConfig,
    admm_step,
    assemble_agent,
    euler_step,
    extract_model,
    run,
)
from .datagen import (
    Blob,
    Circle,
    Ellipse,
    GridBasis,
    LabeledDataset,
    ObjectShape,
    Star,
    dump_datasets,
    inside,
    load_datasets,
    make_grid,
    sample_lidar,
)
from .errors import (
    ConfigError,
    ConsensusViolationError,
    DimensionMismatchError,
    NoReturnsError,
    NumericalDivergenceError,
    ShapeLearnError,
    SingularGramError,
    TooLargeError,
)
from .geometry import (
    Contour,
    ShapeMetrics,
    ShapeModel,
    marching_squares,
    raster_eval,
    shape_metrics,
)
from .kernel import (
    CrossKernelMatrix,
    GramMatrix,
    KernelConfig,
    cross_kernel,
    gram,
    kernel_eval,
    sqrt_and_inv_sqrt,
)
from .local_qp import (
    ClassifierSolution,
    LocalProblem,
    build_local,
    evaluate,
    solve_local,
)
from .oracle import brute_force_small, solve_centralized

__version__ = "0.1.0"

__all__ = [
    "AgentProblem",
    "AgentState",
    "Blob",
    "Circle",
    "ClassifierSolution",
    "ConfigError",
    "ConsensusState",
    "ConsensusViolationError",
    "Contour",
    "ConvergenceReport",
    "CrossKernelMatrix",
    "DimensionMismatchError",
    "Ellipse",
    "GramMatrix",
    "GridBasis",
    "KernelConfig",
    "LabeledDataset",
    "LocalProblem",
    "NoReturnsError",
    "NumericalDivergenceError",
    "ObjectShape",
    "ShapeLearnError",
    "ShapeMetrics",
    "ShapeModel",
    "SingularGramError",
    "SolverConfig",
    "Star",
    "TooLargeError",
    "admm_step",
    "assemble_agent",
    "brute_force_small",
    "build_local",
    "cross_kernel",
    "dump_datasets",
    "euler_step",
    "evaluate",
    "extract_model",
    "gram",
    "inside",
    "kernel_eval",
    "load_datasets",
    "make_grid",
    "marching_squares",
    "raster_eval",
    "run",
    "sample_lidar",
    "shape_metrics",
    "solve_centralized",
    "solve_local",
    "sqrt_and_inv_sqrt",
]
