"""Projected solutions of quasi equilibrium problems whose constraint map leaves the feasible set."""

from .algorithm import (
    Certificate,
    ContractionReport,
    IterateTrace,
    OuterConfig,
    Outcome,
    RunResult,
    asymptotic_regularity_profile,
    composite_map,
    contraction_certificate,
    detect_cycle,
    fixed_point_oracle,
    run_projected_procedure,
    verify_projected_solution,
)
from .ep_solver import EPSolution, InnerConfig, Method, ep_residual, grid_ep_oracle, solve_ep
from .geometry import Ball, Box, ConvexSet, Intersection, MinkowskiSum, Polytope, Segment, Translate
from .instances import ProblemInstance, get_instance
from .problems import (
    ConstraintMap,
    CoordinateDifference,
    CustomBifunction,
    OperatorSupBifunction,
    SetValuedOperator,
    VIBifunction,
    estimate_constants,
)

__version__ = "0.1.0"
