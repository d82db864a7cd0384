"""Robust safe control under sampled model uncertainty.

Filters a reference controller through a quadratic program whose safety
constraint holds for every dynamics model inside a data-driven uncertainty
bound (convex hull of samples, confidence ellipsoid, or a constant residual
margin), and synthesizes safety-index parameters certified feasible on a
sampled state grid.
"""

from .bounds import (UncertaintyBound, analytic_segway_ellipsoid, build_bound,
                     build_ellipsoid_bound, build_polytope_bound,
                     chi2_quantile, compute_c,
                     estimate_constant_residual_bound, mean_model_bound,
                     project_to_lie)
from .core import (DynamicsSample, EllipsoidSet, LieDerivativeBounds,
                   PolytopeSet, RobustControlResult, SolveStatus)
from .dynamics import (ScaraModel, SegwayModel, TruncatedGaussian, make_model,
                       sample_dynamics, sample_parameter)
from .experiments import (TrajectoryLog, feasibility_map, find_case_start,
                          forward_invariance_study, reference_controller,
                          rk4_step, simulate, timing_bench)
from .safety_index import (SCARA_CERTIFIED, SCARA_HAND, SCARA_LEARNED,
                           SEGWAY_LEARNED, SafetyIndexParams, gamma,
                           gamma_inv, grad_phi, grad_phi0, grad_phi_smooth,
                           phi, phi0, phi_smooth)
from .solvers import (QpProblem, QpSolution, constant_rssa, cutting_plane_qp,
                      ellipsoid_rssa, fallback_safest_control, is_feasible,
                      polytope_rssa, soc_projection, solve_qp, solve_variant)
from .synthesis import (SynthesisConfig, SynthesisResult, cma_es_maximize,
                        estimate_lipschitz, feasible_mask, feasible_rate,
                        margin_epsilon, sample_state_grid, synthesize)

__version__ = "0.1.0"

__all__ = [
    "DynamicsSample", "EllipsoidSet", "LieDerivativeBounds", "PolytopeSet",
    "RobustControlResult", "SolveStatus", "ScaraModel", "SegwayModel",
    "TruncatedGaussian", "make_model", "sample_dynamics", "sample_parameter",
    "UncertaintyBound", "analytic_segway_ellipsoid", "build_bound",
    "build_ellipsoid_bound", "build_polytope_bound", "chi2_quantile",
    "compute_c", "estimate_constant_residual_bound", "mean_model_bound",
    "project_to_lie", "SafetyIndexParams", "SCARA_CERTIFIED", "SCARA_HAND",
    "SCARA_LEARNED", "SEGWAY_LEARNED", "gamma", "gamma_inv", "phi", "phi0",
    "phi_smooth", "grad_phi", "grad_phi0", "grad_phi_smooth", "QpProblem",
    "QpSolution", "solve_qp", "cutting_plane_qp", "soc_projection",
    "polytope_rssa", "ellipsoid_rssa", "constant_rssa", "is_feasible",
    "fallback_safest_control", "solve_variant",
    "SynthesisConfig", "SynthesisResult", "cma_es_maximize",
    "estimate_lipschitz", "feasible_mask", "feasible_rate", "margin_epsilon",
    "sample_state_grid", "synthesize", "TrajectoryLog", "simulate",
    "reference_controller", "rk4_step", "feasibility_map", "find_case_start",
    "forward_invariance_study", "timing_bench",
]
