"""Discretization schemes that keep dynamically feedback-linearizable systems exactly linearizable.

The lifted explicit-Euler scheme ξ_{k+1} = Φ⁻¹(Φ(ξ_k) + h·DΦ(ξ_k)(F(ξ_k) + G(ξ_k)μ_k))
turns into z_{k+1} = A_h z_k + B_h v_k under the discrete feedback, while plain
Euler on the same system is not feedback linearizable. The package builds such
schemes from discretization maps, simulates them, and audits linearizability
numerically.
"""

from .geometry import (Diffeomorphism, DiscretizationMap, RetractionMap, check_map_axioms,
                       check_retraction_axioms, lift_map, make_builtin_map,
                       retraction_to_discretization)
from .integrator import (DiscreteScheme, Trajectory, discretize_lti, global_error, lifted_scheme,
                         linearity_residual, order_estimate, plain_scheme, reference_trajectory,
                         simulate, step)
from .linearizability import (DiscreteMapModel, Distribution, dist_intersect, dist_sum,
                              grizzle_audit, involutive, jacobian, kernel_distribution, lie_bracket,
                              static_fl_check)
from .presets import ScenarioPreset, get_preset, stabilizing_controller, unicycle_preset
from .systems import (ControlAffineSystem, DynamicCompensator, ExtendedSystem, LinearizingData,
                      apply_feedback, extend, inverse_transform, verify_linearization)

__version__ = "0.1.0"

__all__ = [
    "ControlAffineSystem", "Diffeomorphism", "DiscreteMapModel", "DiscreteScheme", "DiscretizationMap",
    "Distribution", "DynamicCompensator", "ExtendedSystem", "LinearizingData", "RetractionMap",
    "ScenarioPreset", "Trajectory", "apply_feedback", "check_map_axioms", "check_retraction_axioms",
    "discretize_lti", "dist_intersect", "dist_sum", "extend", "get_preset", "global_error",
    "grizzle_audit", "inverse_transform", "involutive", "jacobian", "kernel_distribution",
    "lie_bracket", "lift_map", "lifted_scheme", "linearity_residual", "make_builtin_map",
    "order_estimate", "plain_scheme", "reference_trajectory", "retraction_to_discretization",
    "simulate", "stabilizing_controller", "static_fl_check", "step", "unicycle_preset",
    "verify_linearization",
]
