"""Finitary dyadic representation of Calderon-Zygmund operators on non-homogeneous measures."""
from .exceptions import AuditWarning, DomainError, InputError
from .grid import (CubeId, DyadicSystem, GridConfig, ancestor, children, goodness_probability,
                   is_k_good, realize_cube, reference_cube, shift_ensemble, translate_cube)
from .haar import (HaarFunction, HaarTransformer, average, bessel_check, block_ops, build_haar, haar_basis,
                   haar_properties, martingale_difference)
from .measure import DiscreteMeasure, point_mass_mixture, power_law, random_measure, uniform
from .operators import (KernelSpec, ModulusOfContinuity, Operator, assemble_operator, bmo_norm, dini_integral,
                        dini_sum, l2_norm, random_operator, regularity_audit, testing_constants)
from .representation import (DyadicRepresentation, SystemDecomposition, estimate_norms, geometry_for,
                             t1_aggregate, verify_representation)
from .shifts import DyadicShift, decompose_Qk, decompose_Rk, validate_shift
from .weak import a2_constant, cz_decompose, power_weight, weak11_estimate, weighted_norm

__version__ = "0.1.0"

__all__ = [
    "AuditWarning", "DomainError", "InputError",
    "CubeId", "DyadicSystem", "GridConfig", "ancestor", "children", "goodness_probability", "is_k_good",
    "realize_cube", "reference_cube", "shift_ensemble", "translate_cube",
    "HaarFunction", "HaarTransformer", "average", "bessel_check", "block_ops", "build_haar", "haar_basis",
    "haar_properties", "martingale_difference",
    "DiscreteMeasure", "point_mass_mixture", "power_law", "random_measure", "uniform",
    "KernelSpec", "ModulusOfContinuity", "Operator", "assemble_operator", "bmo_norm", "dini_integral",
    "dini_sum", "l2_norm", "random_operator", "regularity_audit", "testing_constants",
    "DyadicRepresentation", "SystemDecomposition", "estimate_norms", "geometry_for", "t1_aggregate",
    "verify_representation",
    "DyadicShift", "decompose_Qk", "decompose_Rk", "validate_shift",
    "a2_constant", "cz_decompose", "power_weight", "weak11_estimate", "weighted_norm",
]
