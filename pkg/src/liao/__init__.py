"""Moving-frame reduction, exponential dichotomies and structural-stability
conjugacies for hyperbolic sets of vector fields on Euclidean space."""

__version__ = "0.1.0"

from .conjugacy import ConjugacyConfig, ConjugacyResult, conjugacy_map, conjugacy_offset
from .dichotomy import (BoundedSolution, DichotomyProblem, bounded_solution,
                        continuity_probe, delta_map, epsilon_bound, validate_class)
from .errors import LiaoError, NumericError, ValidationError
from .field import TermMap, VectorFieldSpec, check_uniformity, integrate_flow
from .frame import (FramePath, TransversalFrame, frame_transport, orthonormal_complement,
                    stable_first_frame_path, stable_first_frame_paths, transversal_propagator)
from .reduced import (HyperbolicityCertificate, ReducedCocycle, certify_hyperbolic,
                      dichotomy_constants, reduced_cocycle)
from .estimators import HyperbolicityEstimator, StructuralConjugacy
from .scenario import load_scenario
from .standard import SectionChart, StandardSystem, field_distance

__all__ = [
    "BoundedSolution", "ConjugacyConfig", "ConjugacyResult", "DichotomyProblem", "FramePath",
    "HyperbolicityCertificate", "HyperbolicityEstimator", "LiaoError", "NumericError", "ReducedCocycle", "SectionChart",
    "StandardSystem", "StructuralConjugacy", "TermMap", "TransversalFrame", "ValidationError", "VectorFieldSpec",
    "bounded_solution", "certify_hyperbolic", "check_uniformity", "conjugacy_map",
    "conjugacy_offset", "continuity_probe", "delta_map", "dichotomy_constants", "epsilon_bound",
    "field_distance", "frame_transport", "integrate_flow", "load_scenario",
    "orthonormal_complement", "reduced_cocycle", "stable_first_frame_path",
    "stable_first_frame_paths", "transversal_propagator", "validate_class",
]
