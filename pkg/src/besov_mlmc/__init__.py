"""Multilevel Monte Carlo for elliptic PDEs with Besov random tree priors."""
from .fem import MeshLevel, assemble_load, assemble_stiffness, qoi_gradient_norm, solve
from .mlmc import RateParams, make_plan, mlmc_estimate, slmc_estimate, variance_decay_report
from .prior import PriorParams, evaluate_field, sample_field
from .trees import TreeParams, sample_tree
from .wavelets import DB5, HAAR, cascade

__all__ = [
    "DB5", "HAAR", "MeshLevel", "PriorParams", "RateParams", "TreeParams",
    "assemble_load", "assemble_stiffness", "cascade", "evaluate_field", "make_plan",
    "mlmc_estimate", "qoi_gradient_norm", "sample_field", "sample_tree", "slmc_estimate",
    "solve", "variance_decay_report",
]
