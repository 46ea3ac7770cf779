"""CMC Einstein flows: homogeneous multi-block families, evolution and monotone quantities."""
from .flow import (Block, CmcTrajectory, ConstraintDriftError, ConstraintError,
                   MultiWarpedFlow, SingularityError, evolve_cmc, hubble_lapse)
from .families import (ConeFamily, ConeTorusFamily, DomainError, Family,
                       KantowskiSachsFamily, KasnerFamily, RescaledFamily,
                       TrajectoryFamily, make_family)
from .matrix import (KasnerFit, KasnerMatrixFamily, MatrixFlow, kasner_matrix_family,
                     kasner_reconstruct)
from .analysis import (CausalRadius, CurvatureReport, Dvol0Result, HypothesisError,
                       causal_radius, curvature_integral_check, curvature_report,
                       disjointness, dvol0_limit, kasner_limit_check, lapse_bounds,
                       monotone_quantities, rescale, rm_norm)

__all__ = [
    "Block", "CmcTrajectory", "ConstraintDriftError", "ConstraintError", "MultiWarpedFlow",
    "SingularityError", "evolve_cmc", "hubble_lapse", "ConeFamily", "ConeTorusFamily",
    "DomainError", "Family", "KantowskiSachsFamily", "KasnerFamily", "RescaledFamily",
    "TrajectoryFamily", "make_family", "KasnerFit", "KasnerMatrixFamily", "MatrixFlow",
    "kasner_matrix_family", "kasner_reconstruct", "CausalRadius", "CurvatureReport",
    "Dvol0Result", "HypothesisError", "causal_radius", "curvature_integral_check",
    "curvature_report", "disjointness", "dvol0_limit", "kasner_limit_check", "lapse_bounds",
    "monotone_quantities", "rescale", "rm_norm",
]
