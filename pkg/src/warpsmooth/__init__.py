"""Local smoothing on warped products with degenerate trapping: models, evolution, resolvent and commutant checks."""
from .geometry import ManifoldModel, RadialGrid, assemble_mode_operator
from .smoothing import exponent_fit, smoothing_quotient, theory_exponent
from .resolvent import resolvent_scan_fit, ScanConfig
from .microlocal import build_commutant, commutator_scaling_test

__all__ = ["ManifoldModel", "RadialGrid", "assemble_mode_operator", "exponent_fit",
           "smoothing_quotient", "theory_exponent", "resolvent_scan_fit", "ScanConfig",
           "build_commutant", "commutator_scaling_test"]
