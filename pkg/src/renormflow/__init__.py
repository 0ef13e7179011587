"""Renormalized geometry and normalized Ricci flow on funnel/cusp cylinders."""

from .surface import (ConformalSurface, ConformalFactor, EndModel,
                      build_model_surface, scalar_curvature, laplacian_apply,
                      gradient_norm_sq, check_totally_geodesic,
                      geodesic_bdf_shift, surface_from_json, factor_from_json,
                      zero_factor)
from .renorm import (PhgExpansion, RenormalizedValue, fit_boundary_expansion,
                     finite_part_hadamard, finite_part_riesz,
                     renormalized_area, renormalized_curvature_integral,
                     construct_area_prescribing_factor)

__version__ = "0.1.0"
