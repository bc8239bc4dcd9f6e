"""Renormalized index computations on model geometries."""

from .charclass import CurvatureMatrix, FormPolynomial, a_hat, chern_character, top_degree_integral, wedge
from .clifford import CliffordElement, MetricForm, clifford_mul, quantize, supertrace
from .geometry import ModelGeometry, build_geometry, curvature, normal_coordinates
from .heat import LaplaceTypeOperator, heat_trace_expansion, parametrix_coefficients, spectral_heat_kernel
from .getzler import mehler_heat_value, model_operator, scale_kernel, taylor_filtration_check
from .index import IndexReport, psc_obstruction_check, spectral_index, verify_index_theorem
from .operators import DiracAssembly, SpectralData, build_dirac, lichnerowicz_residual, spectrum
from .renorm import b_heat_trace, eta_integral, regularized_integral, renormalized_supertrace

__version__ = "0.1.0"
