"""Regression-based model reduction with transformed snapshots.

Parametrized solutions with moving discontinuities are composed with a
registered spatial transform so that their POD converges quickly; Gaussian
process regression predicts the reduced coefficients and an inverse map
brings the prediction back to physical coordinates.
"""

from .grid import Grid, Grid1D, Grid2D, Triangulation, gauss_legendre, make_grid_1d, make_grid_2d
from .hf import TEST_CASES, TestCase, get_test_case, sample_snapshots, tensor_samples, uniform_samples
from .pipeline import (
    OfflineArtifacts,
    OnlineResult,
    PipelineConfig,
    average_error,
    run_identity_mode,
    run_offline,
    run_online,
    s_proj_baseline,
)
from .registration import DisplacementCoeffs, RegistrationConfig

__version__ = "0.1.0"
