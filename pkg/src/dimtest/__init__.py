"""Rank-2 multiplicative fits and mean-dimensionality tests for data matrices.

A probe set's intensities form an n x m matrix (arrays by probes).  This
package fits the two-component multiplicative model by SVD, tests whether the
second mean component is real (single-direction Z test, multi-direction
chi-square test, max-over-directions test, with bootstrap calibration),
drives Monte Carlo studies of those tests, and screens whole collections of
probe-set matrices end to end.
"""

from .errors import ParseError, PreconditionError
from .numkern import DataMatrix, SvdResult, chisq_sf, jacobi_eigh, normal_cdf, normal_ppf, svd_thin
from .rank2 import Rank2Fit, contribution_summary, fit_rank2, resid_sigma2, sigma_hat2
from .directions import (
    DirectionSet,
    GroupSpec,
    complement_directions,
    contrast_directions,
    estimate_mu1,
    hadamard_directions,
    two_group_direction,
    validate_directions,
)
from .inference import TestOutcome, bh_adjust, bootstrap_p, chisq_test, max_test, target_test
from .simlab import SimulationSpec, SimulationResult, TestConfig, gen_dataset, reproduce_table, run_cell
from .screenflow import (
    AnalyzeConfig,
    ProbeSetRecord,
    ScreenReport,
    analyze,
    emit_scatter,
    load_dataset,
    quantile_normalize,
    screen,
)

__version__ = "0.1.0"

__all__ = [
    "AnalyzeConfig",
    "DataMatrix",
    "DirectionSet",
    "GroupSpec",
    "ParseError",
    "PreconditionError",
    "ProbeSetRecord",
    "Rank2Fit",
    "ScreenReport",
    "SimulationResult",
    "SimulationSpec",
    "SvdResult",
    "TestConfig",
    "TestOutcome",
    "analyze",
    "emit_scatter",
    "load_dataset",
    "quantile_normalize",
    "screen",
    "bh_adjust",
    "bootstrap_p",
    "chisq_sf",
    "chisq_test",
    "complement_directions",
    "contrast_directions",
    "contribution_summary",
    "estimate_mu1",
    "fit_rank2",
    "gen_dataset",
    "hadamard_directions",
    "jacobi_eigh",
    "max_test",
    "normal_cdf",
    "normal_ppf",
    "reproduce_table",
    "resid_sigma2",
    "run_cell",
    "sigma_hat2",
    "svd_thin",
    "target_test",
    "two_group_direction",
    "validate_directions",
]
