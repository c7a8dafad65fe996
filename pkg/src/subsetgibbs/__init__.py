"""Budget-calibrated Bayesian regression via a subset-resampling Gibbs sampler.

The sampler redraws a without-replacement data subset of size n at every
sweep and updates the regression blocks from their conjugate full
conditionals given that subset, so per-sweep cost is governed by n rather
than the dataset size.  The calibration harness runs a grid of subset
sizes, times them, and picks the n whose full fit lands closest to a
wall-clock budget without exceeding it.
"""

from .calibrate import (
    CalibrationReport,
    SweepPlan,
    pairwise_difference,
    run_sweep,
    select_budget_n,
    write_report_csv,
    write_summary_json,
)
from .distributions import (
    MlbParams,
    draw_inverse_gamma,
    draw_normal,
    draw_srswor,
    make_rng,
    mlb_log_density,
    spawn_rng,
    spawn_seed,
)
from .errors import InvalidParameterError, NumericalError
from .gibbs import ChainOutput, Clock, run_chain
from .model import (
    BasisConfig,
    ChainState,
    DatasetView,
    FixedVariances,
    SamplerConfig,
    SubsetMask,
    build_subset_design,
    kernel_matrix,
    predict_mu,
)
from .simdata import (
    Ar1Config,
    SplitDataset,
    equally_spaced_indices,
    generate_ar1,
    rmspe,
    rste,
    split_holdout,
)

__version__ = "0.1.0"

__all__ = [
    "Ar1Config",
    "BasisConfig",
    "CalibrationReport",
    "ChainOutput",
    "ChainState",
    "Clock",
    "DatasetView",
    "FixedVariances",
    "InvalidParameterError",
    "MlbParams",
    "NumericalError",
    "SamplerConfig",
    "SplitDataset",
    "SubsetMask",
    "SweepPlan",
    "build_subset_design",
    "draw_inverse_gamma",
    "draw_normal",
    "draw_srswor",
    "equally_spaced_indices",
    "generate_ar1",
    "kernel_matrix",
    "make_rng",
    "mlb_log_density",
    "pairwise_difference",
    "predict_mu",
    "rmspe",
    "rste",
    "run_chain",
    "run_sweep",
    "select_budget_n",
    "spawn_rng",
    "spawn_seed",
    "split_holdout",
    "write_report_csv",
    "write_summary_json",
]
