# License: MIT
# Copyright © 2024 Frequenz Energy-as-a-Service GmbH

"""Minimum probability flow learning for energy-based models.

The package fits the parameters of Ising spin glasses and square ICA models
by minimizing the probability flow out of the data states. It also ships
comparison estimators, samplers, an exact small-system oracle and an
experiment harness.
"""

from ._baselines import (
    CdConfig,
    MftTapConfig,
    cd_train,
    fit_pseudolikelihood,
    mft_tap_fit,
    pseudolikelihood_objective,
)
from ._checks import CheckName, CheckResult, Measurement, run_check
from ._dataset import ContinuousDataset, DiscreteDataset, enumerate_states, state_index
from ._exceptions import (
    DimensionMismatchError,
    EnumerationLimitError,
    MpfError,
    NonFiniteError,
    SchemaError,
    SupportError,
    ValidationError,
)
from ._experiment import (
    DataSpec,
    EstimatorKind,
    EstimatorSpec,
    Experiment,
    ExperimentConfig,
    ModelFamily,
    ModelSpec,
    SamplerKind,
    random_mixing,
    resolve,
)
from ._harness import (
    BenchResult,
    FitResult,
    TimingResult,
    VisitedPoint,
    fit_experiment,
    generate_files,
    run_bench,
    select_rows,
    timing_sweep,
    write_bench_csv,
)
from ._io import (
    ModelDocument,
    read_continuous,
    read_dataset,
    read_model,
    write_continuous,
    write_dataset,
    write_model,
)
from ._metrics import (
    correlation_error,
    coupling_error,
    empirical_correlations,
    mean_abs_correlation_error,
)
from ._model import (
    ContinuousEnergyModel,
    CouplingMatrix,
    DiscreteEnergyModel,
    GaussianModel,
    IcaModel,
    IcaParameters,
    IsingModel,
    Support,
    SupportKind,
    as_states,
    flip,
    flip_energy_delta,
    ica_energy,
    ica_energy_grad_x,
    ica_param_grad,
    ising_energy,
    ising_param_grad,
    random_full_glass,
    random_lattice_glass,
)
from ._mpf_continuous import (
    HmcConnectivity,
    HmcSchedule,
    HmpfObjective,
    LeapfrogConfig,
    PhaseState,
    augment_momenta,
    cube_mpf_objective,
    hmpf_objective,
    initial_ica_parameters,
    iterate_mpf_hmc,
    leapfrog_transit,
    score_matching_objective,
)
from ._mpf_discrete import (
    BitFlipConnectivity,
    SampledConnectivity,
    expected_sampled_objective,
    fit_mpf,
    mpf_objective,
    mpf_objective_sampled,
    stationarity_residual,
)
from ._optimize import (
    LinearSchedule,
    OptimizerOptions,
    OptimizeStatus,
    OptimizeTrace,
    TraceRecord,
    Trajectory,
    gd_minimize,
    lbfgs_minimize,
)
from ._oracle import (
    EnumeratedDistribution,
    FullGamma,
    enumerate_distribution,
    exact_kl,
    exact_ml_fit,
    exact_nll,
    finite_diff_grad,
    full_gamma,
    gibbs_kernel,
    ica_log_likelihood,
    model_pair_correlations,
    propagate,
)
from ._report import FitReport, TrackRow, read_report, write_report
from ._samplers import (
    ChainConfig,
    SpinParameters,
    exact_sample,
    gibbs_sample,
    sample_ica,
    swendsen_wang_sample,
)
from ._types import ConnectivityMode, ObjectiveDiagnostics, ObjectiveEval, ParameterLayout

__all__ = [
    "BenchResult",
    "BitFlipConnectivity",
    "CdConfig",
    "ChainConfig",
    "CheckName",
    "CheckResult",
    "ConnectivityMode",
    "ContinuousDataset",
    "ContinuousEnergyModel",
    "CouplingMatrix",
    "DataSpec",
    "DimensionMismatchError",
    "DiscreteDataset",
    "DiscreteEnergyModel",
    "EnumeratedDistribution",
    "EnumerationLimitError",
    "EstimatorKind",
    "EstimatorSpec",
    "Experiment",
    "ExperimentConfig",
    "FitReport",
    "FitResult",
    "FullGamma",
    "GaussianModel",
    "HmcConnectivity",
    "HmcSchedule",
    "HmpfObjective",
    "IcaModel",
    "IcaParameters",
    "IsingModel",
    "LeapfrogConfig",
    "LinearSchedule",
    "Measurement",
    "MftTapConfig",
    "ModelDocument",
    "ModelFamily",
    "ModelSpec",
    "MpfError",
    "NonFiniteError",
    "ObjectiveDiagnostics",
    "ObjectiveEval",
    "OptimizeStatus",
    "OptimizeTrace",
    "OptimizerOptions",
    "ParameterLayout",
    "PhaseState",
    "SampledConnectivity",
    "SamplerKind",
    "SchemaError",
    "SpinParameters",
    "Support",
    "SupportError",
    "SupportKind",
    "TimingResult",
    "TraceRecord",
    "TrackRow",
    "Trajectory",
    "ValidationError",
    "VisitedPoint",
    "as_states",
    "augment_momenta",
    "cd_train",
    "correlation_error",
    "coupling_error",
    "cube_mpf_objective",
    "empirical_correlations",
    "enumerate_distribution",
    "enumerate_states",
    "exact_kl",
    "exact_ml_fit",
    "exact_nll",
    "exact_sample",
    "expected_sampled_objective",
    "finite_diff_grad",
    "fit_experiment",
    "fit_mpf",
    "fit_pseudolikelihood",
    "flip",
    "flip_energy_delta",
    "full_gamma",
    "gd_minimize",
    "generate_files",
    "gibbs_kernel",
    "gibbs_sample",
    "hmpf_objective",
    "ica_energy",
    "ica_energy_grad_x",
    "ica_log_likelihood",
    "ica_param_grad",
    "initial_ica_parameters",
    "ising_energy",
    "ising_param_grad",
    "iterate_mpf_hmc",
    "lbfgs_minimize",
    "leapfrog_transit",
    "mean_abs_correlation_error",
    "mft_tap_fit",
    "model_pair_correlations",
    "mpf_objective",
    "mpf_objective_sampled",
    "propagate",
    "pseudolikelihood_objective",
    "random_full_glass",
    "random_lattice_glass",
    "random_mixing",
    "read_continuous",
    "read_dataset",
    "read_model",
    "read_report",
    "resolve",
    "run_bench",
    "run_check",
    "sample_ica",
    "score_matching_objective",
    "select_rows",
    "state_index",
    "stationarity_residual",
    "swendsen_wang_sample",
    "timing_sweep",
    "write_bench_csv",
    "write_continuous",
    "write_dataset",
    "write_model",
    "write_report",
]
