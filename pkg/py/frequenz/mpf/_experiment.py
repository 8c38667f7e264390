# License: MIT
# Copyright © 2024 Frequenz Energy-as-a-Service GmbH

"""Experiment configuration: which model, which data, which estimator."""

from __future__ import annotations  # required for constructor type hinting

import enum
import logging
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._baselines import CdConfig, MftTapConfig
from ._dataset import ContinuousDataset, DiscreteDataset
from ._exceptions import ValidationError
from ._io import ModelDocument, read_continuous, read_dataset, read_model
from ._model import (
    CouplingMatrix,
    IcaModel,
    IcaParameters,
    IsingModel,
    Support,
    SupportKind,
    random_full_glass,
    random_lattice_glass,
)
from ._mpf_continuous import HmcSchedule
from ._optimize import OptimizerOptions
from ._oracle import DEFAULT_CORRELATION_BUDGET
from ._samplers import ChainConfig, exact_sample, gibbs_sample, sample_ica, swendsen_wang_sample
from ._types import ConnectivityMode, FloatArray

_logger = logging.getLogger(__name__)

DEFAULT_SIGMA2 = 10.0
DEFAULT_N_SAMPLES = 20_000
DEFAULT_TRACK_INTERVAL = 0.5

_ICA_SCALE_RANGE = (1.0, 2.0)


class ModelFamily(enum.Enum):
    """The model families experiments can generate and fit."""

    ISING_LATTICE = "ising-lattice"
    """A spin glass with nearest-neighbor couplings on a 2-D lattice."""

    ISING_FULL = "ising-full"
    """A fully connected spin glass."""

    ICA = "ica"
    """Square independent component analysis with a Laplace prior."""


class EstimatorKind(enum.Enum):
    """The parameter estimators."""

    MPF = "mpf"
    PSEUDOLIKELIHOOD = "pl"
    CONTRASTIVE_DIVERGENCE = "cd"
    MFT_TAP = "mft-tap"
    MPF_HMC = "mpf-hmc"


class SamplerKind(enum.Enum):
    """The samplers used to generate binary datasets."""

    GIBBS = "gibbs"
    SWENDSEN_WANG = "sw"
    EXACT = "exact"


Truth: typing.TypeAlias = CouplingMatrix | IcaParameters
FamilyModel: typing.TypeAlias = IsingModel | IcaModel
Dataset: typing.TypeAlias = DiscreteDataset | ContinuousDataset


@dataclass(frozen=True)
class ModelSpec:
    """The generating model, or the family to fit when the truth is unknown.

    Attributes:
        family: The model family.
        rows: Lattice rows, for the lattice family.
        cols: Lattice columns, for the lattice family.
        d: The dimension of the full and ICA families; inferred from the data
            when omitted and only fitting.
        sigma2: Coupling variance of generated spin glasses.
        seed: Seed of the generated parameters.
        path: Read the true model from this file instead of generating it.
    """

    family: ModelFamily = ModelFamily.ISING_LATTICE
    rows: int = 10
    cols: int = 10
    d: int | None = None
    sigma2: float = DEFAULT_SIGMA2
    seed: int = 0
    path: Path | None = None

    def __post_init__(self) -> None:
        """Validate the settings.

        Raises:
            ValidationError: If a setting is out of range.
        """
        if self.rows < 1 or self.cols < 1:
            raise ValidationError(f"Invalid lattice {self.rows}x{self.cols}")
        if self.d is not None and self.d < 1:
            raise ValidationError(f"The dimension must be >= 1, got {self.d}")
        if not self.sigma2 > 0:
            raise ValidationError(f"sigma2 must be > 0, got {self.sigma2}")

    @property
    def is_ising(self) -> bool:
        """Whether the family has binary states."""
        return self.family is not ModelFamily.ICA

    def dimension(self) -> int | None:
        """Return the state dimension when it is fixed by the settings.

        Returns:
            `rows * cols` for lattices, `d` otherwise.
        """
        if self.family is ModelFamily.ISING_LATTICE:
            return self.rows * self.cols
        return self.d

    def generate(self) -> ModelDocument:
        """Draw the true model from the seeded generator.

        Returns:
            The model with its generation settings as metadata.

        Raises:
            ValidationError: If the dimension is not set.
        """
        metadata = {"family": self.family.value, "sigma2": self.sigma2, "seed": self.seed}
        if self.family is ModelFamily.ISING_LATTICE:
            coupling = random_lattice_glass(self.rows, self.cols, self.sigma2, self.seed)
            return ModelDocument(coupling, metadata)
        if self.d is None:
            raise ValidationError(f"Generating a {self.family.value} model needs a dimension")
        if self.family is ModelFamily.ISING_FULL:
            return ModelDocument(random_full_glass(self.d, self.sigma2, self.seed), metadata)
        filters = np.linalg.inv(random_mixing(self.d, self.seed))
        return ModelDocument(IcaParameters(filters), metadata)

    def load(self) -> ModelDocument:
        """Read the true model from `path`, or generate it.

        Returns:
            The true model.

        Raises:
            ValidationError: If the file does not hold a model of this family.
        """
        if self.path is None:
            return self.generate()
        document = read_model(self.path)
        if isinstance(document.model, IcaParameters) == self.is_ising:
            raise ValidationError(f"{self.path} does not hold a {self.family.value} model")
        return document

    def family_model(self, d: int) -> FamilyModel:
        """Build the model family to fit.

        Args:
            d: The data dimension.

        Returns:
            The family matching the settings.

        Raises:
            ValidationError: If `d` contradicts the settings.
        """
        expected = self.dimension()
        if expected is not None and expected != d:
            raise ValidationError(
                f"A {self.family.value} model of dimension {expected} cannot fit "
                f"data of dimension {d}"
            )
        if self.family is ModelFamily.ISING_LATTICE:
            return IsingModel(Support.lattice(self.rows, self.cols))
        if self.family is ModelFamily.ISING_FULL:
            return IsingModel(Support.full(d))
        return IcaModel(d)


def random_mixing(d: int, seed: int) -> FloatArray:
    """Draw a well-conditioned mixing matrix `Q diag(u)`.

    `Q` is a random orthogonal matrix and `u` is uniform on `[1, 2]`, so the
    condition number is at most 2.

    Args:
        d: The dimension.
        seed: The random seed.

    Returns:
        The `d x d` mixing matrix.
    """
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    q *= np.sign(np.diag(r))
    return np.asarray(q * rng.uniform(*_ICA_SCALE_RANGE, size=d))


def family_of(model: Truth) -> ModelSpec:
    """Derive the model settings matching a stored model.

    Args:
        model: The spin glass or ICA parameters.

    Returns:
        Settings whose family fits `model`.
    """
    if isinstance(model, IcaParameters):
        return ModelSpec(family=ModelFamily.ICA, d=model.d)
    support = model.support
    if support.kind is SupportKind.LATTICE and support.shape is not None:
        rows, cols = support.shape
        return ModelSpec(family=ModelFamily.ISING_LATTICE, rows=rows, cols=cols)
    return ModelSpec(family=ModelFamily.ISING_FULL, d=model.d)


@dataclass(frozen=True)
class DataSpec:
    """Where the data comes from.

    Attributes:
        path: Read the dataset from this file instead of sampling it.
        n_samples: Number of generated samples.
        sampler: The binary sampler.
        chain: The Markov chain settings, also the seed of every sampler.
    """

    path: Path | None = None
    n_samples: int = DEFAULT_N_SAMPLES
    sampler: SamplerKind = SamplerKind.GIBBS
    chain: ChainConfig = field(default_factory=ChainConfig)

    def __post_init__(self) -> None:
        """Validate the settings.

        Raises:
            ValidationError: If the sample count is negative.
        """
        if self.n_samples < 0:
            raise ValidationError(f"n_samples must be >= 0, got {self.n_samples}")

    def generate(self, truth: Truth) -> Dataset:
        """Sample a dataset from the true model.

        Args:
            truth: The generating model.

        Returns:
            The samples.
        """
        _logger.info(
            "Drawing %d samples with the %s sampler", self.n_samples, self.sampler.value
        )
        if isinstance(truth, IcaParameters):
            mixing = np.linalg.inv(truth.filters)
            return sample_ica(mixing, self.n_samples, self.chain.seed)
        if self.sampler is SamplerKind.EXACT:
            return exact_sample(truth, self.n_samples, self.chain.seed)
        if self.sampler is SamplerKind.SWENDSEN_WANG:
            return swendsen_wang_sample(truth, self.n_samples, self.chain)
        return gibbs_sample(truth, self.n_samples, self.chain)

    def load(self, continuous: bool) -> Dataset:
        """Read the dataset file.

        Args:
            continuous: Whether the file holds real-valued observations.

        Returns:
            The dataset.

        Raises:
            ValidationError: If no path is set.
        """
        if self.path is None:
            raise ValidationError("No dataset file given")
        return read_continuous(self.path) if continuous else read_dataset(self.path)


@dataclass(frozen=True)
class EstimatorSpec:
    """The estimator and its settings.

    Only the settings of the selected estimator are used.

    Attributes:
        kind: The estimator.
        mode: Connectivity of MPF.
        complement_flip: Also connect data states to their complements in MPF.
        l2: Weight of an L2 penalty on the MPF objective.
        cd: Contrastive divergence settings.
        mft: Mean-field inversion settings.
        hmc: Hamiltonian MPF settings.
        label: Name of the run in reports and benchmark tables.
    """

    kind: EstimatorKind = EstimatorKind.MPF
    mode: ConnectivityMode = ConnectivityMode.STRICT
    complement_flip: bool = False
    l2: float = 0.0
    cd: CdConfig = field(default_factory=CdConfig)
    mft: MftTapConfig = field(default_factory=MftTapConfig)
    hmc: HmcSchedule = field(default_factory=HmcSchedule)
    label: str = ""

    def __post_init__(self) -> None:
        """Validate the settings.

        Raises:
            ValidationError: If the penalty is negative.
        """
        if self.l2 < 0:
            raise ValidationError(f"l2 must be >= 0, got {self.l2}")

    @property
    def name(self) -> str:
        """The label, or a name derived from the estimator settings."""
        if self.label:
            return self.label
        if self.kind is EstimatorKind.CONTRASTIVE_DIVERGENCE:
            return f"cd-{self.cd.k}"
        return self.kind.value


@dataclass(frozen=True)
class ExperimentConfig:
    """A complete experiment: true model, data, estimator and tracking.

    Attributes:
        model: The model settings.
        data: The data settings.
        estimator: The estimator settings.
        optimizer: L-BFGS settings of the optimizer-based estimators.
        track_interval: Wall-clock seconds between tracked trace rows; 0
            tracks every iteration.
        correlation_budget: Gibbs samples for model correlations when `d > 20`.
    """

    model: ModelSpec = field(default_factory=ModelSpec)
    data: DataSpec = field(default_factory=DataSpec)
    estimator: EstimatorSpec = field(default_factory=EstimatorSpec)
    optimizer: OptimizerOptions = field(default_factory=OptimizerOptions)
    track_interval: float = DEFAULT_TRACK_INTERVAL
    correlation_budget: int = DEFAULT_CORRELATION_BUDGET

    def __post_init__(self) -> None:
        """Validate that the parts fit together.

        Raises:
            ValidationError: If the estimator cannot fit the model family, a
                referenced file is missing or a setting is out of range.
        """
        hmc = self.estimator.kind is EstimatorKind.MPF_HMC
        if hmc == self.model.is_ising:
            raise ValidationError(
                f"Estimator {self.estimator.kind.value} cannot fit the "
                f"{self.model.family.value} family"
            )
        for path in (self.model.path, self.data.path):
            if path is not None and not Path(path).is_file():
                raise ValidationError(f"File not found: {path}")
        if self.track_interval < 0:
            raise ValidationError(f"track_interval must be >= 0, got {self.track_interval}")
        if self.correlation_budget < 1:
            raise ValidationError(
                f"correlation_budget must be >= 1, got {self.correlation_budget}"
            )

    @property
    def truth_known(self) -> bool:
        """Whether a true model is available: read from a file or generated with the data."""
        return self.model.path is not None or self.data.path is None


@dataclass(frozen=True, eq=False)
class Experiment:
    """A resolved experiment, ready to fit.

    Attributes:
        config: The settings it was resolved from.
        family: The model family to fit.
        data: The dataset.
        truth: The true model, when known.
    """

    config: ExperimentConfig
    family: FamilyModel
    data: Dataset
    truth: Truth | None


def resolve(config: ExperimentConfig) -> Experiment:
    """Load or generate the true model and the data of an experiment.

    Args:
        config: The experiment settings.

    Returns:
        The model family, data and truth.

    Raises:
        ValidationError: If the data does not match the model family.
    """
    truth: Truth | None = None
    if config.truth_known:
        truth = config.model.load().model
    if config.data.path is None:
        assert truth is not None
        data: Dataset = config.data.generate(truth)
    else:
        data = config.data.load(continuous=not config.model.is_ising)
    if truth is not None and truth.d != data.d:
        raise ValidationError(
            f"The true model has dimension {truth.d} but the data has {data.d}"
        )
    family: FamilyModel
    if isinstance(truth, CouplingMatrix):
        family = IsingModel(truth.support)
    elif isinstance(truth, IcaParameters):
        family = IcaModel(truth.d)
    else:
        family = config.model.family_model(data.d)
    return Experiment(config, family, data, truth)
