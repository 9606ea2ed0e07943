"""Blended multi-class interaction primitives (B-BIP).

An ensemble Kalman filter over ``[phase, phase velocity, basis weights]``
with one sub-ensemble per interaction class. A reduced-rank LDA posterior
over the current observation scales each class's measurement update, and
the robot response is the posterior mixture of the per-class predictions.
"""

from .basis import BasisModel, design_matrix, features, fit_weights, observe, reconstruct
from .classifier import LdaClassifier, fit_lda, smooth_posterior
from .ensemble import Ensemble, EnsembleMember, init_ensemble, mean_state, predict, update
from .errors import (
    BbipError,
    LayoutError,
    ModelIntegrityError,
    ModelVersionError,
    NumericalError,
    PhaseDomainError,
    StatisticsError,
    TrainingError,
    TrajectoryParseError,
)
from .evaluation import EvalReport, correlation_lag, mse, run_corpus, switch_frame
from .model import (
    BbipModel,
    InferenceSession,
    StepOutput,
    TrainConfig,
    TrainingReport,
    load_model,
    save_model,
    train,
    train_single,
    train_with_report,
)
from .synthetic import SyntheticConfig, SyntheticCorpus, generate_synthetic
from .trajectory import (
    Demonstration,
    DofLayout,
    ObservationFrame,
    load_demonstrations,
    remove_outliers,
    write_demonstrations,
)

__version__ = "0.1.0"
