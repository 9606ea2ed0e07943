"""Blended multi-class interaction primitives: training, online inference, model files.

A model keeps one ensemble per interaction class. At every frame the
classifier posterior ``p_c`` scales that class's measurement update, and
the controlled-DoF response is the ``p_c``-weighted mixture of each class's
mean reconstruction. A single-class model is a plain interaction primitive
filter.

Model file format
-----------------
UTF-8 text, three parts::

    BBIP-MODEL <format version>
    sha256 <hex digest of the body bytes>
    <body: canonical JSON, sorted keys, one-space indent>

Body fields: ``format_version``, ``basis`` (dof_count, count, width,
overhang, ridge), ``layout`` (controlled, observed, names), ``classes``
(ordered ids), ``config`` (the :class:`TrainConfig`), ``ensembles`` (per
class: ``states`` as ``E x (2 + B*D)`` rows ``[phase, phase velocity,
weights...]``, ``process_noise``, ``measurement_noise``) and
``classifier`` (LDA parameters, ``null`` for a single class). Floats are
written with ``repr`` so load -> save reproduces the file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .basis import PHASE_MARGIN, BasisModel, fit_weights, observe, residual_variance
from .classifier import LdaClassifier, fit_lda, smooth_posterior, softmax
from .ensemble import (
    Ensemble,
    EnsembleMember,
    default_process_noise,
    init_ensemble,
    mean_state,
    predict,
    update,
)
from .errors import ModelIntegrityError, ModelVersionError, TrainingError
from .trajectory import Demonstration, DofLayout, ObservationFrame, remove_outliers

FORMAT_VERSION = 1
_MAGIC = "BBIP-MODEL"


@dataclass(frozen=True)
class TrainConfig:
    basis_count: int = 15
    basis_width: float | None = None
    basis_overhang: float | None = None
    ridge: float = 1e-6
    phase_noise: float = 1e-6
    velocity_noise: float = 1e-8
    weight_noise: float = 1e-6
    # multiplies the residual-variance estimate of the measurement noise; the
    # fit residual alone ignores demo-to-demo variation the ensemble cannot span
    measurement_noise_scale: float = 100.0
    # phase velocity kept within [lo * slowest, hi * fastest] demo; None disables
    velocity_band: tuple[float, float] | None = (1.0, 1.0)
    outlier_sigmas: float = 4.0
    reject_outliers: bool = True
    lda_ridge: float = 1e-6

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if d.get("velocity_band") is not None:
            d["velocity_band"] = tuple(d["velocity_band"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class BbipModel:
    basis: BasisModel
    layout: DofLayout
    classes: tuple[str, ...]
    ensembles: Mapping[str, Ensemble]
    classifier: LdaClassifier | None
    config: TrainConfig = field(default_factory=TrainConfig)
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        if set(self.ensembles) != set(self.classes):
            raise ValueError("ensembles must have exactly one entry per class")
        if (self.classifier is not None) != (len(self.classes) >= 2):
            raise ValueError("a classifier is required iff there are at least 2 classes")
        if self.classifier is not None and tuple(self.classifier.classes) != tuple(self.classes):
            raise ValueError("classifier class order differs from the model's")
        for c, ens in self.ensembles.items():
            if ens.size < 2:
                raise ValueError(f"class {c!r} has fewer than 2 ensemble members")

    @property
    def ensemble_sizes(self) -> dict[str, int]:
        return {c: self.ensembles[c].size for c in self.classes}

    def session(self, seed: int = 0, **options) -> "InferenceSession":
        return InferenceSession(self, seed, **options)

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "basis": self.basis.to_dict(),
            "layout": self.layout.to_dict(),
            "classes": list(self.classes),
            "config": self.config.to_dict(),
            "ensembles": {
                c: {
                    "states": self.ensembles[c].states.tolist(),
                    "process_noise": self.ensembles[c].process_noise.tolist(),
                    "measurement_noise": self.ensembles[c].measurement_noise.tolist(),
                    "velocity_bounds": (list(self.ensembles[c].velocity_bounds)
                                        if self.ensembles[c].velocity_bounds is not None else None),
                }
                for c in self.classes
            },
            "classifier": self.classifier.to_dict() if self.classifier is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BbipModel":
        ensembles = {
            c: Ensemble(np.array(e["states"], dtype=float), e["process_noise"], e["measurement_noise"],
                        e["velocity_bounds"])
            for c, e in d["ensembles"].items()
        }
        return cls(
            basis=BasisModel.from_dict(d["basis"]),
            layout=DofLayout.from_dict(d["layout"]),
            classes=tuple(d["classes"]),
            ensembles=ensembles,
            classifier=LdaClassifier.from_dict(d["classifier"]) if d["classifier"] is not None else None,
            config=TrainConfig.from_dict(d["config"]),
            format_version=d["format_version"],
        )


@dataclass
class TrainingReport:
    demo_counts: dict[str, int]
    rejected: dict[str, list[int]]
    fit_rmse: list[float]  # per DoF, over the kept demonstrations
    measurement_noise: list[float]
    lda_eigenvalues: list[float] | None

    def to_dict(self) -> dict:
        return asdict(self)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except TrainingError:
        raise
    except Exception as exc:
        raise TrainingError(name, exc) from exc


def train_with_report(demos_by_class: Mapping[str, Sequence[Demonstration]],
                      config: TrainConfig | None = None) -> tuple[BbipModel, TrainingReport]:
    """Train a model and return it with a summary of what training did.

    Pipeline: per-class outlier rejection, per-demo weight fitting,
    per-class ensemble initialization, then LDA over all kept demos when
    there are two or more classes. Fully deterministic.
    """
    config = config or TrainConfig()
    classes = tuple(demos_by_class)
    if not classes:
        raise TrainingError("input", ValueError("no classes given"))
    layouts = {d.layout for c in classes for d in demos_by_class[c]}
    if len(layouts) != 1:
        raise TrainingError("input", ValueError("demonstrations must share exactly one DoF layout"))
    layout = layouts.pop()

    kept: dict[str, list[Demonstration]] = {}
    rejected: dict[str, list[int]] = {}
    for c in classes:
        demos = list(demos_by_class[c])
        if config.reject_outliers:
            kept[c], rejected[c] = _stage(f"outliers[{c}]", remove_outliers, demos, config.outlier_sigmas)
        else:
            kept[c], rejected[c] = demos, []
        if len(kept[c]) < 2:
            raise TrainingError(f"outliers[{c}]", ValueError(
                f"class {c!r} has {len(kept[c])} demonstrations left, need >= 2"))

    basis = _stage("basis", BasisModel, layout.dof_count, config.basis_count, config.basis_width,
                   config.basis_overhang, config.ridge)
    weights = {c: [_stage(f"fit[{c}]", fit_weights, d, basis) for d in kept[c]] for c in classes}

    all_demos = [d for c in classes for d in kept[c]]
    all_weights = [w for c in classes for w in weights[c]]
    resid = residual_variance(all_demos, basis, all_weights)
    R = config.measurement_noise_scale * resid[list(layout.observed)]
    Q = default_process_noise(basis.weight_count, config.phase_noise, config.velocity_noise,
                              config.weight_noise)

    ensembles = {
        c: _stage(f"ensemble[{c}]", init_ensemble, weights[c], [d.sample_count for d in kept[c]], Q, R,
                 config.velocity_band)
        for c in classes
    }
    classifier = None
    if len(classes) >= 2:
        labelled = [Demonstration(d.values, d.layout, c) for c in classes for d in kept[c]]
        classifier = _stage("classifier", fit_lda, labelled, classes, config.lda_ridge)

    model = BbipModel(basis, layout, classes, ensembles, classifier, config)
    report = TrainingReport(
        demo_counts={c: len(demos_by_class[c]) for c in classes},
        rejected=rejected,
        fit_rmse=np.sqrt(resid).tolist(),
        measurement_noise=R.tolist(),
        lda_eigenvalues=classifier.eigenvalues.tolist() if classifier is not None else None,
    )
    return model, report


def train(demos_by_class: Mapping[str, Sequence[Demonstration]], config: TrainConfig | None = None) -> BbipModel:
    return train_with_report(demos_by_class, config)[0]


def train_single(demos: Sequence[Demonstration], config: TrainConfig | None = None,
                 label: str = "all") -> BbipModel:
    """Single-class model over every demonstration, ignoring their labels."""
    return train({label: list(demos)}, config)


# -- inference -----------------------------------------------------------------

class StepOutput(NamedTuple):
    frame_index: int
    class_posterior: np.ndarray
    mean_states: tuple[EnsembleMember, ...]  # one per class, model class order
    response: np.ndarray  # controlled DoFs

    @property
    def phases(self) -> np.ndarray:
        return np.array([m.phase for m in self.mean_states])


class InferenceSession:
    """One interaction: feed observed frames with :meth:`step`, read predictions.

    Options (all off by default):

    ``smoothing_half_life``
        exponentially smooth the class posterior over frames.
    ``cumulative``
        score classes by the summed per-frame log-likelihood of the whole
        history instead of the current frame alone.
    ``phase_fusion``
        evaluate every class's response at the posterior-weighted mean
        phase instead of each class's own phase.
    """

    def __init__(self, model: BbipModel, seed: int = 0, smoothing_half_life: float | None = None,
                 cumulative: bool = False, phase_fusion: bool = False):
        self.model = model
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.ensembles = [model.ensembles[c] for c in model.classes]
        n = len(model.classes)
        self.posterior = (model.classifier.priors.copy() if model.classifier is not None
                          else np.ones(1))
        self.smoothing_half_life = smoothing_half_life
        self.cumulative = cumulative
        self.phase_fusion = phase_fusion
        self._log_likelihood = np.zeros(n)
        self.frame_count = 0
        self.finished = False
        self.last_output: StepOutput | None = None

    def _class_posterior(self, y: np.ndarray) -> np.ndarray:
        clf = self.model.classifier
        if clf is None:
            return np.ones(1)
        if self.cumulative:
            self._log_likelihood += clf.scores(y) - np.log(clf.priors)
            p = softmax(self._log_likelihood + np.log(clf.priors))
        else:
            p = clf.posterior(y)
        if self.smoothing_half_life:
            p = smooth_posterior(self.posterior, p, self.smoothing_half_life)
        return p

    def _responses(self, phases: Sequence[float], means: Sequence[EnsembleMember]) -> np.ndarray:
        b, dofs = self.model.basis, self.model.layout.controlled
        return np.vstack([observe(b, ph, m.weights, dofs) for ph, m in zip(phases, means)])

    def _mixture_phases(self, means, posterior) -> list[float]:
        phases = [m.phase for m in means]
        if self.phase_fusion:
            fused = float(np.dot(posterior, phases))
            phases = [fused] * len(phases)
        return phases

    def step(self, frame, forced_posterior=None) -> StepOutput:
        """Process one observed frame.

        ``forced_posterior`` replaces the classifier output for this frame;
        it exists for tests and controlled experiments.
        """
        y = np.asarray(getattr(frame, "values", frame), dtype=float).reshape(-1)
        if y.shape != (len(self.model.layout.observed),):
            raise ValueError(f"frame has {y.size} values, model observes {len(self.model.layout.observed)} DoFs")
        if self.finished:
            return self.last_output

        if forced_posterior is not None:
            p = np.asarray(forced_posterior, dtype=float)
            if p.shape != (len(self.model.classes),):
                raise ValueError("forced posterior has the wrong number of classes")
        else:
            p = self._class_posterior(y)

        obs = ObservationFrame(y, self.frame_count)
        for i, ens in enumerate(self.ensembles):
            ens = predict(ens, self.rng)
            self.ensembles[i] = update(ens, obs, self.model.basis, self.model.layout, float(p[i]), self.rng)

        means = tuple(mean_state(e) for e in self.ensembles)
        response = p @ self._responses(self._mixture_phases(means, p), means)
        self.posterior = p
        out = StepOutput(self.frame_count, p, means, response)
        self.frame_count += 1
        self.last_output = out
        if float(np.dot(p, [m.phase for m in means])) > 1.0:
            self.finished = True
        return out

    def run(self, frames) -> list[StepOutput]:
        return [self.step(f) for f in frames]

    def respond(self, horizon: int) -> np.ndarray:
        """Roll the current class means forward ``horizon`` samples (``|D_c| x horizon``).

        Column ``k`` evaluates each class at ``phase + k * velocity``;
        column 0 equals the last step's response.
        """
        if self.last_output is None:
            raise RuntimeError("respond() needs at least one processed frame")
        n_c = len(self.model.layout.controlled)
        if horizon <= 0:
            return np.zeros((n_c, 0))
        means, p = self.last_output.mean_states, self.last_output.class_posterior
        out = np.empty((n_c, horizon))
        for k in range(horizon):
            ahead = [EnsembleMember(float(np.clip(m.phase + k * m.phase_velocity, 0.0, 1.0 + PHASE_MARGIN)),
                                    m.phase_velocity, m.weights) for m in means]
            out[:, k] = p @ self._responses(self._mixture_phases(ahead, p), ahead)
        return out


# -- model files ---------------------------------------------------------------

def dumps_model(model: BbipModel) -> str:
    body = json.dumps(model.to_dict(), sort_keys=True, indent=1, allow_nan=False) + "\n"
    digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
    return f"{_MAGIC} {model.format_version}\nsha256 {digest}\n{body}"


def loads_model(text: str) -> BbipModel:
    head, sep, rest = text.partition("\n")
    parts = head.split(" ")
    if len(parts) != 2 or parts[0] != _MAGIC:
        raise ModelIntegrityError("not a model file: missing header line")
    try:
        version = int(parts[1])
    except ValueError:
        raise ModelIntegrityError(f"bad format version {parts[1]!r}") from None
    if version != FORMAT_VERSION:
        raise ModelVersionError(version, FORMAT_VERSION)
    check, sep2, body = rest.partition("\n")
    if not sep or not sep2 or not check.startswith("sha256 "):
        raise ModelIntegrityError("model file is truncated: missing checksum line")
    if hashlib.sha256(body.encode("utf-8")).hexdigest() != check[len("sha256 "):]:
        raise ModelIntegrityError("model file checksum mismatch (truncated or modified)")
    try:
        data = json.loads(body)
    except json.JSONDecodeError as exc:
        raise ModelIntegrityError(f"model body is not valid JSON: {exc}") from None
    if data.get("format_version") != version:
        raise ModelIntegrityError("format version in body disagrees with header")
    return BbipModel.from_dict(data)


def atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(model: BbipModel, path) -> None:
    atomic_write_text(path, dumps_model(model))


def load_model(path) -> BbipModel:
    with open(path, encoding="utf-8", newline="") as fh:
        return loads_model(fh.read())
