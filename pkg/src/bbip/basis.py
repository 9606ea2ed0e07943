"""Normalized Gaussian basis over phase and least-squares weight fitting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NumericalError
from .trajectory import Demonstration

# How far past 1.0 the phase may run before it is clamped.
PHASE_MARGIN = 0.05
NOISE_VARIANCE_FLOOR = 1e-6


@dataclass(frozen=True)
class BasisModel:
    """Shared Gaussian basis for every DoF.

    ``count`` centers are spread uniformly over ``[-overhang, 1 + overhang]``
    and each feature row is normalized to sum to one, so a constant weight
    vector reproduces that constant at any phase.
    """

    dof_count: int
    count: int = 15
    width: float | None = None
    overhang: float | None = None
    ridge: float = 1e-6

    def __post_init__(self):
        if self.count < 2:
            raise ValueError(f"need at least 2 basis functions, got {self.count}")
        if self.dof_count < 1:
            raise ValueError("dof_count must be positive")
        if self.width is None:
            object.__setattr__(self, "width", 1.5 / self.count)
        if self.overhang is None:
            object.__setattr__(self, "overhang", 2.0 / self.count)
        if not self.width > 0:
            raise ValueError(f"basis width must be positive, got {self.width}")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")
        object.__setattr__(self, "width", float(self.width))
        object.__setattr__(self, "overhang", float(self.overhang))
        object.__setattr__(self, "ridge", float(self.ridge))

    @property
    def centers(self) -> np.ndarray:
        return np.linspace(-self.overhang, 1.0 + self.overhang, self.count)

    @property
    def weight_count(self) -> int:
        return self.count * self.dof_count

    def to_dict(self) -> dict:
        return {"dof_count": self.dof_count, "count": self.count, "width": self.width,
                "overhang": self.overhang, "ridge": self.ridge}

    @classmethod
    def from_dict(cls, d: dict) -> "BasisModel":
        return cls(**d)


def features(model: BasisModel, phase) -> np.ndarray:
    """Feature row(s) at ``phase``.

    A scalar phase gives a length-``count`` row, an array of N phases an
    ``N x count`` matrix. Phases are clamped to ``[0, 1 + PHASE_MARGIN]``.
    """
    phase = np.clip(np.asarray(phase, dtype=float), 0.0, 1.0 + PHASE_MARGIN)
    expo = -((phase[..., None] - model.centers) ** 2) / (2.0 * model.width**2)
    expo -= expo.max(axis=-1, keepdims=True)
    act = np.exp(expo)
    return act / act.sum(axis=-1, keepdims=True)


def design_matrix(model: BasisModel, T: int) -> np.ndarray:
    """``T x count`` matrix of feature rows at the sample phases ``t / (T - 1)``."""
    return features(model, np.linspace(0.0, 1.0, T))


def fit_weights(demo: Demonstration, model: BasisModel, ridge: float | None = None) -> np.ndarray:
    """Least-squares basis weights for every DoF of ``demo``.

    Minimizes ``||y_d - Phi w_d||^2 + ridge * ||w_d||^2`` per DoF and returns
    the per-DoF blocks concatenated in DoF order (length ``count * D``).
    ``ridge=0`` gives plain least squares and raises
    :class:`NumericalError` when the design matrix is rank deficient.
    """
    lam = model.ridge if ridge is None else float(ridge)
    if demo.values.shape[0] != model.dof_count:
        raise ValueError(f"demo has {demo.values.shape[0]} DoFs, basis expects {model.dof_count}")
    phi = design_matrix(model, demo.sample_count)
    Y = demo.values.T
    if lam > 0:
        # augmented system is better conditioned than forming the Gram matrix
        phi = np.vstack([phi, np.sqrt(lam) * np.eye(model.count)])
        Y = np.vstack([Y, np.zeros((model.count, Y.shape[1]))])
    W, _, rank, _ = np.linalg.lstsq(phi, Y, rcond=None)
    if rank < model.count:
        raise NumericalError(
            f"basis design matrix has rank {rank} < {model.count} with ridge={lam}; "
            "use more samples, fewer basis functions or a positive ridge"
        )
    return W.T.reshape(-1)


def weight_blocks(model: BasisModel, w: np.ndarray) -> np.ndarray:
    """View ``w`` as a ``D x count`` matrix, one row of weights per DoF."""
    w = np.asarray(w, dtype=float)
    if w.shape[-1] != model.weight_count:
        raise ValueError(f"weight vector has length {w.shape[-1]}, expected {model.weight_count}")
    return w.reshape(*w.shape[:-1], model.dof_count, model.count)


def observe(model: BasisModel, phase: float, w: np.ndarray, dofs: Sequence[int]) -> np.ndarray:
    """Noise-free predicted measurement of ``dofs`` at ``phase``."""
    dofs = list(dofs)
    if not dofs:
        return np.zeros(0)
    return weight_blocks(model, w)[dofs] @ features(model, phase)


def reconstruct(model: BasisModel, w: np.ndarray, T: int) -> np.ndarray:
    """``D x T`` trajectory generated by weights ``w`` over ``T`` samples."""
    return weight_blocks(model, w) @ design_matrix(model, T).T


def residual_variance(demos: Sequence[Demonstration], model: BasisModel,
                      weights: Sequence[np.ndarray] | None = None) -> np.ndarray:
    """Per-DoF variance of the fit residuals pooled over ``demos``."""
    if weights is None:
        weights = [fit_weights(d, model) for d in demos]
    sq = np.zeros(model.dof_count)
    n = 0
    for demo, w in zip(demos, weights):
        resid = demo.values - reconstruct(model, w, demo.sample_count)
        sq += (resid**2).sum(axis=1)
        n += demo.sample_count
    return np.maximum(sq / n, NOISE_VARIANCE_FLOOR)
