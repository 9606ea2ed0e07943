"""Stochastic ensemble Kalman filter over the state ``[phase, phase velocity, weights]``.

Each row of :attr:`Ensemble.states` is one member. Operations are
functional: they return a new :class:`Ensemble` and never modify their
input. Random draws always happen in the same order and amount for a given
ensemble shape so seeded streams stay aligned:

* :func:`predict` draws ``standard_normal((E, n))`` once,
* :func:`update` draws ``standard_normal((E, m))`` once, even when the
  gain weight is zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .basis import PHASE_MARGIN, BasisModel, features, weight_blocks
from .trajectory import DofLayout, ObservationFrame

DEFAULT_PHASE_NOISE = 1e-6
DEFAULT_VELOCITY_NOISE = 1e-8
DEFAULT_WEIGHT_NOISE = 1e-6
INNOVATION_JITTER = 1e-9


class EnsembleMember(NamedTuple):
    phase: float
    phase_velocity: float
    weights: np.ndarray


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Ensemble:
    """``E x (2 + B*D)`` member states with diagonal process and measurement noise.

    ``velocity_bounds`` optionally confines the phase velocity during
    :func:`predict`, so members whose updates were dominated by another
    class's data keep advancing through the primitive.
    """

    states: np.ndarray
    process_noise: np.ndarray
    measurement_noise: np.ndarray
    velocity_bounds: tuple[float, float] | None = None

    def __post_init__(self):
        states = _readonly(self.states)
        Q = _readonly(self.process_noise).reshape(-1)
        R = _readonly(self.measurement_noise).reshape(-1)
        if states.ndim != 2 or states.shape[0] < 2:
            raise ValueError(f"ensemble needs a 2-D state matrix with >= 2 members, got {states.shape}")
        if Q.shape != (states.shape[1],):
            raise ValueError(f"process noise has length {Q.size}, state dimension is {states.shape[1]}")
        if np.any(Q < 0):
            raise ValueError("process noise variances must be >= 0")
        if R.size == 0 or np.any(R <= 0):
            raise ValueError("measurement noise variances must be > 0")
        if not np.all(np.isfinite(states)):
            raise ValueError("ensemble state is not finite")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "process_noise", Q)
        object.__setattr__(self, "measurement_noise", R)
        if self.velocity_bounds is not None:
            lo, hi = (float(v) for v in self.velocity_bounds)
            if not 0 <= lo <= hi:
                raise ValueError(f"invalid phase velocity bounds {(lo, hi)}")
            object.__setattr__(self, "velocity_bounds", (lo, hi))

    @property
    def size(self) -> int:
        return self.states.shape[0]

    @property
    def phases(self) -> np.ndarray:
        return self.states[:, 0]

    @property
    def members(self) -> list[EnsembleMember]:
        return [EnsembleMember(float(s[0]), float(s[1]), s[2:]) for s in self.states]

    def replace_states(self, states) -> "Ensemble":
        return Ensemble(states, self.process_noise, self.measurement_noise, self.velocity_bounds)


def default_process_noise(weight_count: int, phase=DEFAULT_PHASE_NOISE,
                          velocity=DEFAULT_VELOCITY_NOISE, weight=DEFAULT_WEIGHT_NOISE) -> np.ndarray:
    return np.concatenate([[phase, velocity], np.full(weight_count, weight)])


def init_ensemble(weight_sets: Sequence[np.ndarray], demo_lengths: Sequence[int],
                  process_noise, measurement_noise,
                  velocity_band: tuple[float, float] | None = None) -> Ensemble:
    """One member per demonstration, starting at phase 0 with velocity ``1 / (T - 1)``.

    ``velocity_band=(a, b)`` bounds the phase velocity to
    ``[a * min, b * max]`` of the initial velocities.
    """
    if len(weight_sets) == 0:
        raise ValueError("cannot build an ensemble from zero demonstrations")
    if len(weight_sets) != len(demo_lengths):
        raise ValueError("weight_sets and demo_lengths differ in length")
    W = np.vstack([np.asarray(w, dtype=float) for w in weight_sets])
    T = np.asarray(demo_lengths, dtype=float)
    if np.any(T < 2):
        raise ValueError("demonstration lengths must be >= 2")
    velocity = 1.0 / (T - 1.0)
    states = np.column_stack([np.zeros(len(T)), velocity, W])
    bounds = None
    if velocity_band is not None:
        bounds = (velocity_band[0] * velocity.min(), velocity_band[1] * velocity.max())
    return Ensemble(states, process_noise, measurement_noise, bounds)


def predict(ensemble: Ensemble, rng: np.random.Generator) -> Ensemble:
    """Constant phase-velocity propagation plus ``N(0, Q)`` noise."""
    X = np.array(ensemble.states)
    if ensemble.velocity_bounds is not None:
        X[:, 1] = np.clip(X[:, 1], *ensemble.velocity_bounds)
    X[:, 0] = np.clip(X[:, 0] + X[:, 1], 0.0, 1.0 + PHASE_MARGIN)
    noise = rng.standard_normal(X.shape)
    X += noise * np.sqrt(ensemble.process_noise)
    return ensemble.replace_states(X)


def predicted_observations(states: np.ndarray, basis: BasisModel, dofs: Sequence[int]) -> np.ndarray:
    """``E x len(dofs)`` noise-free measurements of every member."""
    F = features(basis, states[:, 0])
    W = weight_blocks(basis, states[:, 2:])[:, list(dofs), :]
    return np.einsum("eb,edb->ed", F, W)


def update(ensemble: Ensemble, observation: ObservationFrame, basis: BasisModel,
           layout: DofLayout, gain_weight: float, rng: np.random.Generator) -> Ensemble:
    """Perturbed-observation EnKF update, scaled by ``gain_weight``.

    Each member moves by ``gain_weight * K (y + e_j - h(x_j))`` with
    ``e_j ~ N(0, R)``. ``gain_weight = 1`` is the plain EnKF update and
    ``gain_weight = 0`` returns the ensemble unchanged.
    """
    y = np.asarray(getattr(observation, "values", observation), dtype=float).reshape(-1)
    m = len(layout.observed)
    if y.shape != (m,):
        raise ValueError(f"observation has {y.size} values, layout observes {m} DoFs")
    if ensemble.measurement_noise.shape != (m,):
        raise ValueError("measurement noise does not match the observed DoFs")
    if not 0.0 <= gain_weight <= 1.0:
        raise ValueError(f"gain weight must be in [0, 1], got {gain_weight}")

    E = ensemble.size
    R = ensemble.measurement_noise
    perturb = rng.standard_normal((E, m)) * np.sqrt(R)
    if gain_weight == 0.0:
        return ensemble

    X = ensemble.states
    HX = predicted_observations(X, basis, layout.observed)
    A = X - X.mean(axis=0)
    HA = HX - HX.mean(axis=0)
    P_xy = A.T @ HA / (E - 1)
    P_yy = HA.T @ HA / (E - 1) + np.diag(R) + INNOVATION_JITTER * np.eye(m)
    # K = P_xy P_yy^-1, solved rather than inverted
    K = np.linalg.solve(P_yy, P_xy.T).T
    innovation = y + perturb - HX
    return ensemble.replace_states(X + gain_weight * (innovation @ K.T))


def mean_state(ensemble: Ensemble) -> EnsembleMember:
    mu = ensemble.states.mean(axis=0)
    return EnsembleMember(float(mu[0]), float(mu[1]), mu[2:])
