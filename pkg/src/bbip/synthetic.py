"""Synthetic two-agent interaction corpora with known ground truth.

A desk-scale stand-in for motion-capture hugging data. Every demonstration
has five DoFs::

    0 head_z         observed
    1 left_hand_z    observed
    2 right_hand_z   observed
    3 robot_left_z   controlled  (follows left_hand_z)
    4 robot_right_z  controlled  (follows right_hand_z)

Classes differ in how high each hand rises, in timing, in resting posture
and in a small class-specific oscillation, so they are separable at every
phase. The robot's embrace height per class is not an affine function of
the hand heights, which is what makes a single pooled prior a poor fit.
Switching demonstrations blend from one class generator to another over a
window centred on the switch index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import cycle
from typing import Sequence

import numpy as np

from .trajectory import Demonstration, DofLayout

LAYOUT = DofLayout(
    controlled=(3, 4),
    observed=(0, 1, 2),
    names=("head_z", "left_hand_z", "right_hand_z", "robot_left_z", "robot_right_z"),
)
# (observed DoF, controlled DoF) pairs that should move together
MATCHED_PAIRS = ((1, 3), (2, 4))
ROBOT_REST = 0.3


@dataclass(frozen=True)
class SyntheticConfig:
    classes: int = 3
    per_class: int | Sequence[int] = 15
    length: int = 120
    duration_jitter: float = 0.15  # +- fraction of length, uniform
    amplitude_jitter: float = 0.05  # relative std of the rise height
    noise: float = 0.01  # additive Gaussian, all DoFs
    switch_count: int = 0
    switch_at: float = 0.5  # fraction of the demo length
    blend_width: float = 0.1  # fraction of the demo length
    # ordered (from, to) class index pairs cycled over switching demos;
    # default alternates between the first and the last class
    switch_pairs: tuple[tuple[int, int], ...] | None = None
    sample_rate: float = 120.0

    def __post_init__(self):
        if self.classes < 1:
            raise ValueError("need at least one class")
        counts = self.class_counts
        if len(counts) != self.classes or any(c < 0 for c in counts):
            raise ValueError("per_class must be a non-negative count or one count per class")
        if self.length < 4:
            raise ValueError("length must be >= 4")
        if not 0 <= self.duration_jitter < 1:
            raise ValueError("duration_jitter must be in [0, 1)")
        if self.noise < 0 or self.amplitude_jitter < 0:
            raise ValueError("noise levels must be non-negative")
        if self.switch_count > 0:
            if self.classes < 2:
                raise ValueError("switching demos need at least 2 classes")
            if not 0 < self.switch_at < 1:
                raise ValueError("switch_at must be inside (0, 1)")
            if not 0 <= self.blend_width < 1:
                raise ValueError("blend_width must be in [0, 1)")
            for a, b in self.pairs:
                if not (0 <= a < self.classes and 0 <= b < self.classes) or a == b:
                    raise ValueError(f"invalid switch pair {(a, b)}")

    @property
    def class_counts(self) -> tuple[int, ...]:
        if isinstance(self.per_class, int):
            return (self.per_class,) * self.classes
        return tuple(int(c) for c in self.per_class)

    @property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        if self.switch_pairs is not None:
            return tuple(tuple(p) for p in self.switch_pairs)
        last = self.classes - 1
        return ((0, last), (last, 0))


def class_name(i: int, n: int) -> str:
    if n == 3:
        return ("left_high", "middle", "right_high")[i]
    if n == 2:
        return ("left_high", "right_high")[i]
    return f"class{i}"


@dataclass
class SyntheticCorpus:
    demos: list[Demonstration]
    # one entry per demo: label, source/target class, switch and blend indices
    truth: list[dict] = field(default_factory=list)
    class_names: tuple[str, ...] = ()
    sample_rate: float = 120.0

    def by_class(self) -> dict[str, list[Demonstration]]:
        """Non-switching demos grouped by class, in class order."""
        groups = {c: [] for c in self.class_names}
        for d, t in zip(self.demos, self.truth):
            if t["switch_index"] is None:
                groups[t["label"]].append(d)
        return {c: g for c, g in groups.items() if g}

    def non_switching(self) -> list[Demonstration]:
        return [d for d, t in zip(self.demos, self.truth) if t["switch_index"] is None]

    def switching(self) -> list[Demonstration]:
        return [d for d, t in zip(self.demos, self.truth) if t["switch_index"] is not None]

    def switching_truth(self) -> list[dict]:
        return [t for t in self.truth if t["switch_index"] is not None]


def _class_params(i: int, n: int) -> dict:
    """Shape parameters of class ``i`` out of ``n``."""
    u = i / (n - 1) if n > 1 else 0.5
    left, right = 1.0 - 0.6 * u, 0.4 + 0.6 * u
    peak = np.array([left, right])
    # inner classes get a lower robot embrace than the hands suggest, so the
    # hand -> robot map is not affine across classes
    dip = 0.25 * (1.0 - abs(2.0 * u - 1.0))
    return {
        "peak": peak,
        "robot_peak": peak - dip,
        # resting hand height leans towards the raised side
        "rest": 0.2 + 0.3 * (peak - 0.7),
        "onset": 0.25 + 0.15 * u,
        "release": 0.8 + 0.08 * u,
        "wiggle_amp": 0.03 + 0.02 * i,
        "wiggle_freq": 2.0 + i,
        "wiggle_shift": 0.7 * i,
        "lean": 0.05 * (left - right),
    }


def _rise(phase: np.ndarray, onset: float = 0.3, release: float = 0.85) -> np.ndarray:
    # smooth up-hold-down envelope: two sigmoids
    up = 1.0 / (1.0 + np.exp(-(phase - onset) / 0.05))
    down = 1.0 / (1.0 + np.exp(-(phase - release) / 0.04))
    return up * (1.0 - down)


def class_trajectory(i: int, n: int, phase: np.ndarray, amplitude=(1.0, 1.0)) -> np.ndarray:
    """Noise-free ``5 x len(phase)`` trajectory of class ``i``."""
    p = _class_params(i, n)
    amplitude = np.asarray(amplitude, dtype=float)
    rise = _rise(phase, p["onset"], p["release"])
    wiggle = p["wiggle_amp"] * np.sin(2 * np.pi * p["wiggle_freq"] * phase + p["wiggle_shift"])
    hands = p["rest"][:, None] + (amplitude * (p["peak"] - p["rest"]))[:, None] * rise + wiggle
    head = 1.6 + p["lean"] + 0.04 * np.sin(2 * np.pi * phase) + 0.5 * wiggle
    # the robot starts from one neutral pose for every class and raises each
    # arm towards the matching hand's class height slightly later in phase
    lag_rise = _rise(phase - 0.03, p["onset"], p["release"])
    robot = ROBOT_REST + (amplitude * (p["robot_peak"] - ROBOT_REST))[:, None] * lag_rise
    return np.vstack([head, hands, robot])


def generate_synthetic(config: SyntheticConfig | None = None, seed: int = 0) -> SyntheticCorpus:
    """Draw a labelled corpus; identical ``config`` and ``seed`` give identical data.

    Non-switching demos come first, grouped by class, then ``switch_count``
    switching demos. For a switching demo of length ``T`` the switch index
    is ``round(switch_at * T)``; labels before it are the source class and
    from it on the target class. The generators are blended linearly over
    ``round(blend_width * T)`` samples centred on the switch index.
    """
    config = config or SyntheticConfig()
    rng = np.random.default_rng(seed)
    n = config.classes
    names = tuple(class_name(i, n) for i in range(n))

    def draw_length():
        j = config.duration_jitter
        return max(4, int(round(config.length * (1.0 + j * rng.uniform(-1.0, 1.0)))))

    def draw_amplitude():
        return 1.0 + config.amplitude_jitter * rng.standard_normal(2)

    def add_noise(Y):
        return Y + config.noise * rng.standard_normal(Y.shape)

    demos, truth = [], []
    for i, count in enumerate(config.class_counts):
        for _ in range(count):
            T = draw_length()
            amp = draw_amplitude()
            Y = add_noise(class_trajectory(i, n, np.linspace(0.0, 1.0, T), amp))
            demos.append(Demonstration(Y, LAYOUT, names[i]))
            truth.append({"label": names[i], "source": names[i], "target": names[i], "length": T,
                          "switch_index": None, "blend_start": None, "blend_end": None})

    pairs = cycle(config.pairs)
    for _ in range(config.switch_count):
        a, b = next(pairs)
        T = draw_length()
        amp = draw_amplitude()
        phase = np.linspace(0.0, 1.0, T)
        s = int(round(config.switch_at * T))
        w = int(round(config.blend_width * T))
        t = np.arange(T)
        if w > 0:
            alpha = np.clip((t - (s - w / 2.0)) / w, 0.0, 1.0)
        else:
            alpha = (t >= s).astype(float)
        Y = (1.0 - alpha) * class_trajectory(a, n, phase, amp) + alpha * class_trajectory(b, n, phase, amp)
        label = f"{names[a]}-to-{names[b]}"
        demos.append(Demonstration(add_noise(Y), LAYOUT, label))
        truth.append({"label": label, "source": names[a], "target": names[b], "length": T,
                      "switch_index": s, "blend_start": int(np.ceil(s - w / 2.0)),
                      "blend_end": int(np.floor(s + w / 2.0))})
    return SyntheticCorpus(demos, truth, names, config.sample_rate)


def label_sequence(truth: dict) -> list[str]:
    """Per-sample ground-truth class labels of one corpus entry."""
    T = truth["length"]
    if truth["switch_index"] is None:
        return [truth["source"]] * T
    s = truth["switch_index"]
    return [truth["source"]] * s + [truth["target"]] * (T - s)
