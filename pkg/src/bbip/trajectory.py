"""Demonstrations, observation frames, trajectory files and outlier rejection.

Trajectory file format
----------------------
Plain UTF-8 text. Lines starting with ``#`` but not ``#!`` are comments.
A record (one demonstration) is a header line followed by one line per
time sample::

    #! D=3 names=lh_z,rh_z,robot_z roles=o,o,c label=left_high
    0.10 0.20 0.30
    0.11 0.21 0.31

Header fields are ``key=value`` tokens separated by whitespace. ``D`` and
``roles`` are required, ``names`` and ``label`` are optional. ``roles``
lists ``o`` (observed) or ``c`` (controlled) for every DoF in row order.
Sample lines hold exactly ``D`` whitespace separated reals, one column of
the ``D x T`` matrix per line. Records are separated by one or more blank
lines. Names and labels may not contain whitespace, ``,`` or ``=``.
:func:`write_demonstrations` emits reals with ``repr`` so that
write -> read -> write is byte-identical.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import LayoutError, PhaseDomainError, StatisticsError, TrajectoryParseError

OUTLIER_SIGMAS = 4.0
OUTLIER_ABS_TOL = 1e-9

_FORMAT_BANNER = "# bbip trajectory file v1"


@dataclass(frozen=True)
class DofLayout:
    """Partition of the DoF rows into controlled and observed indices."""

    controlled: tuple[int, ...]
    observed: tuple[int, ...]
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        controlled = tuple(int(i) for i in self.controlled)
        observed = tuple(int(i) for i in self.observed)
        object.__setattr__(self, "controlled", controlled)
        object.__setattr__(self, "observed", observed)
        if not controlled or not observed:
            raise LayoutError("both controlled and observed DoF sets must be non-empty")
        if len(set(controlled)) != len(controlled) or len(set(observed)) != len(observed):
            raise LayoutError("duplicate DoF index in layout")
        if set(controlled) & set(observed):
            raise LayoutError("controlled and observed DoF sets overlap")
        d = len(controlled) + len(observed)
        if set(controlled) | set(observed) != set(range(d)):
            raise LayoutError(f"DoF indices must cover 0..{d - 1} exactly")
        if self.names is not None:
            names = tuple(str(n) for n in self.names)
            if len(names) != d:
                raise LayoutError(f"expected {d} DoF names, got {len(names)}")
            object.__setattr__(self, "names", names)

    @property
    def dof_count(self) -> int:
        return len(self.controlled) + len(self.observed)

    @property
    def roles(self) -> tuple[str, ...]:
        obs = set(self.observed)
        return tuple("o" if d in obs else "c" for d in range(self.dof_count))

    @classmethod
    def from_roles(cls, roles: Sequence[str], names: Sequence[str] | None = None) -> "DofLayout":
        roles = list(roles)
        bad = [r for r in roles if r not in ("o", "c")]
        if bad:
            raise LayoutError(f"unknown DoF role(s) {bad!r}; expected 'o' or 'c'")
        return cls(
            controlled=tuple(i for i, r in enumerate(roles) if r == "c"),
            observed=tuple(i for i, r in enumerate(roles) if r == "o"),
            names=tuple(names) if names is not None else None,
        )

    def to_dict(self) -> dict:
        return {
            "controlled": list(self.controlled),
            "observed": list(self.observed),
            "names": list(self.names) if self.names is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DofLayout":
        return cls(tuple(d["controlled"]), tuple(d["observed"]),
                   tuple(d["names"]) if d.get("names") is not None else None)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Demonstration:
    """A ``D x T`` trajectory matrix: rows are DoFs, columns time samples."""

    values: np.ndarray
    layout: DofLayout
    class_label: str | None = None

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 2:
            raise LayoutError(f"demonstration values must be 2-D, got shape {values.shape}")
        if values.shape[0] != self.layout.dof_count:
            raise LayoutError(
                f"demonstration has {values.shape[0]} DoF rows, layout declares {self.layout.dof_count}"
            )
        if values.shape[1] < 2:
            raise ValueError("a demonstration needs at least 2 samples")
        if not np.all(np.isfinite(values)):
            raise ValueError("demonstration contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def sample_count(self) -> int:
        return self.values.shape[1]

    @property
    def observed(self) -> np.ndarray:
        return self.values[list(self.layout.observed)]

    @property
    def controlled(self) -> np.ndarray:
        return self.values[list(self.layout.controlled)]

    def frames(self) -> list["ObservationFrame"]:
        """Observed DoFs as a stream of frames, the way they arrive online."""
        obs = self.observed
        return [ObservationFrame(obs[:, t], t) for t in range(self.sample_count)]


@dataclass(frozen=True, eq=False)
class ObservationFrame:
    values: np.ndarray
    timestamp: int = 0

    def __post_init__(self):
        values = _frozen(self.values).reshape(-1)
        if not np.all(np.isfinite(values)):
            raise ValueError("observation frame contains non-finite values")
        object.__setattr__(self, "values", values)


def phase_of(t: int, T: int) -> float:
    """Phase of sample ``t`` in a ``T``-sample demonstration, ``t / (T - 1)``."""
    if T < 2:
        raise PhaseDomainError(f"sample count must be >= 2, got {T}")
    if not 0 <= t <= T - 1:
        raise PhaseDomainError(f"sample index {t} outside [0, {T - 1}]")
    return t / (T - 1)


def resample(demo: Demonstration, length: int) -> Demonstration:
    """Linearly interpolate every DoF row onto ``length`` uniform phase points."""
    if length < 2:
        raise ValueError(f"target length must be >= 2, got {length}")
    T = demo.sample_count
    if length == T:
        return demo
    src = np.linspace(0.0, 1.0, T)
    dst = np.linspace(0.0, 1.0, length)
    out = np.vstack([np.interp(dst, src, row) for row in demo.values])
    return Demonstration(out, demo.layout, demo.class_label)


def _aligned_length(demos: Sequence[Demonstration]) -> int:
    lengths = sorted(d.sample_count for d in demos)
    return lengths[(len(lengths) - 1) // 2]


def remove_outliers(
    demos: Sequence[Demonstration],
    sigmas: float = OUTLIER_SIGMAS,
    leave_one_out: bool = False,
) -> tuple[list[Demonstration], list[int]]:
    """Reject demonstrations with any value beyond ``sigmas`` standard deviations.

    Demonstrations are resampled to the (lower) median length so that
    statistics are taken at equal phase. By default every demo is judged
    against the mean and population standard deviation of the full set at
    the same aligned index and DoF, computed once. A single demo can sit at
    most ``(n - 1) / sqrt(n)`` deviations from such a mean, so with fewer
    than 18 demos nothing is ever rejected at 4 sigma. ``leave_one_out``
    judges each demo against the statistics of the *other* demos instead,
    which can flag gross outliers in small sets but also rejects clean,
    noisy demos much more often.

    Returns the kept demonstrations (originals, not resampled) and the
    indices of the rejected ones.
    """
    demos = list(demos)
    if len(demos) < 2:
        raise StatisticsError("outlier rejection needs at least 2 demonstrations")
    layout = demos[0].layout
    if any(d.layout != layout for d in demos):
        raise LayoutError("all demonstrations must share one DoF layout")

    L = _aligned_length(demos)
    stack = np.stack([resample(d, L).values for d in demos])  # n x D x L

    rejected = []
    for i in range(len(demos)):
        ref = np.delete(stack, i, axis=0) if leave_one_out else stack
        mean = ref.mean(axis=0)
        std = ref.std(axis=0)
        if np.any(np.abs(stack[i] - mean) > sigmas * std + OUTLIER_ABS_TOL):
            rejected.append(i)
    bad = set(rejected)
    kept = [d for i, d in enumerate(demos) if i not in bad]
    return kept, rejected


# -- file IO -----------------------------------------------------------------

def _parse_header(line: str, lineno: int, record: int) -> dict:
    fields = {}
    for token in line[2:].split():
        key, sep, value = token.partition("=")
        if not sep or not key:
            raise TrajectoryParseError(f"malformed header token {token!r}", lineno, record)
        if key in fields:
            raise TrajectoryParseError(f"duplicate header key {key!r}", lineno, record)
        fields[key] = value
    unknown = set(fields) - {"D", "names", "roles", "label"}
    if unknown:
        raise TrajectoryParseError(f"unknown header key(s) {sorted(unknown)}", lineno, record)
    for key in ("D", "roles"):
        if key not in fields:
            raise TrajectoryParseError(f"header is missing required key {key!r}", lineno, record)
    try:
        fields["D"] = int(fields["D"])
    except ValueError:
        raise TrajectoryParseError(f"D must be an integer, got {fields['D']!r}", lineno, record) from None
    fields["roles"] = fields["roles"].split(",")
    if "names" in fields:
        fields["names"] = fields["names"].split(",")
    for key in ("roles", "names"):
        if key in fields and len(fields[key]) != fields["D"]:
            raise TrajectoryParseError(
                f"{key} lists {len(fields[key])} entries but D={fields['D']}", lineno, record
            )
    return fields


def _record_layout(header: dict, layout: DofLayout | None, record: int, lineno: int) -> DofLayout:
    try:
        own = DofLayout.from_roles(header["roles"], header.get("names"))
    except LayoutError as exc:
        raise TrajectoryParseError(str(exc), lineno, record) from None
    if layout is None:
        return own
    if header["D"] != layout.dof_count:
        raise LayoutError(
            f"record {record} (line {lineno}) has {header['D']} DoFs, layout expects {layout.dof_count}"
        )
    if own.roles != layout.roles:
        raise LayoutError(f"record {record} (line {lineno}) DoF roles {own.roles} differ from layout {layout.roles}")
    return layout


def parse_demonstrations(text: str, layout: DofLayout | None = None) -> list[Demonstration]:
    """Parse trajectory-format text. See the module docstring for the grammar."""
    demos = []
    header = None
    header_line = 0
    rows: list[list[float]] = []

    def close():
        nonlocal header, rows
        if header is None:
            return
        record = len(demos)
        rec_layout = _record_layout(header, layout, record, header_line)
        if len(rows) < 2:
            raise TrajectoryParseError(f"record has {len(rows)} samples, need >= 2", header_line, record)
        demos.append(Demonstration(np.array(rows).T, rec_layout, header.get("label")))
        header, rows = None, []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            close()
        elif line.startswith("#!"):
            close()
            header = _parse_header(line, lineno, len(demos))
            header_line = lineno
        elif line.startswith("#"):
            continue
        else:
            if header is None:
                raise TrajectoryParseError("sample line before any record header", lineno, len(demos))
            try:
                sample = [float(tok) for tok in line.split()]
            except ValueError as exc:
                raise TrajectoryParseError(str(exc), lineno, len(demos)) from None
            if len(sample) != header["D"]:
                raise TrajectoryParseError(
                    f"expected {header['D']} values, got {len(sample)}", lineno, len(demos)
                )
            if not all(np.isfinite(sample)):
                raise TrajectoryParseError("non-finite value", lineno, len(demos))
            rows.append(sample)
    close()
    return demos


def load_demonstrations(path: str | os.PathLike, layout: DofLayout | None = None) -> list[Demonstration]:
    """Read every record of a trajectory file.

    When ``layout`` is given each record must agree with it, otherwise
    :class:`LayoutError`. Without it the layout comes from the record headers.
    """
    with open(path, encoding="utf-8") as fh:
        return parse_demonstrations(fh.read(), layout)


def _check_token(s: str, what: str):
    if not s or any(ch.isspace() for ch in s) or "," in s or "=" in s:
        raise ValueError(f"{what} {s!r} cannot be written: empty or contains whitespace, ',' or '='")


def format_demonstrations(demos: Iterable[Demonstration]) -> str:
    parts = [_FORMAT_BANNER + "\n"]
    for demo in demos:
        layout = demo.layout
        tokens = [f"D={layout.dof_count}"]
        if layout.names is not None:
            for n in layout.names:
                _check_token(n, "DoF name")
            tokens.append("names=" + ",".join(layout.names))
        tokens.append("roles=" + ",".join(layout.roles))
        if demo.class_label is not None:
            _check_token(demo.class_label, "class label")
            tokens.append(f"label={demo.class_label}")
        lines = ["\n#! " + " ".join(tokens)]
        lines.extend(" ".join(repr(float(v)) for v in col) for col in demo.values.T)
        parts.append("\n".join(lines) + "\n")
    return "".join(parts)


def write_demonstrations(path: str | os.PathLike, demos: Iterable[Demonstration]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_demonstrations(demos))


def group_by_label(demos: Iterable[Demonstration]) -> dict[str, list[Demonstration]]:
    """Group labelled demonstrations by class, classes in first-seen order."""
    groups: dict[str, list[Demonstration]] = {}
    for i, d in enumerate(demos):
        if d.class_label is None:
            raise LayoutError(f"demonstration {i} has no class label")
        groups.setdefault(d.class_label, []).append(d)
    return groups
