"""Offline evaluation: prediction MSE, correlation-lag responsiveness, corpus runs."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .trajectory import Demonstration


class Predictor(Protocol):
    """Anything that opens inference sessions, e.g. a trained model."""

    def session(self, seed: int = 0): ...


def mse(predicted, truth) -> float:
    """Mean of squared differences over every DoF and time step."""
    predicted = np.asarray(predicted, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if predicted.shape != truth.shape:
        raise ValueError(f"shape mismatch: predicted {predicted.shape} vs truth {truth.shape}")
    return float(np.mean((predicted - truth) ** 2))


def pearson(a, b) -> float:
    """Pearson correlation; 0 when either signal is constant."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    da, db = a - a.mean(), b - b.mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    if denom == 0.0:
        return 0.0
    return float(np.clip((da @ db) / denom, -1.0, 1.0))


@dataclass
class LagResult:
    lag_samples: int
    lag_seconds: float
    max_total_correlation: float
    curve: np.ndarray  # total correlation for backward shifts 0..max_lag


def lag_curve(human, robot, max_lag: int) -> np.ndarray:
    """Summed Pearson correlation of matched rows for each backward robot shift.

    ``human`` and ``robot`` are ``m x T`` with row ``i`` of one matched to
    row ``i`` of the other. At shift ``l`` human sample ``t`` is paired with
    robot sample ``t + l``.
    """
    human = np.atleast_2d(np.asarray(human, dtype=float))
    robot = np.atleast_2d(np.asarray(robot, dtype=float))
    if human.shape != robot.shape:
        raise ValueError(f"signal sets differ in shape: {human.shape} vs {robot.shape}")
    T = human.shape[1]
    if not 0 <= max_lag < T / 2:
        raise ValueError(f"max_lag must be in [0, {T}/2), got {max_lag}")
    curve = np.empty(max_lag + 1)
    for lag in range(max_lag + 1):
        curve[lag] = sum(pearson(h[: T - lag], r[lag:]) for h, r in zip(human, robot))
    return curve


def best_lag(curve, rate: float) -> LagResult:
    curve = np.asarray(curve, dtype=float)
    lag = int(np.argmax(curve))  # first maximum, i.e. the smallest lag on ties
    return LagResult(lag, lag / rate, float(curve[lag]), curve)


def correlation_lag(human, robot, max_lag: int, rate: float) -> LagResult:
    """Backward shift of ``robot`` (in seconds) that maximizes summed correlation with ``human``."""
    return best_lag(lag_curve(human, robot, max_lag), rate)


def switch_frame(trace, source: int, target: int) -> int | None:
    """Frame at which a class posterior trace switches from ``source`` to ``target``.

    The first frame where ``p[target] >= 0.5`` after ``source`` has first
    reached 0.5. ``None`` if that never happens.
    """
    trace = np.asarray(trace, dtype=float)
    started = np.flatnonzero(trace[:, source] >= 0.5)
    if started.size == 0:
        return None
    after = np.flatnonzero(trace[started[0] + 1:, target] >= 0.5)
    return int(started[0] + 1 + after[0]) if after.size else None


def demo_seed(master_seed: int, demo: Demonstration) -> int:
    """Seed derived from the demo's content, so results do not depend on corpus order."""
    h = hashlib.sha256(np.ascontiguousarray(demo.values).tobytes()).digest()
    return int(np.random.SeedSequence([master_seed, int.from_bytes(h[:8], "little")]).generate_state(1)[0])


@dataclass
class DemoResult:
    mse: float | None
    predicted: np.ndarray | None = None
    posteriors: np.ndarray | None = None
    error: str | None = None


@dataclass
class EvalReport:
    predictor: str
    per_demo_mse: list[float | None]
    mean_mse: float
    stderr_mse: float
    failed: list[int] = field(default_factory=list)
    errors: dict[int, str] = field(default_factory=dict)
    sample_rate: float = 120.0
    lag_seconds: float | None = None
    max_total_correlation: float | None = None
    lag_curve: list[float] | None = None

    def summary(self) -> str:
        """One Table-II style line: ``name: mean +- stderr``."""
        return f"{self.predictor}: {self.mean_mse:.6f} +- {self.stderr_mse:.6f}"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["errors"] = {str(k): v for k, v in self.errors.items()}
        return d


def mean_stderr(values: Sequence[float]) -> tuple[float, float]:
    """Mean and standard error, insensitive to the order of ``values``."""
    values = sorted(float(v) for v in values)
    n = len(values)
    if n == 0:
        return float("nan"), float("nan")
    mean = math.fsum(values) / n
    if n == 1:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var) / math.sqrt(n)


def predict_demo(predictor: Predictor, demo: Demonstration, seed: int) -> DemoResult:
    """Stream ``demo``'s observed DoFs through a fresh session (teacher forcing)."""
    session = predictor.session(seed)
    outputs = [session.step(frame) for frame in demo.frames()]
    predicted = np.column_stack([o.response for o in outputs])
    posteriors = np.vstack([o.class_posterior for o in outputs])
    return DemoResult(mse(predicted, demo.controlled), predicted, posteriors)


def run_corpus(predictor: Predictor, corpus: Sequence[Demonstration], seed: int = 0,
               name: str = "model", pairs: Sequence[tuple[int, int]] | None = None,
               max_lag: int | None = None, rate: float = 120.0, n_jobs: int = 1,
               keep: bool = False) -> EvalReport | tuple[EvalReport, list[DemoResult]]:
    """Predict every demo of ``corpus`` and aggregate MSE (and optionally lag).

    Each demo gets its own session with a seed derived from ``seed`` and
    the demo content. A demo that raises is recorded in ``failed`` and
    left out of the aggregate. With ``pairs`` of ``(observed DoF,
    controlled DoF)`` indices the per-demo lag curves between the observed
    signals and the predicted controlled signals are averaged and the
    best lag of the mean curve is reported. ``keep=True`` also returns the
    per-demo results (predictions and posterior traces).
    """

    def one(demo):
        try:
            return predict_demo(predictor, demo, demo_seed(seed, demo))
        except Exception as exc:  # recorded, not fatal
            return DemoResult(None, error=f"{type(exc).__name__}: {exc}")

    corpus = list(corpus)
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(one, corpus))
    else:
        results = [one(d) for d in corpus]

    ok = [r.mse for r in results if r.error is None]
    mean, se = mean_stderr(ok)
    report = EvalReport(
        predictor=name,
        per_demo_mse=[r.mse for r in results],
        mean_mse=mean,
        stderr_mse=se,
        failed=[i for i, r in enumerate(results) if r.error is not None],
        errors={i: r.error for i, r in enumerate(results) if r.error is not None},
        sample_rate=rate,
    )

    if pairs:
        curves = []
        for demo, r in zip(corpus, results):
            if r.error is not None:
                continue
            lag = max_lag if max_lag is not None else max(0, (demo.sample_count - 1) // 2 - 1)
            human = demo.values[[o for o, _ in pairs]]
            ctrl = list(demo.layout.controlled)
            robot = r.predicted[[ctrl.index(c) for _, c in pairs]]
            curves.append(lag_curve(human, robot, min(lag, (demo.sample_count - 1) // 2)))
        if curves:
            n = min(len(c) for c in curves)
            mean_curve = np.mean([c[:n] for c in curves], axis=0)
            best = best_lag(mean_curve, rate)
            report.lag_seconds = best.lag_seconds
            report.max_total_correlation = best.max_total_correlation
            report.lag_curve = mean_curve.tolist()

    return (report, results) if keep else report


# -- output files --------------------------------------------------------------

def report_json(reports: Sequence[EvalReport]) -> str:
    return json.dumps({"reports": [r.to_dict() for r in reports]}, sort_keys=True, indent=1) + "\n"


def table_text(switching: Sequence[EvalReport] | None, non_switching: Sequence[EvalReport] | None) -> str:
    """MSE table with one row per predictor, ``mean +- stderr`` per column."""
    cols = [(n, r) for n, r in (("switching", switching), ("non_switching", non_switching)) if r]
    names = []
    for _, reps in cols:
        for rep in reps:
            if rep.predictor not in names:
                names.append(rep.predictor)
    lines = ["predictor\t" + "\t".join(n for n, _ in cols)]
    for name in names:
        cells = []
        for _, reps in cols:
            rep = next((r for r in reps if r.predictor == name), None)
            cells.append(f"{rep.mean_mse:.6f} +- {rep.stderr_mse:.6f}" if rep else "-")
        lines.append(name + "\t" + "\t".join(cells))
    return "\n".join(lines) + "\n"


def curve_csv(curves: dict[str, Sequence[float]], rate: float) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = list(curves)
    w.writerow(["lag_samples", "lag_seconds"] + names)
    n = min(len(c) for c in curves.values()) if curves else 0
    for k in range(n):
        w.writerow([k, repr(k / rate)] + [repr(float(curves[name][k])) for name in names])
    return buf.getvalue()


def traces_csv(classes: Sequence[str], traces: Sequence[np.ndarray]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["demo", "frame"] + [f"p_{c}" for c in classes])
    for i, trace in enumerate(traces):
        for t, row in enumerate(trace):
            w.writerow([i, t] + [repr(float(v)) for v in row])
    return buf.getvalue()
