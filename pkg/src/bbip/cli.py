"""Command-line front end: ``bbip synth | train | infer | eval | inspect``.

Every invocation logs its master seed to stderr as ``bbip <command>:
seed=<n>``; rerunning with that seed and the same inputs reproduces the
outputs byte for byte. Output files are written atomically.

Exit codes: 0 success, 2 configuration error (bad flags, unusable
output path), 3 data error (unreadable or inconsistent input files,
training data problems), 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from typing import Sequence

import numpy as np

from . import evaluation as ev
from .errors import (
    BbipError,
    LayoutError,
    ModelIntegrityError,
    ModelVersionError,
    NumericalError,
    StatisticsError,
    TrainingError,
    TrajectoryParseError,
)
from .model import BbipModel, TrainConfig, atomic_write_text, load_model, save_model, train_with_report
from .synthetic import SyntheticConfig, generate_synthetic
from .trajectory import Demonstration, format_demonstrations, group_by_label, load_demonstrations

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class ConfigError(BbipError):
    """Invalid combination of command-line options."""


class DataError(BbipError):
    pass


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def _out_dir(path: str) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {path!r}: {exc}") from None
    if not os.access(path, os.W_OK):
        raise ConfigError(f"output directory {path!r} is not writable")
    return path


def _write(path: str, text: str) -> None:
    try:
        atomic_write_text(path, text)
    except OSError as exc:
        raise ConfigError(f"cannot write {path!r}: {exc}") from None


def _load_corpus(path: str) -> list[Demonstration]:
    try:
        demos = load_demonstrations(path)
    except OSError as exc:
        raise DataError(f"cannot read {path!r}: {exc}") from None
    if not demos:
        raise DataError(f"{path!r} contains no demonstrations")
    return demos


def _load_model(path: str) -> BbipModel:
    try:
        return load_model(path)
    except OSError as exc:
        raise DataError(f"cannot read {path!r}: {exc}") from None


# -- train configuration flags ----------------------------------------------

def _band(text: str):
    if text.lower() == "none":
        return None
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected LO,HI or 'none'") from None
    return (lo, hi)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    g = p.add_argument_group("model configuration")
    g.add_argument("--basis-count", type=int, default=d.basis_count, help="basis functions per DoF")
    g.add_argument("--basis-width", type=float, default=None, help="basis width (default 1.5 / count)")
    g.add_argument("--ridge", type=float, default=d.ridge, help="weight fit ridge")
    g.add_argument("--phase-noise", type=float, default=d.phase_noise)
    g.add_argument("--velocity-noise", type=float, default=d.velocity_noise)
    g.add_argument("--weight-noise", type=float, default=d.weight_noise)
    g.add_argument("--measurement-noise-scale", type=float, default=d.measurement_noise_scale,
                   help="multiplier on the fit-residual measurement noise estimate")
    g.add_argument("--velocity-band", type=_band, default=d.velocity_band, metavar="LO,HI",
                   help="phase velocity bounds relative to the training range, or 'none'")
    g.add_argument("--outlier-sigmas", type=float, default=d.outlier_sigmas)
    g.add_argument("--no-outlier-rejection", action="store_true")
    g.add_argument("--lda-ridge", type=float, default=d.lda_ridge)


def _train_config(args) -> TrainConfig:
    try:
        return TrainConfig(
            basis_count=args.basis_count, basis_width=args.basis_width, ridge=args.ridge,
            phase_noise=args.phase_noise, velocity_noise=args.velocity_noise,
            weight_noise=args.weight_noise, measurement_noise_scale=args.measurement_noise_scale,
            velocity_band=args.velocity_band, outlier_sigmas=args.outlier_sigmas,
            reject_outliers=not args.no_outlier_rejection, lda_ridge=args.lda_ridge,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _split(demos: Sequence[Demonstration], single: bool) -> dict[str, list[Demonstration]]:
    if single:
        return {"all": list(demos)}
    return group_by_label(demos)


def _add_session_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("inference options")
    g.add_argument("--smoothing-half-life", type=float, default=None, help="posterior smoothing, frames")
    g.add_argument("--cumulative", action="store_true", help="score classes on the whole history")
    g.add_argument("--phase-fusion", action="store_true", help="respond at the posterior-weighted phase")


def _session_options(args) -> dict:
    return {"smoothing_half_life": args.smoothing_half_life, "cumulative": args.cumulative,
            "phase_fusion": args.phase_fusion}


# -- subcommands ---------------------------------------------------------------

def cmd_synth(args) -> int:
    out = _out_dir(args.out)
    try:
        config = SyntheticConfig(
            classes=args.classes, per_class=args.per_class, length=args.length,
            duration_jitter=args.duration_jitter, amplitude_jitter=args.amplitude_jitter,
            noise=args.noise, switch_count=args.switch_count if args.switch is not None else 0,
            switch_at=args.switch if args.switch is not None else 0.5,
            blend_width=args.blend, sample_rate=args.rate,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    corpus = generate_synthetic(config, seed=args.seed)
    _write(os.path.join(out, "corpus.traj"), format_demonstrations(corpus.non_switching()))
    sidecar = {
        "seed": args.seed,
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(config).items()},
        "class_names": list(corpus.class_names),
        "corpus": [t for t in corpus.truth if t["switch_index"] is None],
        "switching": corpus.switching_truth(),
    }
    if corpus.switching():
        _write(os.path.join(out, "switching.traj"), format_demonstrations(corpus.switching()))
    _write(os.path.join(out, "truth.json"), _json(sidecar))
    print(f"wrote {len(corpus.non_switching())} demos and {len(corpus.switching())} switching demos to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    if args.out is None:
        raise ConfigError("--out is required")
    config = _train_config(args)
    demos = _load_corpus(args.corpus)
    groups = _split(demos, args.single_class)
    model, report = train_with_report(groups, config)
    report_path = args.report or os.path.splitext(args.out)[0] + ".report.json"
    body = report.to_dict()
    body["classes"] = list(model.classes)
    body["ensemble_sizes"] = model.ensemble_sizes
    _write(report_path, _json(body))
    try:
        save_model(model, args.out)
    except OSError as exc:
        raise ConfigError(f"cannot write {args.out!r}: {exc}") from None
    print(f"trained {len(model.classes)}-class model from {len(demos)} demos -> {args.out}")
    for c in model.classes:
        if report.rejected[c]:
            print(f"  {c}: rejected outliers {report.rejected[c]}")
    return EXIT_OK


def _stdin_frames(model: BbipModel, text: str) -> list[np.ndarray]:
    n_obs, n_all = len(model.layout.observed), model.layout.dof_count
    frames = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            values = np.array([float(t) for t in line.replace(",", " ").split()])
        except ValueError as exc:
            raise TrajectoryParseError(str(exc), lineno) from None
        if values.size == n_all:
            values = values[list(model.layout.observed)]
        elif values.size != n_obs:
            raise LayoutError(f"line {lineno}: {values.size} values, model observes {n_obs} of {n_all} DoFs")
        frames.append(values)
    return frames


def cmd_infer(args) -> int:
    model = _load_model(args.model)
    if args.input == "-":
        frames = _stdin_frames(model, sys.stdin.read())
    else:
        demos = _load_corpus(args.input)
        if not 0 <= args.index < len(demos):
            raise ConfigError(f"--index {args.index} out of range, file has {len(demos)} demos")
        demo = demos[args.index]
        if demo.layout.roles != model.layout.roles:
            raise LayoutError(f"demo DoF roles {demo.layout.roles} do not match the model's {model.layout.roles}")
        frames = [f.values for f in demo.frames()]
    if not frames:
        raise DataError("no frames to process")

    session = model.session(args.seed, **_session_options(args))
    names = model.layout.names or tuple(f"dof{i}" for i in range(model.layout.dof_count))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frame"] + [f"p_{c}" for c in model.classes] + [f"phase_{c}" for c in model.classes]
               + [f"response_{names[i]}" for i in model.layout.controlled])
    for y in frames:
        out = session.step(y)
        w.writerow([out.frame_index] + [repr(float(v)) for v in out.class_posterior]
                   + [repr(m.phase) for m in out.mean_states] + [repr(float(v)) for v in out.response])
        if session.finished:
            break
    _write(args.out, buf.getvalue())
    state = "finished" if session.finished else "still running"
    print(f"processed {session.frame_count} frames ({state}) -> {args.out}")
    return EXIT_OK


def _pairs(text: str) -> list[tuple[int, int]]:
    try:
        return [tuple(int(v) for v in p.split(":")) for p in text.split(",") if p]
    except ValueError:
        raise argparse.ArgumentTypeError("expected OBS:CTRL[,OBS:CTRL...]") from None


def _check_ground_truth(demos, model: BbipModel, path: str) -> None:
    for i, d in enumerate(demos):
        if d.layout.roles != model.layout.roles:
            raise DataError(f"{path!r} record {i}: DoF roles {d.layout.roles} do not provide the model's "
                            f"controlled DoFs {model.layout.controlled} as ground truth")


def cmd_eval(args) -> int:
    predictors = [p for p in args.predictors.split(",") if p]
    unknown = set(predictors) - {"bbip", "bip"}
    if unknown or not predictors:
        raise ConfigError(f"unknown predictor(s) {sorted(unknown)}; choose from bbip, bip")
    if args.test is None and args.switching is None:
        raise ConfigError("give --test and/or --switching")
    if args.switching is not None and args.truth is None:
        raise DataError("switching corpus given without its ground truth (--truth)")
    given = dict(args.model or [])
    out = _out_dir(args.out)

    models: dict[str, BbipModel] = {}
    train_demos = _load_corpus(args.train) if args.train else None
    for name in predictors:
        if name in given:
            models[name] = _load_model(given[name])
        elif train_demos is not None:
            models[name] = train_with_report(_split(train_demos, name == "bip"), _train_config(args))[0]
        else:
            raise ConfigError(f"predictor {name!r} needs --train or --model {name}=PATH")

    sets = {}
    if args.test is not None:
        sets["non_switching"] = _load_corpus(args.test)
    if args.switching is not None:
        sets["switching"] = _load_corpus(args.switching)
        try:
            with open(args.truth, encoding="utf-8") as fh:
                truth = json.load(fh)["switching"]
        except (OSError, KeyError, ValueError) as exc:
            raise DataError(f"cannot read switching ground truth from {args.truth!r}: {exc}") from None
        if len(truth) != len(sets["switching"]):
            raise DataError(f"ground truth lists {len(truth)} switching demos, corpus has {len(sets['switching'])}")

    reports: dict[str, list[ev.EvalReport]] = {}
    curves, traces, detection = {}, None, None
    for set_name, demos in sets.items():
        reports[set_name] = []
        for name in predictors:
            model = models[name]
            _check_ground_truth(demos, model, args.switching if set_name == "switching" else args.test)
            rep, results = ev.run_corpus(model, demos, seed=args.seed, name=name, pairs=args.pairs,
                                         max_lag=args.max_lag, rate=args.rate, n_jobs=args.jobs, keep=True)
            reports[set_name].append(rep)
            if rep.lag_curve is not None and (set_name == "switching" or "switching" not in sets):
                curves[f"{set_name}_{name}"] = rep.lag_curve
            if name == predictors[0] and (set_name == "switching" or "switching" not in sets):
                traces = (model.classes, [r.posteriors for r in results if r.error is None])
            if set_name == "switching" and len(model.classes) > 1:
                errs = []
                for r, t in zip(results, truth):
                    if r.error is not None or t["source"] not in model.classes or t["target"] not in model.classes:
                        errs.append(None)
                        continue
                    f = ev.switch_frame(r.posteriors, model.classes.index(t["source"]),
                                        model.classes.index(t["target"]))
                    errs.append(None if f is None else f - t["switch_index"])
                detection = detection or {}
                detection[name] = {
                    "frame_errors": errs,
                    "within_10_frames": sum(e is not None and abs(e) <= 10 for e in errs),
                    "total": len(errs),
                }

    body = {
        "seed": args.seed,
        "sample_rate": args.rate,
        "pairs": [list(p) for p in args.pairs] if args.pairs else None,
        "sets": {k: [r.to_dict() for r in v] for k, v in reports.items()},
        "switch_detection": detection,
    }
    _write(os.path.join(out, "report.json"), _json(body))
    _write(os.path.join(out, "table.txt"), ev.table_text(reports.get("switching"), reports.get("non_switching")))
    if curves:
        _write(os.path.join(out, "lag_curves.csv"), ev.curve_csv(curves, args.rate))
    if traces is not None:
        _write(os.path.join(out, "posterior_traces.csv"), ev.traces_csv(*traces))
    sys.stdout.write(ev.table_text(reports.get("switching"), reports.get("non_switching")))
    for set_name, reps in reports.items():
        for rep in reps:
            if rep.failed:
                print(f"  {set_name}/{rep.predictor}: {len(rep.failed)} demo(s) failed: {rep.failed}")
            if rep.lag_seconds is not None:
                print(f"  {set_name}/{rep.predictor}: lag {rep.lag_seconds:.4f} s, "
                      f"total correlation {rep.max_total_correlation:.4f}")
    return EXIT_OK


def _inspect_text(path: str) -> dict:
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    if text.startswith("BBIP-MODEL"):
        from .model import loads_model
        m = loads_model(text)
        return {
            "kind": "model",
            "format_version": m.format_version,
            "classes": list(m.classes),
            "ensemble_sizes": m.ensemble_sizes,
            "basis": m.basis.to_dict(),
            "layout": m.layout.to_dict(),
            "measurement_noise": m.ensembles[m.classes[0]].measurement_noise.tolist(),
            "lda_eigenvalues": m.classifier.eigenvalues.tolist() if m.classifier is not None else None,
            "config": m.config.to_dict(),
        }
    from .trajectory import parse_demonstrations
    demos = parse_demonstrations(text)
    labels: dict[str, int] = {}
    for d in demos:
        key = d.class_label if d.class_label is not None else ""
        labels[key] = labels.get(key, 0) + 1
    lengths = [d.sample_count for d in demos]
    return {
        "kind": "trajectories",
        "records": len(demos),
        "labels": labels,
        "lengths": {"min": min(lengths), "max": max(lengths)} if lengths else None,
        "layouts": sorted({json.dumps(d.layout.to_dict(), sort_keys=True) for d in demos}),
    }


def cmd_inspect(args) -> int:
    try:
        info = _inspect_text(args.path)
    except OSError as exc:
        raise DataError(f"cannot read {args.path!r}: {exc}") from None
    text = _json(info)
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bbip", description="Blended multi-class interaction primitives.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--seed", type=int, default=0, help="master seed (default 0, always logged)")
        return p

    p = add("synth", "Generate a labelled synthetic corpus with ground truth.")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--per-class", type=int, default=15)
    p.add_argument("--length", type=int, default=120, help="nominal samples per demo")
    p.add_argument("--duration-jitter", type=float, default=0.15)
    p.add_argument("--amplitude-jitter", type=float, default=0.05)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--switch", type=float, default=None, metavar="FRACTION",
                   help="also write switching demos that change class at this fraction of their length")
    p.add_argument("--switch-count", type=int, default=10)
    p.add_argument("--blend", type=float, default=0.1, help="blend window, fraction of the length")
    p.add_argument("--rate", type=float, default=120.0, help="sample rate, Hz")
    p.set_defaults(func=cmd_synth)

    p = add("train", "Train a model from a trajectory file.")
    p.add_argument("corpus")
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--report", default=None, help="training report (default <out>.report.json)")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--classes-from-labels", action="store_true", help="one class per record label (default)")
    mode.add_argument("--single-class", action="store_true", help="pool every demo into one class")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = add("infer", "Stream a demo (or stdin frames) through a model and write a transcript.")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="trajectory file, or '-' for whitespace separated frames")
    p.add_argument("--index", type=int, default=0, help="record to replay from a trajectory file")
    p.add_argument("--out", required=True, help="transcript CSV")
    _add_session_flags(p)
    p.set_defaults(func=cmd_infer)

    p = add("eval", "Evaluate predictors on held-out corpora: MSE table, lag curves, posterior traces.")
    p.add_argument("--train", default=None, help="training corpus for predictors without --model")
    p.add_argument("--model", action="append", type=lambda s: tuple(s.split("=", 1)), metavar="NAME=PATH",
                   help="use a saved model for predictor NAME")
    p.add_argument("--test", default=None, help="non-switching test corpus")
    p.add_argument("--switching", default=None, help="switching test corpus")
    p.add_argument("--truth", default=None, help="ground-truth sidecar written by synth")
    p.add_argument("--predictors", default="bbip,bip")
    p.add_argument("--pairs", type=_pairs, default=None, metavar="OBS:CTRL,...",
                   help="matched DoF pairs for the lag analysis")
    p.add_argument("--max-lag", type=int, default=36, help="samples")
    p.add_argument("--rate", type=float, default=120.0, help="sample rate, Hz")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    _add_train_flags(p)
    p.set_defaults(func=cmd_eval)

    p = add("inspect", "Summarize a model or trajectory file.")
    p.add_argument("path")
    p.add_argument("--out", default=None, help="write the summary here instead of stdout")
    p.set_defaults(func=cmd_inspect)
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, TrainingError):
        cause = exc.cause
        if isinstance(cause, (NumericalError, np.linalg.LinAlgError, FloatingPointError)):
            return EXIT_NUMERIC
        return EXIT_DATA
    if isinstance(exc, (NumericalError, np.linalg.LinAlgError, FloatingPointError)):
        return EXIT_NUMERIC
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    return EXIT_DATA


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    print(f"bbip {args.command}: seed={args.seed}", file=sys.stderr)
    try:
        return args.func(args)
    except (BbipError, LayoutError, StatisticsError, TrajectoryParseError, ModelIntegrityError,
            ModelVersionError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"bbip {args.command}: error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
