import csv
import hashlib
import io
import json
import os

import numpy as np
import pytest

from bbip import cli
from bbip.cli import ConfigError
from bbip.errors import NumericalError, TrainingError
from bbip.trajectory import load_demonstrations


def run(*argv):
    return cli.main([str(a) for a in argv])


def digest(directory):
    out = {}
    for root, _, files in os.walk(directory):
        for f in sorted(files):
            p = os.path.join(root, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, directory)] = hashlib.sha256(fh.read()).hexdigest()
    return out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("synth", "--out", d / "train", "--per-class", 5, "--length", 60, "--seed", 1) == 0
    assert run("synth", "--out", d / "test", "--per-class", 2, "--length", 60, "--switch", 0.5,
               "--switch-count", 3, "--seed", 2) == 0
    assert run("train", d / "train" / "corpus.traj", "--out", d / "m.json") == 0
    assert run("train", d / "train" / "corpus.traj", "--out", d / "single.json", "--single-class") == 0
    return d


def test_synth_outputs(workspace):
    truth = json.loads((workspace / "test" / "truth.json").read_text())
    assert truth["seed"] == 2 and len(truth["switching"]) == 3
    assert len(load_demonstrations(str(workspace / "train" / "corpus.traj"))) == 15
    assert not (workspace / "train" / "switching.traj").exists()
    assert len(load_demonstrations(str(workspace / "test" / "switching.traj"))) == 3


def test_train_writes_model_and_report(workspace):
    report = json.loads((workspace / "m.report.json").read_text())
    assert report["classes"] == ["left_high", "middle", "right_high"]
    assert report["ensemble_sizes"] == {c: 5 for c in report["classes"]}


def test_infer_transcript(workspace, tmp_path):
    corpus = workspace / "train" / "corpus.traj"
    assert run("infer", "--model", workspace / "m.json", "--input", corpus, "--index", 2,
               "--out", tmp_path / "t.csv") == 0
    rows = read_csv(tmp_path / "t.csv")
    classes = ("left_high", "middle", "right_high")
    header = list(rows[0])
    assert header[:7] == ["frame"] + [f"p_{c}" for c in classes] + [f"phase_{c}" for c in classes]
    assert len(header) == 9 and all(h.startswith("response_") for h in header[7:])
    for r in rows:
        p = [float(r[f"p_{c}"]) for c in classes]
        assert abs(sum(p) - 1.0) < 1e-9 and all(0 <= v <= 1 for v in p)
    # a replayed training demo ends near the end of the interaction
    last = rows[-1]
    mean_phase = sum(float(last[f"p_{c}"]) * float(last[f"phase_{c}"]) for c in classes)
    assert abs(mean_phase - 1.0) < 0.05


def test_single_class_posterior_is_constant(workspace, tmp_path):
    assert run("infer", "--model", workspace / "single.json", "--input", workspace / "train" / "corpus.traj",
               "--out", tmp_path / "t.csv") == 0
    assert {r["p_all"] for r in read_csv(tmp_path / "t.csv")} == {"1.0"}


def test_infer_from_stdin(workspace, tmp_path, monkeypatch):
    demo = load_demonstrations(str(workspace / "train" / "corpus.traj"))[0]
    text = "\n".join(" ".join(repr(float(v)) for v in col) for col in demo.observed.T[:10])
    monkeypatch.setattr("sys.stdin", io.StringIO("# observed only\n" + text + "\n"))
    assert run("infer", "--model", workspace / "m.json", "--input", "-", "--out", tmp_path / "s.csv") == 0
    assert len(read_csv(tmp_path / "s.csv")) == 10


def test_eval_outputs(workspace, tmp_path):
    before = digest(workspace / "test")
    assert run("eval", "--train", workspace / "train" / "corpus.traj", "--test", workspace / "test" / "corpus.traj",
               "--switching", workspace / "test" / "switching.traj", "--truth", workspace / "test" / "truth.json",
               "--pairs", "1:3,2:4", "--max-lag", 20, "--out", tmp_path / "ev") == 0
    assert digest(workspace / "test") == before               # inputs untouched
    report = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert set(report["sets"]) == {"non_switching", "switching"}
    assert report["switch_detection"]["bbip"]["total"] == 3
    assert (tmp_path / "ev" / "table.txt").read_text().startswith("predictor\tswitching\tnon_switching")
    assert read_csv(tmp_path / "ev" / "lag_curves.csv")[0].keys() >= {"switching_bbip", "switching_bip"}
    assert (tmp_path / "ev" / "posterior_traces.csv").exists()


def test_eval_bip_only_with_saved_model(workspace, tmp_path):
    assert run("eval", "--model", f"bip={workspace / 'single.json'}", "--predictors", "bip",
               "--test", workspace / "test" / "corpus.traj", "--out", tmp_path / "ev") == 0
    report = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert [r["predictor"] for r in report["sets"]["non_switching"]] == ["bip"]
    assert report["switch_detection"] is None


def test_inspect(workspace, capsys):
    assert run("inspect", workspace / "m.json") == 0
    model_info = json.loads(capsys.readouterr().out)
    assert model_info["classes"] == ["left_high", "middle", "right_high"]
    assert run("inspect", workspace / "train" / "corpus.traj") == 0
    assert "left_high" in capsys.readouterr().out


def test_seed_is_logged(workspace, tmp_path, capsys):
    run("synth", "--out", tmp_path, "--per-class", 1, "--length", 20, "--seed", 42)
    assert "bbip synth: seed=42" in capsys.readouterr().err


def test_every_subcommand_is_byte_deterministic(workspace, tmp_path):
    def all_commands(out):
        out.mkdir()
        assert run("synth", "--out", out / "s", "--per-class", 3, "--length", 50, "--switch", 0.5,
                   "--switch-count", 2, "--seed", 5) == 0
        assert run("train", out / "s" / "corpus.traj", "--out", out / "m.json", "--seed", 5) == 0
        assert run("infer", "--model", out / "m.json", "--input", out / "s" / "switching.traj",
                   "--out", out / "t.csv", "--seed", 5) == 0
        assert run("eval", "--model", f"bbip={out / 'm.json'}", "--train", out / "s" / "corpus.traj",
                   "--switching", out / "s" / "switching.traj", "--truth", out / "s" / "truth.json",
                   "--pairs", "1:3,2:4", "--max-lag", 15, "--jobs", 2, "--out", out / "ev", "--seed", 5) == 0
        assert run("inspect", out / "m.json", "--out", out / "inspect.json") == 0
        return digest(out)

    a, b = all_commands(tmp_path / "a"), all_commands(tmp_path / "b")
    assert len(a) >= 10 and a == b


# -- exit codes -----------------------------------------------------------------

def test_bad_flags_exit_2(workspace, tmp_path):
    with pytest.raises(SystemExit) as info:
        run("train", "--nope")
    assert info.value.code == 2
    assert run("synth", "--out", tmp_path, "--classes", 0) == 2
    assert run("infer", "--model", workspace / "m.json", "--input", workspace / "train" / "corpus.traj",
               "--index", 99, "--out", tmp_path / "x.csv") == 2
    assert run("eval", "--predictors", "bbip", "--out", tmp_path / "e") == 2
    assert run("eval", "--predictors", "zzz", "--test", workspace / "test" / "corpus.traj",
               "--out", tmp_path / "e") == 2


def test_bad_data_exit_3(workspace, tmp_path):
    bad = tmp_path / "bad.traj"
    bad.write_text("this is not a trajectory file\n")
    assert run("train", bad, "--out", tmp_path / "m.json") == 3
    assert not (tmp_path / "m.json").exists()
    assert run("eval", "--model", f"bbip={workspace / 'm.json'}", "--predictors", "bbip",
               "--switching", workspace / "test" / "switching.traj", "--out", tmp_path / "e") == 3
    broken = tmp_path / "broken.json"
    broken.write_text((workspace / "m.json").read_text()[:-40])
    assert run("inspect", broken) == 3
    assert run("infer", "--model", broken, "--input", "-", "--out", tmp_path / "x.csv") == 3


def test_numerical_failures_map_to_exit_4():
    assert cli._exit_code(NumericalError("x")) == 4
    assert cli._exit_code(np.linalg.LinAlgError("x")) == 4
    assert cli._exit_code(TrainingError("fit", NumericalError("x"))) == 4
    assert cli._exit_code(TrainingError("fit", ValueError("x"))) == 3
    assert cli._exit_code(ConfigError("x")) == 2
