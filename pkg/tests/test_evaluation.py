import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import pearsonr

from bbip import evaluation as ev
from bbip.model import train, train_single
from bbip.synthetic import MATCHED_PAIRS, SyntheticConfig, generate_synthetic
from bbip.trajectory import Demonstration, DofLayout


# -- mse ------------------------------------------------------------------------

def test_mse_examples():
    a = np.random.default_rng(0).normal(size=(2, 30))
    assert ev.mse(a, a) == 0.0
    assert ev.mse(np.ones((2, 5)), np.zeros((2, 5))) == 1.0
    with pytest.raises(ValueError):
        ev.mse(np.zeros((2, 5)), np.zeros((2, 6)))


def test_mse_against_elementwise_oracle():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(3, 40)), rng.normal(size=(3, 40))
    oracle = math.fsum((x - y) ** 2 for x, y in zip(a.ravel(), b.ravel())) / a.size
    assert ev.mse(a, b) == pytest.approx(oracle, abs=1e-12)


@given(st.integers(0, 1000), st.floats(-10, 10).filter(lambda c: abs(c) > 1e-6))
def test_mse_symmetric_and_translation_sensitive(seed, shift):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(2, 10)), rng.normal(size=(2, 10))
    assert ev.mse(a, b) == ev.mse(b, a)
    assert ev.mse(a + shift, a) == pytest.approx(shift**2)


# -- correlation lag ------------------------------------------------------------

def test_pearson_matches_scipy_and_handles_constants():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=50), rng.normal(size=50)
    assert ev.pearson(a, b) == pytest.approx(pearsonr(a, b)[0], abs=1e-12)
    assert ev.pearson(np.ones(10), a[:10]) == 0.0


def test_identical_signals_lag_zero():
    h = np.random.default_rng(3).normal(size=(2, 200)).cumsum(axis=1)
    res = ev.correlation_lag(h, h, max_lag=30, rate=120.0)
    assert res.lag_seconds == 0.0
    assert res.max_total_correlation == pytest.approx(2.0, abs=1e-12)
    assert res.curve.shape == (31,)


def test_delayed_response_recovered():
    rng = np.random.default_rng(4)
    T, d = 400, 12
    source = rng.normal(size=(2, T + d)).cumsum(axis=1)
    human, robot = source[:, d:], source[:, :-d]      # robot lags the human by 12 samples
    robot = np.empty_like(human)
    robot[:, d:] = human[:, :-d]
    robot[:, :d] = source[:, :d]
    res = ev.correlation_lag(human, robot, max_lag=40, rate=120.0)
    assert res.lag_samples == 12
    assert res.lag_seconds == pytest.approx(0.1, abs=1e-15)
    assert abs(res.max_total_correlation - 2.0) < 1e-6


def test_lag_ties_pick_the_smallest():
    flat = np.ones((1, 20))
    res = ev.correlation_lag(flat, flat, max_lag=5, rate=10.0)
    assert res.lag_samples == 0 and np.all(res.curve == 0.0)


def test_lag_preconditions():
    with pytest.raises(ValueError):
        ev.lag_curve(np.zeros((2, 10)), np.zeros((2, 11)), 2)
    with pytest.raises(ValueError):
        ev.lag_curve(np.zeros((2, 10)), np.zeros((2, 10)), 5)


@given(st.integers(0, 500), st.floats(0.1, 10), st.floats(-5, 5), st.floats(0.1, 10), st.floats(-5, 5))
def test_lag_invariant_under_affine_rescaling(seed, a, b, c, d):
    rng = np.random.default_rng(seed)
    h = rng.normal(size=(2, 120)).cumsum(axis=1)
    r = np.roll(h, 5, axis=1) + 0.3 * rng.normal(size=h.shape)
    base = ev.correlation_lag(h, r, 20, 120.0)
    scaled = ev.correlation_lag(a * h + b, c * r + d, 20, 120.0)
    np.testing.assert_allclose(scaled.curve, base.curve, atol=1e-9)
    assert scaled.lag_samples == base.lag_samples
    assert np.all(np.abs(base.curve) <= 2.0 + 1e-12)


# -- switch frame ---------------------------------------------------------------

def test_switch_frame():
    trace = np.array([[0.3, 0.7], [0.6, 0.4], [0.8, 0.2], [0.55, 0.45], [0.4, 0.6], [0.2, 0.8]])
    assert ev.switch_frame(trace, 0, 1) == 4
    assert ev.switch_frame(trace, 1, 0) == 1
    assert ev.switch_frame(trace[:4], 0, 1) is None
    assert ev.switch_frame(np.array([[0.0, 1.0]] * 3), 0, 1) is None


# -- corpus runs ----------------------------------------------------------------

class Replay:
    """Predictor that plays back each demo's own controlled DoFs."""

    def __init__(self, demos, fail_on=None):
        self.lookup = {d.observed.tobytes(): d for d in demos}
        self.fail_on = fail_on

    def session(self, seed=0):
        outer = self

        class S:
            t = 0
            demo = None

            def step(self, frame):
                from bbip.model import StepOutput
                if self.demo is None:
                    self.demo = next(d for d in outer.lookup.values()
                                     if np.array_equal(d.observed[:, 0], frame.values))
                    if outer.fail_on is not None and self.demo is outer.fail_on:
                        raise FloatingPointError("boom")
                out = StepOutput(self.t, np.ones(1), (), self.demo.controlled[:, self.t])
                self.t += 1
                return out

        return S()


LAYOUT = DofLayout(controlled=(2, 3), observed=(0, 1))


def toy_demos(n, seed=0, T=40):
    rng = np.random.default_rng(seed)
    return [Demonstration(rng.normal(size=(4, T)).cumsum(axis=1), LAYOUT, "x") for _ in range(n)]


def test_exact_predictor_scores_zero():
    demos = toy_demos(1)
    rep = ev.run_corpus(Replay(demos), demos)
    assert rep.per_demo_mse == [0.0] and rep.mean_mse == 0.0


def test_identical_demos_have_zero_standard_error(corpus_models):
    m, _, test = corpus_models
    demos = [test.demos[0]] * 4
    rep = ev.run_corpus(m, demos, seed=3)
    assert len(set(rep.per_demo_mse)) == 1
    assert rep.stderr_mse == 0.0


def test_failures_are_recorded_not_fatal():
    demos = toy_demos(3, seed=1)
    rep = ev.run_corpus(Replay(demos, fail_on=demos[1]), demos)
    assert rep.failed == [1] and "boom" in rep.errors[1]
    assert rep.per_demo_mse[1] is None and rep.mean_mse == 0.0


def test_mean_and_standard_error():
    mean, se = ev.mean_stderr([1.0, 2.0, 3.0, 4.0])
    assert mean == 2.5
    assert se == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
    assert ev.mean_stderr([5.0]) == (5.0, 0.0)


@pytest.fixture(scope="module")
def corpus_models():
    train_c = generate_synthetic(SyntheticConfig(classes=3, per_class=5, length=60), seed=0)
    test_c = generate_synthetic(SyntheticConfig(classes=3, per_class=2, length=60, switch_count=2), seed=1)
    return train(train_c.by_class()), train_single(train_c.demos), test_c


def test_run_corpus_deterministic_and_permutation_invariant(corpus_models):
    m, _, test = corpus_models
    demos = test.demos
    a = ev.run_corpus(m, demos, seed=9, pairs=MATCHED_PAIRS, max_lag=20)
    b = ev.run_corpus(m, demos, seed=9, pairs=MATCHED_PAIRS, max_lag=20)
    assert a.to_dict() == b.to_dict()
    perm = [3, 0, 7, 5, 1, 6, 2, 4]
    c = ev.run_corpus(m, [demos[i] for i in perm], seed=9, pairs=MATCHED_PAIRS, max_lag=20)
    assert c.mean_mse == a.mean_mse and c.stderr_mse == a.stderr_mse
    assert c.per_demo_mse == [a.per_demo_mse[i] for i in perm]
    np.testing.assert_allclose(c.lag_curve, a.lag_curve, atol=1e-12)
    threaded = ev.run_corpus(m, demos, seed=9, pairs=MATCHED_PAIRS, max_lag=20, n_jobs=4)
    assert threaded.to_dict() == a.to_dict()


def test_report_fields_and_bounds(corpus_models):
    m, bip, test = corpus_models
    reps = [ev.run_corpus(p, test.demos, name=n, pairs=MATCHED_PAIRS, max_lag=20)
            for n, p in (("bbip", m), ("bip", bip))]
    for r in reps:
        assert all(v >= 0 for v in r.per_demo_mse)
        assert -2.0 <= r.max_total_correlation <= 2.0
        assert r.sample_rate == 120.0
        assert r.summary().startswith(r.predictor + ": ")
    text = ev.report_json(reps)
    assert json.loads(text)["reports"][0]["predictor"] == "bbip"
    table = ev.table_text(reps, None).splitlines()
    assert table[0] == "predictor\tswitching"
    assert table[1].startswith("bbip\t") and " +- " in table[1]


def test_csv_writers():
    text = ev.curve_csv({"a": [0.5, 0.25], "b": [1.0, 0.0]}, rate=120.0)
    assert text.splitlines() == ["lag_samples,lag_seconds,a,b", "0,0.0,0.5,1.0",
                                 f"1,{1 / 120.0!r},0.25,0.0"]
    traces = ev.traces_csv(("x", "y"), [np.array([[0.25, 0.75]])])
    assert traces.splitlines() == ["demo,frame,p_x,p_y", "0,0,0.25,0.75"]
