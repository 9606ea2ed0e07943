import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bbip import classifier as _classifier
from bbip import model as _model

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# Every class posterior produced anywhere in the suite goes through this
# check; the acceptance summary reports the totals.
POSTERIOR_LOG = {"checked": 0, "violations": []}
ACCEPTANCE = {}


def _check_posterior(p, where):
    p = np.asarray(p, dtype=float)
    rows = p.reshape(-1, p.shape[-1])
    POSTERIOR_LOG["checked"] += rows.shape[0]
    bad = (np.abs(rows.sum(axis=1) - 1.0) > 1e-9) | np.any((rows < 0) | (rows > 1), axis=1)
    if np.any(bad):
        POSTERIOR_LOG["violations"].append((where, rows[bad][0].tolist()))


@pytest.fixture(autouse=True, scope="session")
def _posterior_monitor():
    step = _model.InferenceSession.step
    posterior = _classifier.LdaClassifier.posterior

    def checked_step(self, frame, forced_posterior=None):
        out = step(self, frame, forced_posterior)
        if forced_posterior is None:
            _check_posterior(out.class_posterior, "InferenceSession.step")
        return out

    def checked_posterior(self, y):
        p = posterior(self, y)
        _check_posterior(p, "LdaClassifier.posterior")
        return p

    _model.InferenceSession.step = checked_step
    _classifier.LdaClassifier.posterior = checked_posterior
    yield
    _model.InferenceSession.step = step
    _classifier.LdaClassifier.posterior = posterior


@pytest.fixture
def criterion(request):
    """Record the outcome line of one acceptance criterion."""

    def record(number, title, passed, detail):
        ACCEPTANCE[number] = (title, bool(passed), detail)
        return passed

    return record


def pytest_sessionfinish(session, exitstatus):
    if POSTERIOR_LOG["violations"] and session.exitstatus == 0:
        session.exitstatus = 1


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    if 9 in ACCEPTANCE and POSTERIOR_LOG["violations"]:
        # validity covers the whole run, not only the battery in criterion 9
        title, _, detail = ACCEPTANCE[9]
        ACCEPTANCE[9] = (title, False, detail)
    for n in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[n]
        tr.write_line(f"criterion {n:2d} {'PASS' if passed else 'FAIL'}: {title}: {detail}")
    v = POSTERIOR_LOG["violations"]
    tr.write_line(f"posterior monitor: {POSTERIOR_LOG['checked']} posteriors checked over the whole run, "
                  f"{len(v)} invalid" + (f" (first: {v[0]})" if v else ""))
