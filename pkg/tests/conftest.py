import numpy as np
import pytest

from gazetrack.policies import DiscreteActionSet
from gazetrack.tracker import AppearanceModels
from gazetrack.training import PretrainSettings, pretrain

# small enough to train in about a second; quality is irrelevant for plumbing tests
SMALL = PretrainSettings(
    rbm_samples_per_class=60,
    rbm_epochs=3,
    mf_windows_per_class=30,
    mf_epochs=3,
    readout_epochs=40,
)


@pytest.fixture(scope="session")
def small_pretrained():
    return pretrain(SMALL, np.random.default_rng(0))


@pytest.fixture(scope="session")
def small_models(small_pretrained):
    m = small_pretrained
    return AppearanceModels(m.rbm, m.geometry, DiscreteActionSet(m.fixations), m.mfrbm, m.readout)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE = {}


@pytest.fixture
def criterion():
    def record(number, passed, detail):
        ACCEPTANCE[number] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
