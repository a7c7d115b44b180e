import os

import numpy as np
import pytest
from hypothesis import settings

from m2d import kinlab, sigprep, synthgen

settings.register_profile("m2d", deadline=None, max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "m2d"))


@pytest.fixture(scope="session")
def default_session():
    """Default generator settings, seed 1."""
    return synthgen.gen_session(synthgen.SynthConfig(seed=1), 1)


@pytest.fixture(scope="session")
def short_session():
    return synthgen.gen_session(synthgen.SynthConfig(seed=7, duration=120.0), 7)


@pytest.fixture(scope="session")
def prepared_session(default_session):
    """Z-scored EEG and kinematic labels on the EEG timeline."""
    eeg = sigprep.preprocess(default_session.eeg, sigprep.PrepConfig())
    al = sigprep.resample_to_eeg(default_session.track, eeg.timestamps)
    labels = kinlab.classify(al.v, al.psi_dot, al.delta_theta, kinlab.Thresholds())
    return eeg, kinlab.LabelSeries(eeg.timestamps, labels)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance reporting ------------------------------------------------------

_RESULTS = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    status = "PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL"
    line = f"criterion {number:>2} {status}  {title}" + (f": {detail}" if detail else "")
    _RESULTS.append((number, line))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_RESULTS):
        terminalreporter.write_line(line)
