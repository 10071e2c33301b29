import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from motionctx.model import ModelDims, init_params  # noqa: E402
from motionctx.skeleton import MotionSequence  # noqa: E402

TOY = ModelDims(frame_dim=6, embed=4, embed_hidden=4, attention=4, mhu=8, gate=8)


def sinusoid_sequence(length, joints=3, period=20.0, amplitude=0.8, offset=0, label=None, subject=None, fps=25):
    t = np.arange(offset, offset + length)[:, None]
    phases = np.linspace(0.0, 2 * np.pi, 3 * joints, endpoint=False)
    return MotionSequence(amplitude * np.sin(2 * np.pi * t / period + phases), fps=fps, label=label, subject=subject)


def randomized(params, rng, scale=1.0):
    """Replace every array (biases included) with uniform noise so no path is trivially zero."""
    out = params.copy()
    for k, v in out.arrays.items():
        out.arrays[k] = rng.uniform(-scale, scale, size=v.shape)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_params(rng):
    return randomized(init_params(TOY, seed=0), rng, 0.7)


@pytest.fixture
def toy_conditioned(rng):
    dims = ModelDims(frame_dim=6, embed=4, embed_hidden=4, attention=4, mhu=8, gate=8, label_embed=3, num_labels=3)
    return randomized(init_params(dims, seed=0, labels=("sitting", "walking", "waving")), rng, 0.7)


# acceptance reporting: one line per criterion at the end of the run
_RESULTS: dict[str, str] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    name = marker.args[0]
    if rep.skipped:
        reason = rep.longrepr[-1] if isinstance(rep.longrepr, tuple) else "skipped"
        _RESULTS[name] = f"SKIP  ({reason})"
    elif rep.failed:
        _RESULTS[name] = "FAIL"
    elif rep.when == "call":
        _RESULTS.setdefault(name, "PASS")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_RESULTS, key=lambda n: int(n.split(".")[0])):
        status, _, note = _RESULTS[name].partition(" ")
        terminalreporter.write_line(f"{status:<5} criterion {name} {note.strip()}".rstrip())
