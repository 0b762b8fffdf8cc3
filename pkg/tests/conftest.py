import numpy as np
import pytest
import torch

from v2a.codec import analyze, fit_rvq
from v2a.synthworld import make_clip


@pytest.fixture(scope="session")
def small_codec():
    """A codec fitted on 40 clips; enough for shape/contract tests."""
    clips = [make_clip(f"c{i}", 500 + i) for i in range(40)]
    return fit_rvq([analyze(c.audio.samples) for c in clips], N_q=4, K=64, seed=0, iters=5)


@pytest.fixture(autouse=True)
def _deterministic_torch():
    torch.manual_seed(0)
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for rec in sorted(ACCEPTANCE, key=lambda r: r["n"]):
        status = "PASS" if rec["ok"] else "FAIL"
        terminalreporter.write_line(f"{status}  {rec['n']:>2}. {rec['title']}  {rec['detail']}")
