import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from idpseg.config import PipelineConfig  # noqa: E402
from idpseg.core import stack  # noqa: E402
from idpseg.lowrank import decompose  # noqa: E402
from idpseg.segment import run_pipeline  # noqa: E402
from idpseg.synth import SynthConfig, render  # noqa: E402


@pytest.fixture(scope="session")
def synth64():
    """20 frames of 64x64, rank-2 background, 6 cells, no noise."""
    return render(SynthConfig(width=64, height=64, n_frames=20, bg_rank=2, cell_count=6, seed=0))


@pytest.fixture(scope="session")
def synth64_noisy():
    return render(SynthConfig(width=64, height=64, n_frames=20, bg_rank=2, cell_count=6,
                              noise_sigma=0.02, noise_correlated=True, seed=0))


@pytest.fixture(scope="session")
def decomposed64(synth64):
    t0 = time.perf_counter()
    dec = decompose(stack(synth64.sequence), synth64.sequence.shape)
    return dec, time.perf_counter() - t0


@pytest.fixture(scope="session")
def decomposed64_noisy(synth64_noisy):
    return decompose(stack(synth64_noisy.sequence), synth64_noisy.sequence.shape)


@pytest.fixture(scope="session")
def pipeline64(synth64):
    return run_pipeline(synth64.sequence, PipelineConfig())


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
