import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ccr.config import HyperParams  # noqa: E402
from ccr.features import SynthSpec, generate_synthetic  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_spec():
    dims = {m: 16 for m in ("visual", "english", "non_english", "description")}
    tokens = {"visual": 4, "english": 3, "non_english": 3, "description": 5}
    return SynthSpec(n_items=48, n_test=16, latent_dim=16, dims=dims, n_tokens=tokens)


@pytest.fixture(scope="session")
def tiny_data(tiny_spec):
    return generate_synthetic(tiny_spec, seed=5)


@pytest.fixture
def tiny_hp():
    return HyperParams(d=16, n_q=2, heads=2, batch_size=8, epochs=2, tau=0.1)


def pytest_terminal_summary(terminalreporter):
    """Print one line per acceptance criterion that ran in this session."""
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
