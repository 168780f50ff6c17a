from pathlib import Path

import numpy as np
import pytest

from afgrl.graph import SbmSpec, generate_sbm, load_graph
from afgrl.numerics import make_rng

FIXTURES = Path(__file__).parent / "fixtures"

# lines printed at the end of the run by the acceptance suite
ACCEPTANCE_LINES: list = []


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def five_node_graph():
    return load_graph(
        FIXTURES / "five_edges.txt", FIXTURES / "five_features.csv", FIXTURES / "five_labels.txt"
    )


@pytest.fixture(scope="session")
def sbm_graph():
    """3 x 60 planted partition used by the end-to-end checks."""
    spec = SbmSpec([60, 60, 60], p_in=0.2, p_out=0.02, feature_dim=32, feature_shift=1.0, seed=7)
    return generate_sbm(spec, make_rng(7, "sbm"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
