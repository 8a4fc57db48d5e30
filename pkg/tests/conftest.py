import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dualmar.phantom import PhantomParams, generate_head_phantom  # noqa: E402
from dualmar.tomo import ProjectionGeometry  # noqa: E402


@pytest.fixture(scope="session")
def geom128():
    return ProjectionGeometry.for_image(128, 180)


@pytest.fixture(scope="session")
def phantom128():
    return generate_head_phantom(np.random.default_rng(7), 128, 5, PhantomParams())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
