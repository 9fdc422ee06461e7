import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture(scope="session")
def cantilever_runs():
    """Full and IRA legs of the 80 x 40 cantilever, shared across test modules."""
    from ira_mmc.driver import RunConfig, run

    return {s: run(RunConfig(problem="cantilever", nelx=80, nely=40, solver=s)) for s in ("full", "ira")}
