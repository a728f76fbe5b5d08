import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from plcbridge.simclock import run_virtual  # noqa: E402


@pytest.fixture
def virtual():
    """Run a coroutine to completion on a fresh virtual-clock loop."""
    return run_virtual
