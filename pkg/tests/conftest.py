import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ehicl.hand import build_rig


@pytest.fixture(scope="session")
def rig():
    return build_rig(7)
