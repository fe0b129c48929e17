import functools
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from wfbench.graph import build_graph  # noqa: E402
from wfbench.metric import make_circle  # noqa: E402
from wfbench.workfn import WFContext  # noqa: E402


@functools.lru_cache(maxsize=None)
def preset_graph(k, m):
    return build_graph(WFContext(make_circle(m), k))


@pytest.fixture(scope="session")
def g36():
    return preset_graph(3, 6)


@pytest.fixture(scope="session")
def g46():
    return preset_graph(4, 6)


@pytest.fixture(scope="session")
def ctx36():
    return WFContext(make_circle(6), 3)
