import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from xadm.green_potential import solve_radial  # noqa: E402
from xadm.presets import get_preset  # noqa: E402


@pytest.fixture(scope="session")
def radial_solution():
    """Cached radial solves keyed by preset name and parameters."""
    cache = {}

    def get(name, **params):
        key = (name, tuple(sorted(params.items())))
        if key not in cache:
            inst = get_preset(name, **params)
            cache[key] = (inst, solve_radial(inst.chart, inst.drift))
        return cache[key]

    return get
