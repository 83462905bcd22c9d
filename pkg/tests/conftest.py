import json
from pathlib import Path

import numpy as np
import pytest

from dvar_lab.toymodel import WorldConfig, build_world

FROZEN = json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())


@pytest.fixture(scope="session")
def frozen():
    return FROZEN


@pytest.fixture(scope="session")
def world0():
    return build_world(WorldConfig(), 0)


@pytest.fixture(scope="session")
def worlds():
    return [build_world(WorldConfig(), s) for s in (0, 1, 2)]


def naive_var(x):
    x = np.asarray(x, dtype=float)
    mu = x.sum() / len(x)
    return float(((x - mu) ** 2).sum() / len(x))


def naive_slope(y):
    y = np.asarray(y, dtype=float)
    x = np.arange(len(y), dtype=float)
    xm, ym = x.mean(), y.mean()
    return float(((x - xm) * (y - ym)).sum() / ((x - xm) ** 2).sum())
