import numpy as np
import pytest

from zonegraph.embedding import EmbeddingProvider
from zonegraph.sim import CELL, ObjectInstance, Scene


def make_scene(width, depth, objects, blocked=(), room="kitchen", sid="test", seed=0):
    """Hand-built scene for unit tests; skips the generator's invariants."""
    reach = np.ones((depth, width), dtype=bool)
    for ix, iz in blocked:
        reach[iz, ix] = False
    objs = tuple(
        ObjectInstance(cat, ix * CELL, iz * CELL, band) for cat, ix, iz, band in objects
    )
    return Scene(id=sid, room_category=room, width=width, depth=depth,
                 reachable=reach, objects=objs, seed=seed)


@pytest.fixture(scope="session")
def provider():
    return EmbeddingProvider.synthetic(dim=64, seed=0)


@pytest.fixture(scope="session")
def small_provider():
    return EmbeddingProvider.synthetic(dim=8, seed=0)
