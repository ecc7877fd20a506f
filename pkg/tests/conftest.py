import numpy as np
import pytest

from querysugg import annotation
from querysugg.data import WorldConfig, generate_world


@pytest.fixture(scope="session")
def small_world():
    """Tiny labeled world shared by fast tests (d=8, 2 topics)."""
    world = generate_world(
        WorldConfig(dim=8, vocab=16, topics=2, images_per_topic=4, seed=13)
    )
    annotation.oracle_annotate(world, 0.6)
    return world


@pytest.fixture(scope="session")
def default_world():
    """Default-scale labeled world for training-quality tests."""
    world = generate_world(WorldConfig(seed=0))
    annotation.oracle_annotate(world, 0.6)
    return world


def fd_gradient(loss_fn, blocks: dict, key: str, flat_index: int, h: float = 1e-5) -> float:
    """Central finite difference of loss_fn at one parameter coordinate."""
    arr = blocks[key].ravel()
    orig = arr[flat_index]
    arr[flat_index] = orig + h
    plus = loss_fn()
    arr[flat_index] = orig - h
    minus = loss_fn()
    arr[flat_index] = orig
    return (plus - minus) / (2 * h)


def max_relative_error(
    loss_fn, blocks: dict, grads: dict, coords_per_block: int = 20, seed: int = 0
) -> float:
    """Worst relative error between analytic grads and central differences
    over `coords_per_block` random coordinates of every block in `grads`."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for key, g in grads.items():
        flat = g.ravel()
        n = min(coords_per_block, flat.size)
        idx = rng.choice(flat.size, size=n, replace=False)
        for i in idx:
            fd = fd_gradient(loss_fn, blocks, key, int(i))
            ga = flat[int(i)]
            denom = max(abs(ga), abs(fd), 1e-8)
            worst = max(worst, abs(ga - fd) / denom)
    return worst
