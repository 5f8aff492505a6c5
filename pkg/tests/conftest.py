import numpy as np
import pytest

from bisobolev.mesh import structured_grid
from bisobolev.pamap import PAMap


def grid_map(nx: int, ny: int, rng, jitter: float = 0.15, affine: bool = True) -> PAMap:
    """Random small perturbation of the identity on an nx x ny grid of the unit square,
    optionally followed by a random orientation-preserving affine map."""
    t = structured_grid(0.0, 0.0, 1.0, 1.0, nx, ny)
    h = min(1.0 / nx, 1.0 / ny)
    v = t.vertices.copy()
    interior = (v[:, 0] > 0) & (v[:, 0] < 1) & (v[:, 1] > 0) & (v[:, 1] < 1)
    v[interior] += rng.uniform(-jitter * h, jitter * h, size=(int(interior.sum()), 2))
    if affine:
        while True:
            M = rng.normal(size=(2, 2)) + 2 * np.eye(2)
            if np.linalg.det(M) > 0.2:
                break
        v = v @ M.T + rng.normal(size=2)
    return PAMap(t, v)


def fold_map(nx: int, ny: int, rng) -> PAMap:
    """Grid map in which one interior vertex is pushed across its neighbours."""
    t = structured_grid(0.0, 0.0, 1.0, 1.0, nx, ny)
    v = t.vertices.copy()
    interior = np.flatnonzero((v[:, 0] > 0) & (v[:, 0] < 1) & (v[:, 1] > 0) & (v[:, 1] < 1))
    k = rng.choice(interior)
    h = 1.0 / max(nx, ny)
    ang = rng.uniform(0, 2 * np.pi)
    v[k] += rng.uniform(1.2, 3.0) * h * np.array([np.cos(ang), np.sin(ang)])
    return PAMap(t, v)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
