import numpy as np
import pytest

from radiozone.envgen import (EnvironmentConfig, Obstacle, build_environment)


@pytest.fixture(scope="session")
def flat_env():
    """10x10 obstacle-free grid, no measurement noise."""
    cfg = EnvironmentConfig(grid_l=10, grid_w=10, n_buildings=0, shadow_noise_db=0.0)
    return build_environment(cfg, seed=0)


@pytest.fixture(scope="session")
def block_env():
    """10x10 grid with one building covering exactly voxels (1..2, 1..2)."""
    block = Obstacle("building", 10.0, 10.0, 30.0, 30.0, 0.5, height_m=30.0)
    cfg = EnvironmentConfig(
        grid_l=10, grid_w=10, explicit_obstacles=(block,), shadow_noise_db=0.0
    )
    return build_environment(cfg, seed=0)


@pytest.fixture(scope="session")
def default_env():
    """The default 50x50, 15-building environment (2 dB measurement noise)."""
    return build_environment(EnvironmentConfig(), seed=0)


def stepping_shadow_oracle(env, tx, rx, step=0.01):
    """Numerical line-integral: sample the segment at ``step`` resolution and
    accumulate density at midpoints. Independent of the clipping code."""
    tx = np.asarray(tx, dtype=float)
    rx = np.asarray(rx, dtype=float)
    length = float(np.hypot(*(rx - tx)))
    n = max(1, int(np.ceil(length / step)))
    t = (np.arange(n) + 0.5) / n
    xs = tx[0] + t * (rx[0] - tx[0])
    ys = tx[1] + t * (rx[1] - tx[1])
    total = 0.0
    for ob in env.obstacles:
        inside = (xs >= ob.x0) & (xs <= ob.x1) & (ys >= ob.y0) & (ys <= ob.y1)
        total += ob.loss_density_db_per_m * (length / n) * float(inside.sum())
    return total
