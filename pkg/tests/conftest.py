import numpy as np
import pytest

from blendfield import BankConfig, new_bank


@pytest.fixture
def small_config():
    """Bank small enough for exhaustive checks, with dense and hashed levels."""
    return BankConfig(
        levels=4, table_size=2**12, feat_dim=3, coarsest_res=4, finest_res=32,
        num_bases=3, bounding_box=((-1.0, -0.5, 0.0), (1.0, 1.5, 2.0)),
    )


@pytest.fixture
def small_bank(small_config):
    return new_bank(small_config, seed=7)


def random_points_in_box(box, n, rng):
    box = np.asarray(box, dtype=np.float64).reshape(2, 3)
    return box[0] + rng.random((n, 3)) * (box[1] - box[0])
