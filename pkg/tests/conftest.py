import numpy as np
import pytest

from nvsd.model import ModelSpec, init_weights


def tiny_spec(**over):
    """Small model for fast structural tests; normalization off so inputs
    near unit scale exercise both LeakyReLU branches."""
    base = dict(input_bins=6, nodes=8, kernel=5, groups=2, num_blocks=2,
                classes=4, feat_offset=0.0, feat_scale=1.0)
    base.update(over)
    return ModelSpec(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_weights():
    return init_weights(tiny_spec(), seed=1)
