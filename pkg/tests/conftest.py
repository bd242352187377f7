import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from layerassign.data import generate_synthetic_task  # noqa: E402
from layerassign.nn.network import SearchSpaceSpec  # noqa: E402


def tiny_spec(**kw):
    base = dict(n=3, channel_plan=(2, 4, 8), input_shape=(3, 8, 8), num_classes=4,
                classifier_plan=(8, 4), target_depth=6)
    base.update(kw)
    return SearchSpaceSpec(**base)


@pytest.fixture
def spec():
    return tiny_spec()


@pytest.fixture(scope="session")
def tiny_data():
    return generate_synthetic_task(0, num_classes=4, samples_per_class=20, shape=(3, 8, 8), noise=0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
