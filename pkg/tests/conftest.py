import os
import sys

import numpy as np
import pytest

# The application modules import each other flat (`import config`), so src/ goes on the path.
SRC_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "src")
if SRC_DIR not in sys.path:
    sys.path.insert(0, SRC_DIR)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def micro_dims():
    import config
    return config.get_config().micro_model
