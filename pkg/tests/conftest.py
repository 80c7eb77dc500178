import os

import numpy as np
import pytest

FIXTURE_DIR = os.path.join(os.path.dirname(__file__), "fixtures")


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


@pytest.fixture
def fixture_path():
    def _path(name):
        return os.path.join(FIXTURE_DIR, name)
    return _path
