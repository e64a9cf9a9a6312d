import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("hypcog", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("hypcog")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
