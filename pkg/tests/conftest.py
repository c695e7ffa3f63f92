import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ladderembed.dataio import SyntheticSpec, generate_synthetic  # noqa: E402


@pytest.fixture
def tiny_dataset():
    return generate_synthetic(SyntheticSpec(n_subjects=2, n_classes=2, trials_per_cell_train=3,
                                            trials_per_cell_test=1, time_steps=8, channels=3, seed=7))


@pytest.fixture
def rs():
    return np.random.default_rng(12345)
