import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fcos.dataset import generate_dataset


@pytest.fixture(scope="session")
def tiny_dataset():
    """90 samples: 3 classes x 3 SNRs x 10 per cell, length 64."""
    return generate_dataset(
        classes=("bpsk", "qpsk", "gfsk"),
        snr_grid_db=(6.0, 12.0, 18.0),
        per_cell=10,
        length=64,
        seed=7,
    )


@pytest.fixture(scope="session")
def small_dataset():
    """720 samples: 4 classes x 3 SNRs x 60 per cell, length 64 (trainable)."""
    return generate_dataset(
        classes=("bpsk", "qpsk", "16qam", "gfsk"),
        snr_grid_db=(8.0, 13.0, 18.0),
        per_cell=60,
        length=64,
        seed=11,
    )
