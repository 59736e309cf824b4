import sys
from pathlib import Path

import numpy as np
import pytest

# Make the oracle helpers importable as a plain module from every test file.
sys.path.insert(0, str(Path(__file__).parent))

from hpnarm import ArmParams, BinningSpec


@pytest.fixture(scope="session")
def params():
    return ArmParams()


@pytest.fixture(scope="session")
def binning():
    return BinningSpec()


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
