import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from splidar import Irf, SpectralLibrary, make_gaussian_irf


@pytest.fixture
def rng():
    return np.random.default_rng(20260809)


@pytest.fixture
def small_irf():
    """Single-channel Gaussian response on a 32-bin grid."""
    return make_gaussian_irf(32, centers=[6.0], sigmas=[2.0])


@pytest.fixture
def small_library():
    return SpectralLibrary(alpha_r=[[2.0]], beta_r=[[0.5]],
                           alpha_b=[1.0], beta_b=[8.0])
