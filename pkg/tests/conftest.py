import numpy as np
import pytest

from freemp.freeconv import FreeConvolution
from freemp.measures import SpectralMeasure, UniformLaw


@pytest.fixture(scope="session")
def dirac_one() -> SpectralMeasure:
    return SpectralMeasure.discrete([(1.0, 1.0)])


@pytest.fixture(scope="session")
def uniform_half() -> UniformLaw:
    return UniformLaw(0.5, 1.0)


@pytest.fixture(scope="session")
def mp_quarter(dirac_one) -> FreeConvolution:
    """Marchenko-Pastur with ratio 0.25 (atom 0.75 at zero)."""
    return FreeConvolution(dirac_one, 0.25)


@pytest.fixture(scope="session")
def mp_four(dirac_one) -> FreeConvolution:
    """Marchenko-Pastur with ratio 4 (no atom at zero)."""
    return FreeConvolution(dirac_one, 4.0)


@pytest.fixture(scope="session")
def fc_uniform(uniform_half) -> FreeConvolution:
    """Uniform[0.5, 1] population at ratio 0.5: the workhorse configuration."""
    return FreeConvolution(uniform_half.as_measure(), 0.5)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
