import pytest

from measured.units import default_registry, parse_registry

TOY_REGISTRY_TEXT = """
dim length L1 M0 T0 I0 Θ0 N0 J0
dim time L0 M0 T1 I0 Θ0 N0 J0
dim velocity L1 M0 T-1 I0 Θ0 N0 J0
unit m length scale=1 offset=0 aliases=meter,meters
unit ft length scale=0.3048 offset=0 aliases=foot,feet
unit km length scale=1000 offset=0 aliases=kilometer,kilometers
unit s time scale=1 offset=0 aliases=second,seconds
unit h time scale=3600 offset=0 aliases=hour,hours
unit m/s velocity scale=1 offset=0 aliases=meters per second
unit mph velocity scale=0.44704 offset=0 aliases=miles per hour
"""

ONE_DIM_REGISTRY_TEXT = """
dim mass L0 M1 T0 I0 Θ0 N0 J0
unit kg mass scale=1 offset=0 aliases=kilogram
unit g mass scale=0.001 offset=0 aliases=gram
"""


@pytest.fixture(scope="session")
def registry():
    return default_registry()


@pytest.fixture(scope="session")
def toy_registry():
    return parse_registry(TOY_REGISTRY_TEXT)


@pytest.fixture(scope="session")
def one_dim_registry():
    return parse_registry(ONE_DIM_REGISTRY_TEXT)
