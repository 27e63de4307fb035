import time

import pytest
from hypothesis import HealthCheck, settings

from swabservo.kinematics import reference_chain
from swabservo.lut import build_table

settings.register_profile(
    "swab", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("swab")


@pytest.fixture(scope="session")
def chain():
    return reference_chain()


@pytest.fixture(scope="session")
def default_table_timed(chain):
    """The default-resolution table and its build time, built once per session (about a minute)."""
    t0 = time.perf_counter()
    table = build_table(chain)
    return table, time.perf_counter() - t0


@pytest.fixture(scope="session")
def default_table(default_table_timed):
    return default_table_timed[0]


@pytest.fixture(scope="session")
def default_table_file(default_table, tmp_path_factory):
    from swabservo.lut import save_table

    path = tmp_path_factory.mktemp("lut") / "default.lut"
    save_table(default_table, path)
    return path
