import pytest
from hypothesis import HealthCheck, settings

from vbspin.fixtures import generate

settings.register_profile("repro", deadline=None, derandomize=True, print_blob=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repro")


@pytest.fixture(scope="session")
def fixture_csv(tmp_path_factory):
    """Lazily generated synthetic datasets: fixture_csv(name) -> CSV path."""
    root = tmp_path_factory.mktemp("fixtures")
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = generate(root, [name])[name]
        return cache[name]

    return get
