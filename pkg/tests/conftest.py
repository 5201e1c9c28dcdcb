import pytest

from cavsec import Drbg, generate_params, toy_params


@pytest.fixture(scope="session")
def toy():
    return toy_params()


@pytest.fixture(scope="session")
def test_params():
    # deterministic from the fixed seed; generated once per session
    return generate_params("test", seed=2024)


@pytest.fixture()
def rng():
    return Drbg(7, b"unit-tests")
