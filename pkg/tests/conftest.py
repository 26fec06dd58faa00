import pytest

from fcsim import default_config_path, load_config


@pytest.fixture(scope="session")
def primary():
    return load_config(default_config_path("primary_cavity"))


@pytest.fixture(scope="session")
def alternate():
    return load_config(default_config_path("alternate_cavity"))
