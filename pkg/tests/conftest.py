import pathlib

import pytest

from gridscreen import load_grid

REPO = pathlib.Path(__file__).resolve().parents[1]


@pytest.fixture(scope="session")
def ieee118_path():
    return REPO / "data" / "ieee118.m"


@pytest.fixture(scope="session")
def ieee118(ieee118_path):
    return load_grid(ieee118_path)
