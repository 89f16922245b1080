import pytest

from finslerlab.registry import catalog


@pytest.fixture(scope="session")
def entries():
    return {e.id: e for e in catalog()}


@pytest.fixture(scope="session")
def progs(entries):
    # compiled once per session so jet caches are shared across tests
    return {mid: e.program() for mid, e in entries.items()}
