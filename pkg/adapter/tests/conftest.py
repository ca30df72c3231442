import json
from pathlib import Path

import pytest

from conceptbank_adapter.providers import ConformanceProvider
from conceptbank_adapter.server import TcpServer

FIXTURE = Path(__file__).resolve().parents[1] / "fixtures" / "conformance.json"


@pytest.fixture(scope="session")
def provider():
    return ConformanceProvider(FIXTURE)


@pytest.fixture()
def tcp_server(provider):
    with TcpServer(provider.model).start() as server:
        yield server
