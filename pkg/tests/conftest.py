import asyncio
import re

import pytest

from parley.bots.sdk import BotClient

from .harness import ServerHarness

_acceptance_reports = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        match = re.search(r"test_criterion_(\d+)_(\w+)", report.nodeid)
        if match:
            number = int(match.group(1))
            label = match.group(2).replace("_", " ")
            _acceptance_reports.append((number, label, report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_reports:
        return
    terminalreporter.section("acceptance criteria")
    for number, label, outcome in sorted(_acceptance_reports):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number} ({label}): {status}")


@pytest.fixture(scope="session")
def anyio_backend():
    return "asyncio"


@pytest.fixture(scope="module")
def server():
    harness = ServerHarness().start()
    yield harness
    harness.stop()


@pytest.fixture
def own_server(tmp_path):
    """Function-scoped server for tests that restart or mutate global state."""
    harness = ServerHarness(data_dir=tmp_path / "data").start()
    yield harness
    harness.stop()


@pytest.fixture
async def connect():
    """Factory for connected BotClients; disconnects them all afterwards."""
    made: list[BotClient] = []

    async def _connect(harness, token: str, name: str = "client", **kwargs) -> BotClient:
        client = BotClient(harness.base_url, token, name=name, **kwargs)
        await client.connect()
        made.append(client)
        return client

    yield _connect
    for client in made:
        try:
            await asyncio.wait_for(client.disconnect(), timeout=5)
        except asyncio.TimeoutError:
            pass


