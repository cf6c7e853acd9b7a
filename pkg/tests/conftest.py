import pytest

from mudmarket.contract import DeviceSpec, Marketplace
from mudmarket.ledger import ETHER, genesis
from mudmarket.offstore import BlobStore

ECHO = DeviceSpec(
    "Amazon", "Echo", "Echo Dot", "2018-04-27",
    "cpe:2.3:o:amazon:echo_firmware:2018-04-27:*:*:*:*:*:*:*",
)


@pytest.fixture
def chain():
    c = genesis(10, 100 * ETHER)
    c.advance_time(1000)
    return c


@pytest.fixture
def market(chain):
    return Marketplace(chain)


@pytest.fixture
def store(tmp_path):
    return BlobStore(tmp_path / "blobs")


@pytest.fixture
def users(chain):
    return {f"U{i}": chain.user(i) for i in range(1, 11)}


# outcome lines recorded by the acceptance suite, printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
