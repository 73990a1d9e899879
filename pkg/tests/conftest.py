import os

import pytest
from hypothesis import HealthCheck, settings

from logres.crypto import generate_keys

settings.register_profile(
    "default", deadline=None, max_examples=100, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("ci", deadline=None, max_examples=300)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

SEED = bytes(32)


@pytest.fixture
def keys5():
    """Ed25519 keys and registry for n=5, f=2."""
    return generate_keys(SEED, 5, 2)


@pytest.fixture
def hkeys5():
    return generate_keys(SEED, 5, 2, scheme="hmac")


@pytest.fixture
def hkeys3():
    return generate_keys(SEED, 3, 1, scheme="hmac")


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
