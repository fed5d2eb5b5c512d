import json
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from wiretap_dp.latent_model import GeneratorModel

settings.register_profile(
    "default", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

DATA = Path(__file__).parent / "data"

# Filled by tests/test_acceptance.py, printed once at the end of the run.
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def model() -> GeneratorModel:
    return GeneratorModel.create(d=96, m=8, k=16, shared_count=2, seed=42)


@pytest.fixture(scope="session")
def golden_first_code() -> dict:
    return json.loads((DATA / "golden_first_code.json").read_text())


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[num])
