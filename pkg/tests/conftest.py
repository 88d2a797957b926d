import pytest
from hypothesis import HealthCheck, settings

from aptshield import intrusion_graph as ig
from aptshield import scenario

settings.register_profile(
    "repro", derandomize=True, deadline=None, max_examples=100,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repro")


@pytest.fixture(scope="session")
def calibrated():
    return scenario.generate(scenario.ScenarioConfig(seed=7, calibrated=True))


@pytest.fixture(scope="session")
def calibrated_graph(calibrated):
    return ig.build_attribute_graph(calibrated.alerts, calibrated.topology)
