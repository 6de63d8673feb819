import pytest
from hypothesis import HealthCheck, settings

from semshape.measurements import axis_difference_spec, synthetic_spec
from semshape.regressor import FitConfig, fit_regressor
from semshape.shape_model import generate_synthetic_model

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.function_scoped_fixture, HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def body_model():
    return generate_synthetic_model(1, 600, 30, "body-like")


@pytest.fixture(scope="session")
def body_spec():
    return synthetic_spec(600)


@pytest.fixture(scope="session")
def body_regressor(body_model, body_spec):
    return fit_regressor(body_model, body_spec, FitConfig(num_samples=20_000, seed=0))


@pytest.fixture(scope="session")
def small_model():
    return generate_synthetic_model(3, 50, 8, "random-smooth")


@pytest.fixture(scope="session")
def linear_setup():
    """Exact-linear oracle: AxisDifference-only spec with K = |beta|."""
    model = generate_synthetic_model(5, 80, 6, "random-smooth")
    spec = axis_difference_spec(model, 6, seed=5)
    reg = fit_regressor(model, spec, FitConfig(num_samples=10_000, seed=2))
    return model, spec, reg


# one PASS/FAIL/SKIP line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
