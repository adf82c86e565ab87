import math

import numpy as np
import pytest

from spde_ldp import EndpointEvent, HalfNormal, ModelParams, PointMass, SourceSpec, Uniform

ACCEPTANCE_LINES: list[str] = []


def reference_params() -> ModelParams:
    return ModelParams(1.0, 0.0, 1.0, math.pi, [SourceSpec(math.pi / 2, 1.0, PointMass(1.0))])


def mixed_params() -> ModelParams:
    """Drifting medium, two sources with continuous mark laws."""
    return ModelParams(0.8, 0.6, 0.5, math.pi, [SourceSpec(1.0, 1.5, Uniform(2.0)),
                                                SourceSpec(2.4, 0.7, HalfNormal(0.8))])


def reference_event() -> EndpointEvent:
    return EndpointEvent(np.array([1.0]), 1.0 / math.sqrt(math.pi) + 0.3, ">=", 1.0)


@pytest.fixture
def ref_params():
    return reference_params()


@pytest.fixture
def mix_params():
    return mixed_params()


@pytest.fixture
def ref_event():
    return reference_event()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
