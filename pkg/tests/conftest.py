import types

import numpy as np
import pytest

from srmkit.geometry import Camera, TriangleMesh
from srmkit.synth import icosphere

# filled by test_acceptance, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def as_frames(images, cameras):
    return [types.SimpleNamespace(image=im, camera=c, frame_id=str(k))
            for k, (im, c) in enumerate(zip(images, cameras))]


@pytest.fixture(scope="session")
def unit_sphere() -> TriangleMesh:
    v, f = icosphere(3)
    return TriangleMesh(v, f)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def front_camera() -> Camera:
    return Camera.look_at((0.0, -4.0, 0.0), (0.0, 0.0, 0.0), width=64, height=48, fov_y_deg=40.0)
