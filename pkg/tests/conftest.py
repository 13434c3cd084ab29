import os
import sys

import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from grid_ops import gaussian_pulse, make_grid  # noqa: E402
from observe import ObservationPlan, Sampler  # noqa: E402
from projectors import StateVector, StringParams, SystemKind  # noqa: E402

STRING_SCENARIO = """
name = "{name}"
system = "string"

[grid]
length = 48.0
points = 1024

[params]
c = 1.0

[[pulses]]
mode = "right"
center = -5.0
width = {width}
amplitude = 1.0
{extra_pulses}
[observation]
x_obs = 0.0
dx = 0.05
dt = 0.05
t_start = 0.0
t_end = 19.95
noise_sigma = {sigma}
seed = 7
sampler = "{sampler}"

[diagnostics]
kappa = 3.0
delta_arrival = 0.05

[output]
frames = 11
emit_plots = {emit_plots}
"""

LEFT_PULSE = """
[[pulses]]
mode = "left"
center = 5.0
width = 1.0
amplitude = 0.3
"""

HYPERBOLIC_SCENARIO = """
name = "bump"
system = "hyperbolic"

[grid]
length = 40.0
points = 512

[params]
epsilon = 0.1

[params.b_profile]
kind = "gaussian_bump"
baseline = 1.0
amplitude = 1.0
center = 0.0
width = 4.0

[params.c_profile]
kind = "constant"

[[pulses]]
mode = "right"
center = -8.0
width = 1.0

[observation]
x_obs = 0.0
dt = 0.1
t_end = 10.0
noise_sigma = 0.0

[output]
frames = 3
"""


def string_scenario(name="standard", width=1.0, sigma=0.0, sampler="stencil", emit_plots=False,
                    with_left=False) -> str:
    return STRING_SCENARIO.format(
        name=name,
        width=width,
        sigma=sigma,
        sampler=sampler,
        emit_plots="true" if emit_plots else "false",
        extra_pulses=LEFT_PULSE if with_left else "",
    )


@pytest.fixture
def write_scenario(tmp_path):
    """Write TOML text to a file under tmp_path and return its path"""
    def write(text: str, filename: str = "scenario.toml") -> str:
        path = tmp_path / filename
        path.write_text(text, encoding="utf-8")
        return str(path)
    return write


@pytest.fixture
def string_grid():
    return make_grid(48.0, 1024)


@pytest.fixture
def right_string_state(string_grid):
    g = gaussian_pulse(string_grid, -5.0, 1.0, 1.0)
    return StateVector(SystemKind.STRING, (g, g), StringParams(1.0))


@pytest.fixture
def mixed_string_state(string_grid, right_string_state):
    g = gaussian_pulse(string_grid, 5.0, 1.0, 0.3)
    left = StateVector(SystemKind.STRING, (g, -g), StringParams(1.0))
    return right_string_state + left


@pytest.fixture
def stencil_plan():
    return ObservationPlan.spanning(x_obs=0.0, t_start=0.0, t_end=19.95, dt=0.05, dx=0.05,
                                    sigma=0.0, seed=7, sampler=Sampler.STENCIL)
