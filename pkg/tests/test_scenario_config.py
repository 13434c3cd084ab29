import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np
import pytest

from conftest import HYPERBOLIC_SCENARIO, string_scenario
from observe import Sampler
from projectors import Mode, SystemKind
from scenario_config import GUARD_WIDTHS, load_config, parse_config
from utils import ConfigError


def parsed(text: str):
    return parse_config(tomllib.loads(text))


def test_string_scenario_parses_with_defaults():
    config = parsed(string_scenario())
    assert config.name == "standard"
    assert config.system is SystemKind.STRING
    assert config.grid.points == 1024
    assert config.plan.sampler is Sampler.STENCIL
    assert config.plan.count == 400
    assert config.settings.threshold_frac == 0.05
    assert config.settings.delta_arrival == 0.05
    assert config.output.frames == 11
    assert config.output.directory is None
    assert config.pulse_modes() == [Mode.RIGHT]


def test_hyperbolic_scenario_defaults_to_direct_sampler():
    config = parsed(HYPERBOLIC_SCENARIO)
    assert config.plan.sampler is Sampler.DIRECT
    assert config.params.epsilon == 0.1
    np.testing.assert_allclose(config.simulation_times(), [0.0, 5.0, 10.0])


def test_initial_string_state_is_right_pulse():
    state = parsed(string_scenario()).build_initial_state()
    v, w = state.components
    np.testing.assert_array_equal(v.values, w.values)
    assert np.max(v.values) == pytest.approx(1.0, abs=1e-3)


def test_left_pulse_adds_opposite_sign_component():
    state = parsed(string_scenario(with_left=True)).build_initial_state()
    v, w = state.components
    assert np.max(v.values - w.values) == pytest.approx(0.6, abs=1e-3)


def test_narrow_pulse_is_rejected():
    with pytest.raises(ConfigError, match=r"pulses\[0\]\.width: .*below 4 grid spacings"):
        parsed(string_scenario(width=0.1))


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigError, match="config: unknown key"):
        parse_config({**tomllib.loads(string_scenario()), "colour": "blue"})
    data = tomllib.loads(string_scenario())
    data["observation"]["speed"] = 2.0
    with pytest.raises(ConfigError, match="observation: unknown key"):
        parse_config(data)


def test_guard_band_is_enforced():
    text = string_scenario().replace("t_end = 19.95", "t_end = 30.0")
    with pytest.raises(ConfigError, match=rf"needs {GUARD_WIDTHS:g} widths"):
        parsed(text)


def test_entropy_pulse_needs_acoustic_system():
    text = string_scenario().replace('mode = "right"', 'mode = "entropy"')
    with pytest.raises(ConfigError, match=r"pulses\[0\]\.mode"):
        parsed(text)


def test_stencil_sampler_needs_string_system():
    text = HYPERBOLIC_SCENARIO.replace("noise_sigma = 0.0", 'noise_sigma = 0.0\nsampler = "stencil"\ndx = 0.1')
    with pytest.raises(ConfigError, match="observation.sampler"):
        parsed(text)


def test_stencil_dx_must_be_resolved():
    text = string_scenario().replace("dx = 0.05", "dx = 0.01")
    with pytest.raises(ConfigError, match="observation.dx"):
        parsed(text)


def test_bad_field_types_name_the_path():
    data = tomllib.loads(string_scenario())
    data["grid"]["points"] = "many"
    with pytest.raises(ConfigError, match="grid.points"):
        parse_config(data)
    data = tomllib.loads(string_scenario())
    data["system"] = "membrane"
    with pytest.raises(ConfigError, match="system"):
        parse_config(data)


def test_with_value_rebuilds_the_scenario():
    config = parsed(string_scenario())
    finer = config.with_value("points", 2048)
    assert finer.grid.points == 2048
    assert config.grid.points == 1024
    noisier = config.with_value("noise_sigma", 0.02)
    assert noisier.plan.sigma == 0.02
    with pytest.raises(ConfigError, match="epsilon applies to hyperbolic"):
        config.with_value("epsilon", 0.1)
    with pytest.raises(ConfigError, match="unknown sweep axis"):
        config.with_value("colour", 1.0)
    with pytest.raises(ConfigError, match="integers"):
        config.with_value("points", 1000.5)


def test_hyperbolic_epsilon_sweep_value():
    config = parsed(HYPERBOLIC_SCENARIO).with_value("epsilon", 0.05)
    assert config.params.epsilon == 0.05


ACOUSTIC_SCENARIO = """
system = "acoustic"

[grid]
length = 40.0
points = 512

[params]
beta = 0.0

[params.physical_inputs]
mu = 1.8e-5
kappa = 0.026
c_p = 1005.0
c_v = 718.0
rho0 = 1.2
c0 = 340.0
lambda_scale = 1.0

[[pulses]]
mode = "entropy"
center = 0.0
width = 1.0

[observation]
dt = 0.1
t_end = 5.0
"""


def test_physical_inputs_derive_acoustic_numbers():
    config = parsed(ACOUSTIC_SCENARIO)
    assert config.name == "acoustic"
    assert config.params.gamma == pytest.approx(1005.0 / 718.0)
    assert config.params.delta1 == pytest.approx(4 * 1.8e-5 / (3 * 1.2 * 340.0))
    swept = config.with_value("delta1", 1e-3)
    assert swept.params.delta1 == 1e-3
    assert swept.params.physical_inputs is None
    assert swept.params.gamma == pytest.approx(config.params.gamma)


def test_physical_inputs_require_every_field():
    data = tomllib.loads(ACOUSTIC_SCENARIO)
    del data["params"]["physical_inputs"]["mu"]
    with pytest.raises(ConfigError, match="params.physical_inputs.mu: missing"):
        parse_config(data)


def test_load_config_reads_files(write_scenario):
    config = load_config(write_scenario(string_scenario(name="from-file")))
    assert config.name == "from-file"
    assert config.to_dict()["grid"]["length"] == 48.0


def test_load_config_missing_or_malformed(tmp_path, write_scenario):
    with pytest.raises(ConfigError, match="not found"):
        load_config(str(tmp_path / "absent.toml"))
    with pytest.raises(ConfigError):
        load_config(write_scenario("system = [", "broken.toml"))


SCENARIO_DIR = os.path.join(os.path.dirname(__file__), "..", "scenarios")


@pytest.mark.parametrize("filename", sorted(os.listdir(SCENARIO_DIR)))
def test_shipped_scenarios_are_valid(filename):
    config = load_config(os.path.join(SCENARIO_DIR, filename))
    assert config.name == filename[:-len(".toml")]
    config.build_initial_state()
