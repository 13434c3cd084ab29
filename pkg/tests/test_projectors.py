import numpy as np
import pytest

from grid_ops import CoefficientProfile, ProfileKind, gaussian_pulse, make_grid
from projectors import (
    AcousticParams,
    HyperbolicParams,
    Mode,
    PhysicalInputs,
    StateVector,
    StringParams,
    SystemKind,
    acoustic_projector_parts,
    beta_scan,
    commutator_norm,
    exact_project,
    hyperbolic_idempotency_residual,
    mode_compose,
    mode_decompose,
    sample_pulses,
    project,
    projector_residuals,
)
from utils import PreconditionError


@pytest.fixture
def grid():
    return make_grid(40.0, 512)


def bump_params(epsilon, c_baseline=None):
    bump = CoefficientProfile(ProfileKind.GAUSSIAN_BUMP, baseline=1.0, amplitude=1.0, center=0.0, width=4.0)
    if c_baseline is None:
        c_profile = CoefficientProfile()
    else:
        c_profile = CoefficientProfile(ProfileKind.GAUSSIAN_BUMP, baseline=c_baseline, amplitude=1.0,
                                       center=0.0, width=4.0)
    return HyperbolicParams(b_profile=bump, c_profile=c_profile, epsilon=epsilon)


def random_string_states(grid, count=20, seed=3):
    rng = np.random.default_rng(seed)
    return [StateVector.from_array(SystemKind.STRING, grid, rng.normal(size=(2, grid.points)), StringParams(2.0))
            for _ in range(count)]


def test_string_projector_algebra(grid):
    for state in random_string_states(grid):
        right = project(state, Mode.RIGHT)
        left = project(state, Mode.LEFT)
        np.testing.assert_allclose(project(right, Mode.RIGHT).as_array(), right.as_array(), atol=1e-12)
        np.testing.assert_allclose(project(left, Mode.LEFT).as_array(), left.as_array(), atol=1e-12)
        np.testing.assert_allclose((right + left).as_array(), state.as_array(), atol=1e-12)
        assert np.max(np.abs(project(left, Mode.RIGHT).as_array())) <= 1e-12


def test_string_projector_rejects_entropy(grid):
    state = random_string_states(grid, count=1)[0]
    with pytest.raises(PreconditionError):
        project(state, Mode.ENTROPY)


def test_state_vector_checks_components(grid):
    g = gaussian_pulse(grid, 0.0, 1.0, 1.0)
    with pytest.raises(PreconditionError):
        StateVector(SystemKind.STRING, (g,), StringParams())
    with pytest.raises(PreconditionError):
        StateVector(SystemKind.STRING, (g, g), AcousticParams())


@pytest.mark.parametrize("epsilon", [0.05, 0.2])
def test_hyperbolic_projectors_idempotent_and_complete(grid, epsilon):
    params = bump_params(epsilon)
    assert hyperbolic_idempotency_residual(params, grid) <= 1e-9
    u = gaussian_pulse(grid, -3.0, 1.0, 1.0)
    v = gaussian_pulse(grid, 2.0, 1.5, -0.4)
    state = StateVector(SystemKind.HYPERBOLIC, (u, v), params)
    total = project(state, Mode.RIGHT) + project(state, Mode.LEFT)
    np.testing.assert_allclose(total.as_array(), state.as_array(), atol=1e-12)


def test_hyperbolic_decomposition_round_trip(grid):
    params = bump_params(0.2)
    u = gaussian_pulse(grid, -3.0, 1.0, 1.0)
    v = gaussian_pulse(grid, 4.0, 1.0, 0.5)
    state = StateVector(SystemKind.HYPERBOLIC, (u, v), params)
    np.testing.assert_allclose(mode_compose(mode_decompose(state)).as_array(), state.as_array(), atol=1e-9)


def test_commutator_vanishes_for_proportional_coefficients(grid):
    # c = 2 b everywhere, so c'b - b'c = 0 and f is constant
    assert commutator_norm(bump_params(0.1, c_baseline=2.0), grid) <= 1e-10


def test_commutator_scales_linearly_with_epsilon(grid):
    ladder = [0.2, 0.1, 0.05, 0.025]
    norms = [commutator_norm(bump_params(epsilon), grid) for epsilon in ladder]
    ratios = np.array(norms[:-1]) / np.array(norms[1:])
    assert np.all(np.abs(ratios - 2.0) <= 0.3), ratios


def test_sample_pulses_fit_the_domain(grid):
    pulses = sample_pulses(grid)
    assert len(pulses) == 10
    for center, width in pulses:
        gaussian_pulse(grid, center, width, 1.0)
    with pytest.raises(PreconditionError):
        sample_pulses(make_grid(40.0, 8))


def test_acoustic_completeness_exact():
    params = AcousticParams(gamma=1.4, delta1=1e-3, delta2=2e-3, beta=3e-3)
    constants = [acoustic_projector_parts(params, mode)[0] for mode in Mode]
    linears = [acoustic_projector_parts(params, mode)[1] for mode in Mode]
    np.testing.assert_allclose(sum(constants), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(sum(linears), np.zeros((3, 3)), atol=1e-15)
    k = make_grid(40.0, 512).wavenumbers[1:9]
    assert projector_residuals(params, k)["completeness"] <= 1e-12


def test_acoustic_lossless_projectors_exact():
    k = make_grid(40.0, 512).wavenumbers[1:9]
    residuals = projector_residuals(AcousticParams(gamma=1.4), k)
    assert residuals["idempotency"] <= 1e-12
    assert residuals["annihilation"] <= 1e-12
    assert residuals["eigen"] <= 1e-12


def test_acoustic_eigen_residual_is_second_order_at_consistent_beta():
    k = make_grid(40.0, 512).wavenumbers[1:9]
    residuals = []
    for delta in (4e-3, 2e-3, 1e-3):
        params = AcousticParams(gamma=1.4, delta1=delta, delta2=delta, beta=2 * delta)
        residuals.append(projector_residuals(params, k)["eigen"])
    ratios = np.array(residuals[:-1]) / np.array(residuals[1:])
    assert np.all(np.abs(ratios - 4.0) <= 0.6), ratios


def test_beta_scan_finds_consistent_beta():
    k = make_grid(40.0, 512).wavenumbers[1:9]
    params = AcousticParams(gamma=1.4, delta1=1e-3, delta2=1e-3)
    betas = np.linspace(0.0, 4e-3, 41)
    rows = beta_scan(params, betas, k)
    best = min(rows, key=lambda row: row["eigen"])
    assert best["beta"] == pytest.approx(2e-3, abs=1.5e-4)
    assert [row["beta"] for row in rows] == pytest.approx(list(betas))


def test_exact_projections_sum_to_state(grid):
    params = AcousticParams(gamma=1.4, delta1=2e-3, delta2=1e-3, beta=3e-3)
    g = gaussian_pulse(grid, 0.0, 1.0, 1.0)
    h = gaussian_pulse(grid, 3.0, 1.0, 0.5)
    state = StateVector(SystemKind.ACOUSTIC, (g, h, g - h), params)
    parts = [exact_project(state, mode) for mode in Mode]
    total = parts[0] + parts[1] + parts[2]
    np.testing.assert_allclose(total.as_array(), state.as_array(), atol=1e-10)
    right = parts[0]
    np.testing.assert_allclose(exact_project(right, Mode.RIGHT).as_array(), right.as_array(), atol=1e-10)


def test_physical_inputs_derive_dissipation_numbers():
    inputs = PhysicalInputs(mu=1.8e-5, kappa=0.026, c_p=1005.0, c_v=718.0, rho0=1.2, c0=340.0, lambda_scale=1.0)
    params = AcousticParams.from_physical(inputs, beta=0.0)
    assert params.gamma == pytest.approx(1005.0 / 718.0)
    assert params.delta1 == pytest.approx(4 * 1.8e-5 / (3 * 1.2 * 340.0))
    assert params.delta2 == pytest.approx(0.026 / (1.2 * 340.0) * (1 / 718.0 - 1 / 1005.0))
    with pytest.raises(PreconditionError, match="disagrees"):
        AcousticParams(gamma=1.4, delta1=1.0, physical_inputs=inputs)


def test_acoustic_decomposition_round_trip(grid):
    params = AcousticParams(gamma=1.4, delta1=1e-3, delta2=1e-3, beta=2e-3)
    g = gaussian_pulse(grid, 0.0, 1.0, 1.0)
    state = StateVector(SystemKind.ACOUSTIC, (g, 0.5 * g, -g), params)
    np.testing.assert_allclose(mode_compose(mode_decompose(state)).as_array(), state.as_array(), atol=1e-12)
