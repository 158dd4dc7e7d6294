import os

import numpy as np
import pytest

import core.solver
from conftest import estimator_config, quiet_scenario
from core.dataset import SensorDataset
from core.exceptions import InvalidArgumentError, NumericalFailureError, SequencingError
from core.filters import GaussianBelief
from core.measurement import leg_odometry_velocity
from core.simulator import generate
from core.solver import DualEstimator, init, initial_state, run, step
from core.state import local

EXACT_PARAMS = dict(param_std=1e-4, noise=dict(param_walk_std=1e-6))


def _estimator(variant, truth, geometry, **overrides):
    cfg = estimator_config(variant, **overrides)
    return DualEstimator(cfg, geometry, truth.states.take(0), truth.params[0], 1e-6 * np.eye(27))


def test_empty_dataset_gives_empty_output(standing, geometry):
    _, truth = standing
    result = _estimator('DualBetaKF', truth, geometry).run(SensorDataset.empty())
    assert result.outputs == [] and result.failures == []


def test_initial_covariance_must_be_positive_definite(standing, geometry):
    _, truth = standing
    cfg = estimator_config('QEKF')
    P0 = np.eye(27)
    P0[3, 3] = 0.0
    with pytest.raises(InvalidArgumentError):
        init(truth.states.take(0), truth.params[0], P0, cfg, geometry)


def test_out_of_order_frames_are_refused(standing, geometry):
    dataset, truth = standing
    ctx = _estimator('QEKF', truth, geometry)
    step(ctx, dataset[5])
    step(ctx, dataset[6])
    with pytest.raises(SequencingError):
        step(ctx, dataset[6])


def test_one_output_per_frame_with_timestamps(standing, geometry):
    dataset, truth = standing
    ctx = _estimator('UKF-OR', truth, geometry)
    result = run(ctx, dataset.replace(**{k: v[:50] for k, v in dataset.arrays().items()}))
    assert len(result.outputs) == 50
    np.testing.assert_array_equal(result.times(), dataset.t[:50])
    assert result.outputs[0].state.allclose(truth.states.take(0), atol=0.0)
    np.testing.assert_array_equal(result.params(), np.tile(truth.params[0], (50, 1)))


@pytest.mark.parametrize('variant', ['QEKF', 'UKF-OR', 'DualQEKF', 'BetaKF', 'DualBetaKF'])
def test_noiseless_stream_is_a_fixed_point(variant, standing, geometry):
    dataset, truth = standing
    result = _estimator(variant, truth, geometry, **EXACT_PARAMS).run(dataset)
    assert len(result.outputs) == len(dataset) == 1000
    states = result.states()
    for k in range(0, 1000, 9):
        err = local(truth.states.take(k), states.take(k))[:9]
        assert np.linalg.norm(err) < 1e-5
    assert np.abs(result.params() - truth.params).max() < 1e-5
    assert result.failures == []


def test_dual_filter_without_parameter_noise_reduces_to_plain(trotting, geometry):
    dataset, truth = trotting
    frames = dataset.replace(**{k: v[:400] for k, v in dataset.arrays().items()})
    exact = dict(param_std=1e-9, noise=dict(param_walk_std=0.0))
    plain = _estimator('QEKF', truth, geometry, **exact).run(frames)
    dual = _estimator('DualQEKF', truth, geometry, **exact).run(frames)
    np.testing.assert_allclose(dual.states().p, plain.states().p, atol=1e-9)
    np.testing.assert_allclose(dual.states().q, plain.states().q, atol=1e-9)


def test_runs_are_deterministic(robot, geometry):
    dataset, truth = generate(quiet_scenario(duration=0.4, slip_rate=0.05, noise={}), robot)
    first = _estimator('DualBetaKF', truth, geometry).run(dataset)
    second = _estimator('DualBetaKF', truth, geometry).run(dataset)
    np.testing.assert_array_equal(first.states().p, second.states().p)
    np.testing.assert_array_equal(first.params(), second.params())


def test_contact_is_recomputed_from_force(standing, geometry):
    dataset, truth = standing
    ctx = _estimator('DualQEKF', truth, geometry, contact_threshold=1e4)
    ctx.step(dataset[0])
    out = ctx.step(dataset[1])
    assert out.diagnostics['param_skipped']
    assert not ctx.last_frame.contact.any()


def test_fixed_calf_length_biases_leg_odometry(robot, geometry):
    """A wrong calf length leaves a velocity residual that the dual filter removes."""
    scn = quiet_scenario(duration=3.0, calf_length=dict(value=0.20))
    dataset, truth = generate(scn, robot)
    plain = DualEstimator(estimator_config('QEKF'), geometry, truth.states.take(0), np.full(4, 0.226))
    dual = DualEstimator(estimator_config('DualQEKF'), geometry, truth.states.take(0), np.full(4, 0.226))
    plain_run, dual_run = plain.run(dataset), dual.run(dataset)
    assert np.abs(dual_run.params()[-1] - 0.20).max() < 5e-3

    def residual(result, k):
        x = result.states().take(k)
        frame = dataset[k]
        legs = frame.contact
        lo = leg_odometry_velocity(x, frame, result.params()[k], geometry)[legs]
        return np.linalg.norm(lo - truth.states.v[k], axis=1).mean()
    late = range(1000, 1500, 5)
    assert np.mean([residual(dual_run, k) for k in late]) < np.mean([residual(plain_run, k) for k in late])


def test_numerical_failure_keeps_the_prediction(monkeypatch, standing, geometry):
    dataset, truth = standing
    original = core.solver.beta_update
    calls = []

    def flaky(*args, **kwargs):
        calls.append(1)
        if len(calls) == 3:
            raise NumericalFailureError('solver exploded')
        return original(*args, **kwargs)
    monkeypatch.setattr(core.solver, 'beta_update', flaky)
    frames = dataset.replace(**{k: v[:10] for k, v in dataset.arrays().items()})
    result = _estimator('BetaKF', truth, geometry).run(frames)
    assert len(result.outputs) == 10
    assert result.failures == [(3, 'frame 3: solver exploded')]
    assert result.outputs[3].diagnostics['failed'] == 'frame 3: solver exploded'
    np.testing.assert_allclose(result.outputs[3].state.p, truth.states.p[3], atol=1e-9)


def test_diagnostics_go_to_tensorboard(tmp_path, standing, geometry):
    dataset, truth = standing
    frames = dataset.replace(**{k: v[:5] for k, v in dataset.arrays().items()})
    cfg = estimator_config('DualBetaKF')
    ctx = DualEstimator(cfg, geometry, truth.states.take(0), log_path=str(tmp_path / 'tb'))
    ctx.run(frames)
    assert os.listdir(str(tmp_path / 'tb'))


def test_initial_state_from_kinematics(standing, geometry):
    dataset, truth = standing
    x0 = initial_state(dataset[0], truth.params[0], geometry)
    np.testing.assert_array_equal(x0.p, 0.0)
    np.testing.assert_allclose(x0.s - x0.s.mean(axis=0), truth.states.s[0] - truth.states.s[0].mean(axis=0),
                               atol=0.05)


def test_unknown_option_is_refused(standing, geometry):
    _, truth = standing
    with pytest.raises(InvalidArgumentError):
        DualEstimator(estimator_config('QEKF'), geometry, truth.states.take(0), colour='red')


def test_state_belief_type(standing, geometry):
    _, truth = standing
    ctx = _estimator('BetaKF', truth, geometry)
    assert isinstance(ctx.state, GaussianBelief)
    assert ctx.pending is None


def test_first_frame_emits_the_initial_state_without_propagating(standing, geometry):
    dataset, truth = standing
    P0 = 1e-4 * np.eye(27)
    ctx = init(truth.states.take(0), truth.params[0], P0, estimator_config('BetaKF'), geometry)
    out = step(ctx, dataset[0])
    assert out.diagnostics == {}
    assert out.state.allclose(truth.states.take(0), atol=0.0)
    np.testing.assert_array_equal(ctx.state.cov, P0)
    assert ctx.pending is None and ctx.prior_cov is None
    out = step(ctx, dataset[1])
    assert 'iterations' in out.diagnostics
    assert ctx.prior_cov is not None


def test_initial_calf_lengths_are_checked(standing, geometry):
    _, truth = standing
    cfg = estimator_config('DualQEKF')
    with pytest.raises(InvalidArgumentError):
        DualEstimator(cfg, geometry, truth.states.take(0), [0.226, -0.1, 0.226, 0.226])
    with pytest.raises(InvalidArgumentError):
        DualEstimator(cfg, geometry, truth.states.take(0), np.full(4, 0.3), calf_bounds=(0.1, 0.25))
    with pytest.raises(InvalidArgumentError):
        DualEstimator(cfg, geometry, truth.states.take(0), np.full(3, 0.226))
    with pytest.raises(InvalidArgumentError):
        DualEstimator(cfg, geometry, truth.states.take(0), P0=np.eye(24))


def test_initial_calf_length_falls_back_to_the_robot(standing, geometry):
    _, truth = standing
    ctx = DualEstimator(estimator_config('DualQEKF'), geometry, truth.states.take(0), calf_length=0.21)
    np.testing.assert_array_equal(ctx.param_belief.mean, np.full(4, 0.21))
    ctx = DualEstimator(estimator_config('DualQEKF', initial_calf_length=0.24), geometry, truth.states.take(0),
                        calf_length=0.21)
    np.testing.assert_array_equal(ctx.param_belief.mean, np.full(4, 0.24))
    ctx = DualEstimator(estimator_config('DualQEKF'), geometry, truth.states.take(0))
    np.testing.assert_array_equal(ctx.param_belief.mean, np.full(4, 0.226))


def test_stance_legs_keep_their_touchdown_calf_length(trotting, geometry):
    dataset, truth = trotting
    ctx = DualEstimator(estimator_config('DualBetaKF'), geometry, truth.states.take(0), np.full(4, 0.24))
    ctx.step(dataset[0])
    held = touched = 0
    for k in range(1, 400):
        before, contact_before = ctx.stance_lengths.copy(), ctx.last_contact
        out = ctx.step(dataset[k])
        stays = ctx.last_contact & contact_before
        np.testing.assert_array_equal(ctx.stance_lengths[stays], before[stays])
        np.testing.assert_array_equal(ctx.stance_lengths[~stays], out.params[~stays])
        held += int(stays.sum())
        touched += int((ctx.last_contact & ~contact_before).sum())
    assert held > 0 and touched > 0
