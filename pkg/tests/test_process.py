import numpy as np
import pytest

from conftest import random_state
from core.exceptions import InvalidArgumentError, PropagationOverflowError
from core.process import ControlInput, process_jacobian, propagate
from core.state import RobotState, local, retract, yaw_of

G = np.array([0.0, 0.0, -9.81])


@pytest.mark.parametrize('dt', [0.0, -1e-3, 0.1, 1.0])
def test_control_rejects_bad_steps(dt):
    with pytest.raises(InvalidArgumentError):
        ControlInput.create(np.zeros(3), np.zeros(3), dt)


def test_resting_robot_stays_put():
    x = RobotState.create(p=[1.0, 2.0, 0.3])
    u = ControlInput.create([0.0, 0.0, 9.81], np.zeros(3), 0.002)
    x_next = propagate(x, u, G)
    assert x_next.allclose(x, atol=1e-15)


def test_euler_step(rng):
    x = random_state(rng)
    u = ControlInput.create(rng.normal(size=3), rng.normal(size=3), 0.002)
    x_next = propagate(x, u, G)
    np.testing.assert_allclose(x_next.p, x.p + x.v * u.dt, atol=1e-15)
    np.testing.assert_array_equal(x_next.s, x.s)
    np.testing.assert_array_equal(x_next.bg, x.bg)


def test_process_jacobian_matches_finite_differences(rng):
    for _ in range(100):
        x = random_state(rng)
        u = ControlInput.create(rng.normal(size=3) * 3.0, 0.5 * rng.normal(size=3), 1e-3)
        F = process_jacobian(x, u, G)
        center = propagate(x, u, G)
        h = 1e-6
        numeric = np.zeros_like(F)
        for i in range(F.shape[1]):
            e = np.zeros(F.shape[1])
            e[i] = h
            numeric[:, i] = (local(center, propagate(retract(x, e), u, G))
                             - local(center, propagate(retract(x, -e), u, G))) / (2 * h)
        # F keeps first-order terms in dt only
        np.testing.assert_allclose(F, numeric, atol=1e-5)


def test_propagate_broadcasts(rng):
    x = random_state(rng)
    u = ControlInput.create(rng.normal(size=3), rng.normal(size=3), 0.002)
    dx = 1e-2 * rng.normal(size=(5, 27))
    batch = propagate(retract(x, dx), u, G)
    for k in range(5):
        assert batch.take(k).allclose(propagate(retract(x, dx[k]), u, G), atol=1e-14)


def test_non_finite_input_raises():
    u = ControlInput.create([np.nan, 0.0, 0.0], np.zeros(3), 0.002)
    with pytest.raises(PropagationOverflowError):
        propagate(RobotState.create(), u, G)


def test_free_fall_matches_the_discrete_closed_form():
    dt, k = 0.002, 250
    x = RobotState.create(p=[0.0, 0.0, 5.0])
    u = ControlInput.create(np.zeros(3), np.zeros(3), dt)
    for _ in range(k):
        x = propagate(x, u, G)
    np.testing.assert_allclose(x.v, k * dt * G, atol=1e-12)
    np.testing.assert_allclose(x.p, [0.0, 0.0, 5.0] + G * dt ** 2 * k * (k - 1) / 2, atol=1e-12)
    np.testing.assert_allclose(x.q, [1.0, 0.0, 0.0, 0.0], atol=1e-15)


def test_constant_yaw_rate_integrates_exactly():
    x = RobotState.create()
    u = ControlInput.create([0.0, 0.0, 9.81], [0.0, 0.0, 1.0], 0.002)
    for _ in range(1000):
        x = propagate(x, u, G)
    assert yaw_of(x.q) == pytest.approx(2.0, abs=1e-6)
    np.testing.assert_allclose(x.q, [np.cos(1.0), 0.0, 0.0, np.sin(1.0)], atol=1e-9)


def test_quaternion_stays_unit_length(rng):
    x = random_state(rng)
    for _ in range(5000):
        x = propagate(x, ControlInput.create(rng.normal(size=3), 3.0 * rng.normal(size=3), 0.002), G)
    assert np.linalg.norm(x.q) == pytest.approx(1.0, abs=1e-12)
