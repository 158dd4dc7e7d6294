import numpy as np
import pytest

from core.config import EstimatorConfig, NoiseConfig, RobotConfig, ScenarioConfig
from core.simulator import generate
from core.state import RobotState, SensorFrame, quat_exp

QUIET_SENSORS = dict(gyro=0.0, accel=0.0, joint_angle=0.0, joint_velocity=0.0, torque=0.0, force=0.0)


def quiet_scenario(**overrides):
    """Noise-free, slip-free scenario; keyword arguments override any field."""
    data = dict(duration=1.0, slip_rate=0.0, noise=QUIET_SENSORS, seed=5)
    data.update(overrides)
    return ScenarioConfig.from_dict(data)


def random_phi(rng, *shape):
    """Joint angles in the usual knee-backwards working range."""
    return rng.uniform([-0.3, 0.4, -2.2], [0.3, 1.1, -0.9], size=shape + (3,))


def random_state(rng, n_legs=4):
    return RobotState.create(p=rng.normal(size=3), v=rng.normal(size=3), q=quat_exp(rng.normal(size=3)),
                             s=rng.normal(size=(n_legs, 3)), bg=0.01 * rng.normal(size=3),
                             ba=0.1 * rng.normal(size=3), n_legs=n_legs)


def random_frame(rng, n_legs=4, t=0.0, contact=None):
    return SensorFrame.create(t=t, gyro=rng.normal(size=3), accel=rng.normal(size=3) + [0.0, 0.0, 9.81],
                              phi=random_phi(rng, n_legs), dphi=rng.normal(size=(n_legs, 3)),
                              tau=rng.normal(size=(n_legs, 3)), fz=rng.uniform(20.0, 60.0, n_legs),
                              contact=np.ones(n_legs, dtype=bool) if contact is None else contact)


def estimator_config(variant, **overrides):
    data = dict(variant=variant)
    data.update(overrides)
    return EstimatorConfig.from_dict(data)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope='session')
def robot():
    return RobotConfig.from_dict()


@pytest.fixture(scope='session')
def geometry(robot):
    return robot.geometry()


@pytest.fixture
def noise():
    return NoiseConfig.from_dict()


@pytest.fixture(scope='session')
def standing(robot):
    """Noise-free stand-still stream of 2 s: (dataset, truth)."""
    return generate(quiet_scenario(gait='stand', speed=0.0, duration=2.0), robot)


@pytest.fixture(scope='session')
def trotting(robot):
    """Noise-free, slip-free trot of 2 s with constant calf lengths."""
    return generate(quiet_scenario(duration=2.0), robot)
