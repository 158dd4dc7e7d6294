"""Discrete IMU-driven state propagation and its error-state Jacobian."""

from collections import namedtuple

import numpy as np

from .exceptions import InvalidArgumentError, PropagationOverflowError
from .state import RobotState, StateIndex, quat_exp, quat_mul, rotation_matrix, skew

MAX_STEP = 0.1


class ControlInput(namedtuple('ControlInput', ['accel', 'gyro', 'dt'])):
    """IMU sample used as control: accel (m/s^2, body), gyro (rad/s, body), dt (s)."""
    __slots__ = ()

    @classmethod
    def create(cls, accel, gyro, dt):
        dt = float(dt)
        if not 0.0 < dt < MAX_STEP:
            raise InvalidArgumentError('step dt must lie in (0, %g) s, got %r' % (MAX_STEP, dt))
        return cls(accel=np.array(accel, dtype=float), gyro=np.array(gyro, dtype=float), dt=dt)

    @classmethod
    def from_frame(cls, frame, dt):
        return cls.create(frame.accel, frame.gyro, dt)


def propagate(x, u, g):
    """Euler step of the motion model; broadcasts over batched states."""
    g = np.asarray(g, dtype=float)
    R = rotation_matrix(x.q)
    acc = np.einsum('...ij,...j->...i', R, u.accel - x.ba) + g
    rv = (u.gyro - x.bg) * u.dt
    if not (np.all(np.isfinite(acc)) and np.all(np.isfinite(rv))):
        raise PropagationOverflowError('non-finite IMU-driven increment')
    out = RobotState(p=x.p + x.v * u.dt,
                     v=x.v + acc * u.dt,
                     q=quat_mul(x.q, quat_exp(rv)),
                     s=x.s.copy(),
                     bg=x.bg.copy(),
                     ba=x.ba.copy())
    if not all(np.all(np.isfinite(field)) for field in out):
        raise PropagationOverflowError('propagated state is not finite')
    return out


def process_jacobian(x, u, g=None):
    """F = d propagate / d error state, first order in dt."""
    idx = StateIndex.for_legs(x.n_legs)
    R = rotation_matrix(x.q)
    dt = u.dt
    F = np.eye(idx.dim)
    F[idx.p, idx.v] = dt * np.eye(3)
    F[idx.v, idx.theta] = -R.dot(skew(u.accel - x.ba)) * dt
    F[idx.v, idx.ba] = -R * dt
    F[idx.theta, idx.theta] = np.eye(3) - skew((u.gyro - x.bg) * dt)
    F[idx.theta, idx.bg] = -dt * np.eye(3)
    return F
