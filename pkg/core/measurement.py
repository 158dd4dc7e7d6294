"""Leg-kinematics residual measurement h(x; lc) with pseudo-measurement y = 0.

Rows are ordered as all position residuals (3 per leg, legs in order) followed by
all velocity residuals. For leg i with f = fk(phi_i; lc_i), J = jacobian(phi_i; lc_i)
and w = gyro - b_w:

    position  R f - (s_i - p)
    velocity  R (J dphi_i + w x f) + v
"""

import numpy as np

from .kinematics import fk, jacobian
from .state import StateIndex, rotation_matrix, skew


def leg_terms(frame, params, geometry):
    """(feet, joint_vel), both (N, 3) in the body frame: fk(phi_i; lc_i) and J(phi_i; lc_i) dphi_i.

    They depend on the frame and the calf lengths only, never on the state.
    """
    feet = np.stack([fk(frame.phi[i], geo, params[i]) for i, geo in enumerate(geometry)])
    joint_vel = np.stack([jacobian(frame.phi[i], geo, params[i]).dot(frame.dphi[i])
                          for i, geo in enumerate(geometry)])
    return feet, joint_vel


def _body_velocity(x, frame, feet, joint_vel):
    omega = frame.gyro - x.bg
    return joint_vel + np.cross(omega[..., None, :], feet)


def measure(x, frame, params, geometry, terms=None):
    """Residual vector (..., 6N); broadcasts over batched states. `terms` reuses leg_terms of the frame."""
    feet, joint_vel = leg_terms(frame, params, geometry) if terms is None else terms
    R = rotation_matrix(x.q)
    rel = np.einsum('...ij,nj->...ni', R, feet)
    position = rel + x.p[..., None, :] - x.s
    body_vel = _body_velocity(x, frame, feet, joint_vel)
    velocity = np.einsum('...ij,...nj->...ni', R, body_vel) + x.v[..., None, :]
    batch = position.shape[:-2]
    return np.concatenate([position.reshape(batch + (-1,)), velocity.reshape(batch + (-1,))], -1)


def measurement_jacobian(x, frame, params, geometry, terms=None):
    """H = d measure / d error state, shape (6N, 3N+15)."""
    n_legs = len(geometry)
    idx = StateIndex.for_legs(n_legs)
    feet, joint_vel = leg_terms(frame, params, geometry) if terms is None else terms
    body_vel = _body_velocity(x, frame, feet, joint_vel)
    R = rotation_matrix(x.q)
    H = np.zeros((6 * n_legs, idx.dim))
    eye = np.eye(3)
    for i in range(n_legs):
        pos = slice(3 * i, 3 * i + 3)
        vel = slice(3 * (n_legs + i), 3 * (n_legs + i) + 3)
        R_f = R.dot(skew(feet[i]))
        H[pos, idx.p] = eye
        H[pos, idx.foot(i)] = -eye
        H[pos, idx.theta] = -R_f
        H[vel, idx.v] = eye
        H[vel, idx.theta] = -R.dot(skew(body_vel[i]))
        H[vel, idx.bg] = R_f
    return H


def leg_rows(leg, n_legs):
    """Indices of the six rows belonging to one leg."""
    return np.r_[3 * leg:3 * leg + 3, 3 * (n_legs + leg):3 * (n_legs + leg) + 3]


def leg_row_mask(frame, contact=None):
    """Per-row flags over the 6N rows: True for legs in contact."""
    contact = frame.contact if contact is None else np.asarray(contact, dtype=bool)
    per_leg = np.repeat(contact, 3)
    return np.concatenate([per_leg, per_leg])


def effective_covariance(sigma, mask, inflation):
    """Sigma with the rows and columns of masked-out rows scaled by the inflation factor."""
    scale = np.where(mask, 1.0, np.sqrt(inflation))
    return sigma * np.outer(scale, scale)


def leg_odometry_velocity(x, frame, params, geometry):
    """Body velocity implied by each leg under the no-slip assumption, world frame (N, 3)."""
    feet, joint_vel = leg_terms(frame, params, geometry)
    R = rotation_matrix(x.q)
    return -np.einsum('ij,nj->ni', R, _body_velocity(x, frame, feet, joint_vel))
