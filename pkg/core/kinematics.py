# =========================================================================================
# Leg kinematics and statics of a 3-DoF quadruped leg.
# Chain, in the body frame: hip-roll phi1 about x, then hip-pitch phi2 and knee-pitch phi3
# about the rolled y axis, with a lateral hip offset d:
#   foot = hip + Rx(phi1) [a, side*d, c]
#   a = -lt sin(phi2) - lc sin(phi2 + phi3)
#   c = -lt cos(phi2) - lc cos(phi2 + phi3)
# Joint angles have shape (..., 3); calf lengths broadcast against the leading dims.
# =========================================================================================

from collections import namedtuple

import numpy as np

from .exceptions import InvalidArgumentError, SingularConfigurationError

LEG_NAMES = ('FL', 'FR', 'RL', 'RR')
CONDITION_LIMIT = 1e8


class LegGeometry(namedtuple('LegGeometry', ['leg_id', 'hip_position', 'hip_offset', 'thigh_length', 'side_sign'])):
    """Fixed part of one leg; hip_position is in the body frame (m)."""
    __slots__ = ()

    @property
    def lateral(self):
        return self.side_sign * abs(self.hip_offset)


def check_calf_lengths(lc, bounds=(0.0, 1.0)):
    lc = np.asarray(lc, dtype=float)
    if not np.all((lc > bounds[0]) & (lc < bounds[1])):
        raise InvalidArgumentError('calf lengths %r outside (%g, %g)' % (lc, bounds[0], bounds[1]))
    return lc


def _chain(phi, geo, lc):
    phi = np.asarray(phi, dtype=float)
    lc = np.asarray(lc, dtype=float)
    s1, c1 = np.sin(phi[..., 0]), np.cos(phi[..., 0])
    s2, c2 = np.sin(phi[..., 1]), np.cos(phi[..., 1])
    s23, c23 = np.sin(phi[..., 1] + phi[..., 2]), np.cos(phi[..., 1] + phi[..., 2])
    lt = geo.thigh_length
    a = -lt * s2 - lc * s23
    c = -lt * c2 - lc * c23
    return s1, c1, s2, c2, s23, c23, a, c


def _roll(s1, c1, x, y, z):
    return np.stack([x, c1 * y - s1 * z, s1 * y + c1 * z], -1)


def fk(phi, geo, lc):
    """Foot position relative to the body center, body frame (m)."""
    s1, c1, _, _, _, _, a, c = _chain(phi, geo, lc)
    return np.asarray(geo.hip_position, dtype=float) + _roll(s1, c1, a, geo.lateral + 0.0 * a, c)


def jacobian(phi, geo, lc):
    """d fk / d phi, shape (..., 3, 3)."""
    s1, c1, s2, c2, s23, c23, a, c = _chain(phi, geo, lc)
    lc = np.asarray(lc, dtype=float)
    lt = geo.thigh_length
    yd = geo.lateral
    zero = 0.0 * a
    col1 = np.stack([zero, -s1 * yd - c1 * c, c1 * yd - s1 * c], -1)
    col2 = _roll(s1, c1, -lt * c2 - lc * c23, zero, lt * s2 + lc * s23)
    col3 = _roll(s1, c1, -lc * c23 + zero, zero, lc * s23)
    return np.stack([col1, col2, col3], -1)


def jacobian_wrt_lc(phi, geo, lc=None):
    """d fk / d lc, the unit calf axis; independent of lc."""
    phi = np.asarray(phi, dtype=float)
    s1, c1 = np.sin(phi[..., 0]), np.cos(phi[..., 0])
    s23, c23 = np.sin(phi[..., 1] + phi[..., 2]), np.cos(phi[..., 1] + phi[..., 2])
    return _roll(s1, c1, -s23, 0.0 * s23, -c23)


def statics_torque(phi, geo, lc, force):
    """tau = -J^T F for a ground reaction force F in the body frame."""
    J = jacobian(phi, geo, lc)
    return -np.einsum('...ji,...j->...i', J, np.asarray(force, dtype=float))


def is_well_conditioned(J, limit=CONDITION_LIMIT):
    with np.errstate(all='ignore'):
        cond = np.linalg.cond(J)
    return np.isfinite(cond) & (cond < limit)


def statics_force(phi, geo, lc, torque):
    """F = -J^-T tau; raises SingularConfigurationError when cond(J) >= 1e8."""
    J = jacobian(phi, geo, lc)
    if not np.all(is_well_conditioned(J)):
        raise SingularConfigurationError('leg %s: jacobian is near singular' % geo.leg_id)
    JT = np.swapaxes(J, -1, -2)
    return -np.linalg.solve(JT, np.asarray(torque, dtype=float)[..., None])[..., 0]


def statics_normal_force(phi, geo, lc, torque):
    """Predicted normal contact force, the z component of -J^-T tau."""
    return statics_force(phi, geo, lc, torque)[..., 2]


def inverse_kinematics(foot, geo, lc):
    """Joint angles placing the foot at `foot` (body frame), knee bent backwards.

    Returns (phi, reachable); unreachable targets give NaN angles.
    """
    rel = np.asarray(foot, dtype=float) - np.asarray(geo.hip_position, dtype=float)
    lc = np.asarray(lc, dtype=float)
    lt = geo.thigh_length
    yd = geo.lateral
    px, py, pz = rel[..., 0], rel[..., 1], rel[..., 2]
    planar = py * py + pz * pz - yd * yd
    with np.errstate(invalid='ignore'):
        c = -np.sqrt(planar)
        phi1 = np.arctan2(pz, py) - np.arctan2(c, yd)
        cos3 = (px * px + c * c - lt * lt - lc * lc) / (2.0 * lt * lc)
        reachable = (planar >= 0.0) & (np.abs(cos3) <= 1.0)
        phi3 = -np.arccos(cos3)
        k1 = lt + lc * np.cos(phi3)
        k2 = lc * np.sin(phi3)
        phi2 = np.arctan2(-px, -c) - np.arctan2(k2, k1)
    phi1 = np.arctan2(np.sin(phi1), np.cos(phi1))
    return np.stack([phi1, phi2, phi3], -1), reachable
