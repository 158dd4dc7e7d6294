"""Synthetic trotting quadruped: ground truth plus noisy proprioceptive streams.

The body is integrated with the same Euler scheme the filters use, so a noiseless
stream is reproduced exactly by the process model. Feet are planned under the hips,
swing along a smooth arc and, during slip episodes, slide on the ground while the
encoders keep reporting the kinematic chain.
"""

from collections import namedtuple
import logging

import numpy as np
from scipy import linalg
from tqdm import tqdm

from .config import RobotConfig
from .dataset import SensorDataset
from .exceptions import PreconditionError, ScenarioError
from .kinematics import inverse_kinematics, jacobian, jacobian_wrt_lc
from .state import RobotState, quat_exp, quat_identity, quat_mul, rotation_matrix, yaw_of

logger = logging.getLogger(__name__)

GRAVITY = np.array([0.0, 0.0, -9.81])
CALF_RANGE = (0.182, 0.253)
TROT_OFFSETS = (0.0, 0.5, 0.5, 0.0)
SWAY_PHASE = 1.0

GroundTruth = namedtuple('GroundTruth', ['t', 'states', 'params', 'foot_velocity', 'slipping', 'grf', 'clean',
                                         'scenario', 'robot'])
GroundTruth.__doc__ = """Per-frame true states, calf lengths (K, N), foot velocities (K, N, 3),
slip flags (K, N), body-frame ground reaction forces (K, N, 3) and the pre-noise sensor stream."""


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def _swing_profile(sigma):
    """Blend m(sigma) from liftoff (0) to touchdown (1) and its derivative in sigma."""
    two_pi = 2.0 * np.pi
    return sigma - np.sin(two_pi * sigma) / two_pi, 1.0 - np.cos(two_pi * sigma)


def _body_trajectory(scn, n_frames, dt):
    t = np.arange(n_frames + 1) * dt
    speed = scn.speed * (_smoothstep(t / scn.ramp_time) if scn.ramp_time > 0.0 else np.ones_like(t))
    segment = (t // scn.segment_duration).astype(int) % len(scn.yaw_rates)
    rate = 2.0 * np.pi / scn.gait_period
    amp = scn.sway_amplitude
    omega = np.stack([amp * rate * np.cos(rate * t),
                      0.5 * amp * rate * np.cos(rate * t + SWAY_PHASE),
                      np.asarray(scn.yaw_rates)[segment]], -1)

    q = np.empty((n_frames + 1, 4))
    q[0] = quat_identity()
    increments = quat_exp(omega * dt)
    for k in range(n_frames):
        q[k + 1] = quat_mul(q[k], increments[k])
    heading = yaw_of(q)
    v = speed[:, None] * np.stack([np.cos(heading), np.sin(heading), np.zeros_like(heading)], -1)
    start = np.array([[0.0, 0.0, scn.body_height]])
    p = np.cumsum(np.vstack([start, v[:-1] * dt]), axis=0)
    R = rotation_matrix(q)
    accel_world = (v[1:] - v[:-1]) / dt
    accel_body = np.einsum('kji,kj->ki', R[:-1], accel_world - GRAVITY)
    return dict(t=t[:-1], p=p[:-1], v=v[:-1], q=q[:-1], R=R[:-1], omega=omega[:-1],
                accel_world=accel_world, accel_body=accel_body, p_all=p, R_all=R)


def gait_schedule(scn, t, n_legs):
    """Stance flags, gait cycle index and swing progress for every frame and leg."""
    t = np.asarray(t, dtype=float)[:, None]
    if scn.gait == 'stand':
        zeros = np.zeros((t.shape[0], n_legs))
        return np.ones_like(zeros, dtype=bool), zeros.astype(int), zeros
    u = t / scn.gait_period + np.asarray(TROT_OFFSETS[:n_legs])[None, :]
    cycle = np.floor(u)
    frac = u - cycle
    stance = frac < scn.duty_factor
    sigma = np.where(stance, 0.0, (frac - scn.duty_factor) / (1.0 - scn.duty_factor))
    return stance, cycle.astype(int), sigma


def _anchor(scn, body, geo, leg, cycle, dt):
    """Ground point under the hip at the middle of stance `cycle`."""
    if scn.gait == 'stand':
        k = 0
    else:
        t_mid = (cycle + 0.5 * scn.duty_factor - TROT_OFFSETS[leg]) * scn.gait_period
        k = int(np.clip(np.round(t_mid / dt), 0, len(body['p_all']) - 1))
    hip = np.asarray(geo.hip_position, dtype=float) + np.array([0.0, geo.lateral, 0.0])
    point = body['p_all'][k] + body['R_all'][k].dot(hip)
    point[2] = 0.0
    return point


def _slip_process(scn, stance, rng):
    """Alternating renewal of slip episodes over stance frames, truncated at liftoff.

    The start probability makes the long-run share of slipping stance frames equal
    to slip_rate for a geometric episode length with mean slip_duration frames.
    """
    n_frames, n_legs = stance.shape
    mean = scn.slip_duration
    p_start = scn.slip_rate / (mean * (1.0 - scn.slip_rate) + scn.slip_rate)
    slip = np.zeros((n_frames, n_legs, 3))
    slipping = np.zeros((n_frames, n_legs), dtype=bool)
    if p_start <= 0.0:
        return slip, slipping
    draws = rng.random((n_legs, n_frames))
    for leg in range(n_legs):
        remaining = 0
        velocity = None
        for k in range(n_frames):
            if not stance[k, leg]:
                remaining = 0
                continue
            if remaining == 0 and draws[leg, k] < p_start:
                remaining = int(rng.geometric(1.0 / mean))
                speed = rng.uniform(scn.slip_speed[0], scn.slip_speed[1])
                angle = rng.uniform(0.0, 2.0 * np.pi)
                velocity = speed * np.array([np.cos(angle), np.sin(angle), 0.0])
            if remaining > 0:
                slip[k, leg] = velocity
                slipping[k, leg] = True
                remaining -= 1
    return slip, slipping


def _foot_track(scn, body, geo, leg, stance, cycle, sigma, slip, dt):
    n_frames = len(stance)
    swing_time = (1.0 - scn.duty_factor) * scn.gait_period
    anchors = {}

    def anchor(n):
        if n not in anchors:
            anchors[n] = _anchor(scn, body, geo, leg, n, dt)
        return anchors[n]

    s = np.zeros((n_frames, 3))
    sd = np.zeros((n_frames, 3))
    drift = np.zeros(3)
    current = None
    for k in range(n_frames):
        n = cycle[k]
        if stance[k]:
            if n != current:
                current, drift = n, np.zeros(3)
            s[k] = anchor(n) + drift
            sd[k] = slip[k]
            drift = drift + slip[k] * dt
            continue
        start = anchor(n) + (drift if n == current else 0.0)
        end = anchor(n + 1)
        m, dm = _swing_profile(sigma[k])
        bump = 0.5 * scn.swing_height * (1.0 - np.cos(2.0 * np.pi * sigma[k]))
        dbump = scn.swing_height * np.pi * np.sin(2.0 * np.pi * sigma[k])
        s[k] = start + m * (end - start) + np.array([0.0, 0.0, bump])
        sd[k] = (dm * (end - start) + np.array([0.0, 0.0, dbump])) / swing_time
    return s, sd


def _leg_encoders(geo, body, s, sd, lc, lc_rate, rows, leg_name):
    """Joint angles and rates that realize the foot track s (world) with velocity sd."""
    R = body['R'][rows]
    rel_world = s - body['p'][rows]
    f = np.einsum('kji,kj->ki', R, rel_world)
    phi, reachable = inverse_kinematics(f, geo, lc)
    if not np.all(reachable):
        bad = int(np.asarray(rows)[~reachable][0])
        raise ScenarioError("frame %d: foot of leg %s is out of reach" % (bad, leg_name))
    J = jacobian(phi, geo, lc)
    rhs = (np.einsum('kji,kj->ki', R, sd - body['v'][rows])
           - np.cross(body['omega'][rows], f)
           - jacobian_wrt_lc(phi, geo) * lc_rate[:, None])
    dphi = np.linalg.solve(J, rhs[..., None])[..., 0]
    return phi, dphi, J


_null_bases = {}


def _vertical_loads(weight, rel_xy):
    """Vertical forces summing to `weight` with the least residual moment about the body center."""
    n = len(rel_xy)
    f0 = np.full(n, weight / n)
    if n == 1:
        return f0
    if n not in _null_bases:
        _null_bases[n] = linalg.null_space(np.ones((1, n)))
    basis = _null_bases[n]
    M = rel_xy.T
    c = np.linalg.lstsq(M.dot(basis), -M.dot(f0), rcond=None)[0]
    return f0 + basis.dot(c)


def _ground_reaction(mass, body, feet, stance):
    """Quasi-static ground reaction forces in the body frame, zero for swing legs."""
    n_frames, n_legs = stance.shape
    grf = np.zeros((n_frames, n_legs, 3))
    total = mass * (body['accel_world'] - GRAVITY)
    for k in range(n_frames):
        legs = np.flatnonzero(stance[k])
        if legs.size == 0:
            continue
        rel = feet[k, legs, :2] - body['p'][k, :2]
        world = np.zeros((legs.size, 3))
        world[:, :2] = total[k, :2] / legs.size
        world[:, 2] = _vertical_loads(total[k, 2], rel)
        grf[k, legs] = world.dot(body['R'][k])
    return grf


def generate(scn, robot=None, progress=False):
    """Simulate a scenario; returns (noisy SensorDataset, GroundTruth)."""
    robot = robot or RobotConfig.from_dict()
    geometry = robot.geometry()
    n_legs = len(geometry)
    n_frames = scn.frame_count
    dt = 1.0 / scn.rate
    rng = np.random.default_rng(scn.seed)

    body = _body_trajectory(scn, n_frames, dt)
    t = body['t']
    lc, lc_rate = scn.calf_length.evaluate(t, n_legs)
    if lc.size and (lc.min() < CALF_RANGE[0] - 1e-12 or lc.max() > CALF_RANGE[1] + 1e-12):
        raise ScenarioError('calf length profile leaves [%g, %g] m' % CALF_RANGE)

    stance, cycle, sigma = gait_schedule(scn, t, n_legs)
    slip, slipping = _slip_process(scn, stance, rng)

    feet = np.zeros((n_frames, n_legs, 3))
    foot_velocity = np.zeros((n_frames, n_legs, 3))
    phi = np.zeros((n_frames, n_legs, 3))
    dphi = np.zeros((n_frames, n_legs, 3))
    jacobians = np.zeros((n_frames, n_legs, 3, 3))
    rows = np.arange(n_frames)
    for leg, geo in enumerate(tqdm(geometry, disable=not progress, desc='legs')):
        feet[:, leg], foot_velocity[:, leg] = _foot_track(scn, body, geo, leg, stance[:, leg], cycle[:, leg],
                                                          sigma[:, leg], slip[:, leg], dt)
        phi[:, leg], dphi[:, leg], jacobians[:, leg] = _leg_encoders(
            geo, body, feet[:, leg], foot_velocity[:, leg], lc[:, leg], lc_rate[:, leg], rows, geo.leg_id)

    grf = _ground_reaction(robot.mass, body, feet, stance)
    tau = -np.einsum('klji,klj->kli', jacobians, grf)
    bg = np.asarray(scn.gyro_bias)
    ba = np.asarray(scn.accel_bias)
    clean = SensorDataset(t=t, gyro=body['omega'] + bg, accel=body['accel_body'] + ba, phi=phi, dphi=dphi,
                          tau=tau, fz=grf[..., 2], contact=stance)

    noise = scn.noise
    fz = clean.fz + rng.normal(0.0, noise.force, clean.fz.shape)
    noisy = SensorDataset(t=t,
                          gyro=clean.gyro + rng.normal(0.0, noise.gyro, clean.gyro.shape),
                          accel=clean.accel + rng.normal(0.0, noise.accel, clean.accel.shape),
                          phi=phi + rng.normal(0.0, noise.joint_angle, phi.shape),
                          dphi=dphi + rng.normal(0.0, noise.joint_velocity, dphi.shape),
                          tau=tau + rng.normal(0.0, noise.torque, tau.shape),
                          fz=fz, contact=fz >= scn.contact_threshold)

    states = RobotState(p=body['p'], v=body['v'], q=body['q'], s=feet,
                        bg=np.tile(bg, (n_frames, 1)), ba=np.tile(ba, (n_frames, 1)))
    truth = GroundTruth(t=t, states=states, params=lc, foot_velocity=foot_velocity, slipping=slipping, grf=grf,
                        clean=clean, scenario=scn, robot=robot)
    logger.info('simulated %d frames, %d slipping stance leg-frames', n_frames, int(slipping.sum()))
    return noisy, truth


def inject_slip(dataset, truth, frame_index, leg, velocity):
    """Make stance foot `leg` slide with `velocity` (world, m/s) during frame `frame_index`.

    The foot stays displaced until liftoff and the following swing blends back to the
    planned touchdown. Encoder readings of the affected frames are recomputed; sensor
    noise already present in `dataset` is kept. Returns the modified (dataset, truth).
    """
    velocity = np.asarray(velocity, dtype=float)
    clean = truth.clean
    if not clean.contact[frame_index, leg]:
        raise PreconditionError('frame %d: leg %d is in swing' % (frame_index, leg))
    if not np.any(velocity):
        return dataset, truth
    scn = truth.scenario
    geometry = truth.robot.geometry()
    geo = geometry[leg]
    n_frames = len(truth.t)
    dt = 1.0 / scn.rate

    stance = clean.contact[:, leg]
    after = np.flatnonzero(~stance[frame_index:])
    liftoff = frame_index + int(after[0]) if after.size else n_frames
    later = np.flatnonzero(stance[liftoff:])
    touchdown = liftoff + int(later[0]) if later.size else n_frames

    feet = truth.states.s.copy()
    foot_velocity = truth.foot_velocity.copy()
    delta = velocity * dt
    feet[frame_index + 1:liftoff, leg] += delta
    foot_velocity[frame_index, leg] += velocity
    if touchdown > liftoff:
        _, _, sigma = gait_schedule(scn, truth.t[liftoff:touchdown], len(geometry))
        m, dm = _swing_profile(sigma[:, leg])
        swing_time = (1.0 - scn.duty_factor) * scn.gait_period
        feet[liftoff:touchdown, leg] += (1.0 - m)[:, None] * delta
        foot_velocity[liftoff:touchdown, leg] -= (dm / swing_time)[:, None] * delta

    rows = np.arange(frame_index, touchdown)
    states = truth.states
    body = dict(p=states.p, v=states.v, R=rotation_matrix(states.q),
                omega=clean.gyro - states.bg)
    _, lc_rate = scn.calf_length.evaluate(truth.t[rows], len(geometry))
    phi, dphi, J = _leg_encoders(geo, body, feet[rows, leg], foot_velocity[rows, leg],
                                 truth.params[rows, leg], lc_rate[:, leg], rows, geo.leg_id)
    tau = -np.einsum('kji,kj->ki', J, truth.grf[rows, leg])

    def shifted(noisy, clean_values, new_values):
        out = noisy.copy()
        out[rows, leg] += new_values - clean_values[rows, leg]
        return out

    new_dataset = dataset.replace(phi=shifted(dataset.phi, clean.phi, phi),
                                  dphi=shifted(dataset.dphi, clean.dphi, dphi),
                                  tau=shifted(dataset.tau, clean.tau, tau))
    new_clean = clean.replace(phi=shifted(clean.phi, clean.phi, phi),
                              dphi=shifted(clean.dphi, clean.dphi, dphi),
                              tau=shifted(clean.tau, clean.tau, tau))
    slipping = truth.slipping.copy()
    slipping[frame_index, leg] |= bool(np.any(velocity != 0.0))
    new_truth = truth._replace(states=states._replace(s=feet), foot_velocity=foot_velocity,
                               slipping=slipping, clean=new_clean)
    return new_dataset, new_truth
