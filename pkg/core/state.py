# =========================================================================================
# Robot state, quaternion algebra and covariance helpers.
# Notation used across the package:
# N is the number of legs (4 for a quadruped).
# n is the dimension of the error (tangent) state, 3N + 15.
# m is the dimension of the leg measurement, 6N.
# Quaternions are float arrays [w, x, y, z] (Hamilton, scalar first, body-to-world).
# Every function here broadcasts over leading batch dimensions so sigma points can be
# processed as one array.
# =========================================================================================

from collections import namedtuple

import numpy as np

from .exceptions import InvalidArgumentError

TAYLOR_THRESHOLD = 1e-8
COVARIANCE_FLOOR = 1e-12


def skew(v):
    v = np.asarray(v, dtype=float)
    zero = np.zeros(v.shape[:-1])
    return np.stack([np.stack([zero, -v[..., 2], v[..., 1]], -1),
                     np.stack([v[..., 2], zero, -v[..., 0]], -1),
                     np.stack([-v[..., 1], v[..., 0], zero], -1)], -2)


def quat_identity():
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_conj(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def _quat_exp_exact(rv):
    theta = np.linalg.norm(rv, axis=-1, keepdims=True)
    safe = np.where(theta > 0.0, theta, 1.0)
    return np.concatenate([np.cos(0.5 * theta), np.sin(0.5 * theta) / safe * rv], -1)


def _quat_exp_taylor(rv):
    theta2 = np.sum(rv * rv, axis=-1, keepdims=True)
    return np.concatenate([1.0 - theta2 / 8.0, (0.5 - theta2 / 48.0) * rv], -1)


def quat_exp(rv):
    """Map a rotation vector (rad) to a unit quaternion."""
    rv = np.asarray(rv, dtype=float)
    if not np.all(np.isfinite(rv)):
        raise InvalidArgumentError('rotation vector must be finite, got %r' % (rv,))
    theta = np.linalg.norm(rv, axis=-1, keepdims=True)
    q = np.where(theta < TAYLOR_THRESHOLD, _quat_exp_taylor(rv), _quat_exp_exact(rv))
    return quat_normalize(q)


def quat_log(q):
    """Inverse of quat_exp, returns the rotation vector with angle in [0, pi]."""
    q = np.asarray(q, dtype=float)
    q = np.where(q[..., :1] < 0.0, -q, q)
    w = q[..., :1]
    vec = q[..., 1:]
    vn = np.linalg.norm(vec, axis=-1, keepdims=True)
    theta = 2.0 * np.arctan2(vn, w)
    small = vn < 1e-12
    scale = np.where(small, 2.0 / np.where(small, w, 1.0), theta / np.where(small, 1.0, vn))
    return scale * vec


def quat_mul(a, b):
    """Hamilton product a ⊗ b, renormalized."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    q = np.stack([aw * bw - ax * bx - ay * by - az * bz,
                  aw * bx + ax * bw + ay * bz - az * by,
                  aw * by - ax * bz + ay * bw + az * bx,
                  aw * bz + ax * by - ay * bx + az * bw], -1)
    return quat_normalize(q)


def rotation_matrix(q):
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1)], -2)


def yaw_of(q):
    R = rotation_matrix(q)
    return np.arctan2(R[..., 1, 0], R[..., 0, 0])


def right_jacobian_inv(rv):
    """Inverse right Jacobian of SO(3): d Log(Exp(rv) Exp(d)) / d d at d = 0."""
    rv = np.asarray(rv, dtype=float)
    theta = np.linalg.norm(rv)
    W = skew(rv)
    if theta < 1e-6:
        coeff = 1.0 / 12.0
    else:
        coeff = 1.0 / theta ** 2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * W + coeff * W.dot(W)


class StateIndex(namedtuple('StateIndex', ['p', 'v', 'theta', 's', 'bg', 'ba', 'dim', 'n_legs'])):
    """Slices of the error state [dp, dv, dtheta, ds_1..ds_N, dbg, dba]."""
    __slots__ = ()

    @classmethod
    def for_legs(cls, n_legs):
        s_end = 9 + 3 * n_legs
        return cls(p=slice(0, 3), v=slice(3, 6), theta=slice(6, 9), s=slice(9, s_end),
                   bg=slice(s_end, s_end + 3), ba=slice(s_end + 3, s_end + 6),
                   dim=s_end + 6, n_legs=n_legs)

    def foot(self, leg):
        return slice(9 + 3 * leg, 12 + 3 * leg)


def error_dim(n_legs):
    """Dimension of the error state for n_legs legs."""
    return 3 * n_legs + 15


class RobotState(namedtuple('RobotState', ['p', 'v', 'q', 's', 'bg', 'ba'])):
    """Full estimation state x = [p; v; q; s_1..s_N; b_w; b_a].

    p, v: (3,) world frame; q: (4,) unit quaternion; s: (N, 3) world foot positions;
    bg, ba: (3,) gyro and accelerometer biases in the body frame.
    """
    __slots__ = ()

    @classmethod
    def create(cls, p=None, v=None, q=None, s=None, bg=None, ba=None, n_legs=4):
        return cls(p=np.zeros(3) if p is None else np.array(p, dtype=float),
                   v=np.zeros(3) if v is None else np.array(v, dtype=float),
                   q=quat_identity() if q is None else quat_normalize(q),
                   s=np.zeros((n_legs, 3)) if s is None else np.array(s, dtype=float).reshape(-1, 3),
                   bg=np.zeros(3) if bg is None else np.array(bg, dtype=float),
                   ba=np.zeros(3) if ba is None else np.array(ba, dtype=float))

    @property
    def n_legs(self):
        return self.s.shape[-2]

    @property
    def index(self):
        return StateIndex.for_legs(self.n_legs)

    def take(self, i):
        """Select element i of a batched state."""
        return RobotState(*(np.array(field[i]) for field in self))

    def allclose(self, other, atol=1e-12):
        return all(np.allclose(a, b, rtol=0.0, atol=atol) for a, b in zip(self, other))


class SensorFrame(namedtuple('SensorFrame', ['t', 'gyro', 'accel', 'phi', 'dphi', 'tau', 'fz', 'contact'])):
    """One timestamped bundle of proprioceptive readings.

    gyro (rad/s) and accel (m/s^2) in the body frame; phi, dphi, tau are (N, 3) per leg
    joint angles, rates and torques; fz (N,) normal contact forces; contact (N,) bool.
    """
    __slots__ = ()

    @classmethod
    def create(cls, t, gyro, accel, phi, dphi, tau, fz, contact=None, contact_threshold=10.0):
        fz = np.array(fz, dtype=float)
        if contact is None:
            contact = fz >= contact_threshold
        return cls(t=float(t), gyro=np.array(gyro, dtype=float), accel=np.array(accel, dtype=float),
                   phi=np.array(phi, dtype=float).reshape(-1, 3), dphi=np.array(dphi, dtype=float).reshape(-1, 3),
                   tau=np.array(tau, dtype=float).reshape(-1, 3), fz=fz, contact=np.array(contact, dtype=bool))

    @property
    def n_legs(self):
        return self.phi.shape[0]


def stack_states(states):
    return RobotState(*(np.stack(fields) for fields in zip(*states)))


def retract(x, dx):
    """x ⊞ dx: additive on p, v, s and biases, q <- q ⊗ Exp(dtheta)."""
    dx = np.asarray(dx, dtype=float)
    idx = StateIndex.for_legs(x.n_legs)
    ds = dx[..., idx.s].reshape(dx.shape[:-1] + (idx.n_legs, 3))
    return RobotState(p=x.p + dx[..., idx.p],
                      v=x.v + dx[..., idx.v],
                      q=quat_mul(x.q, quat_exp(dx[..., idx.theta])),
                      s=x.s + ds,
                      bg=x.bg + dx[..., idx.bg],
                      ba=x.ba + dx[..., idx.ba])


def local(x, y):
    """y ⊟ x: the error state dx with retract(x, dx) = y."""
    s = y.s - x.s
    dtheta = quat_log(quat_mul(quat_conj(x.q), y.q))
    return np.concatenate([y.p - x.p, y.v - x.v, dtheta,
                           s.reshape(s.shape[:-2] + (-1,)),
                           y.bg - x.bg, y.ba - x.ba], -1)


def local_jacobian(x, y):
    """d local(x, retract(y, d)) / d d at d = 0."""
    idx = StateIndex.for_legs(x.n_legs)
    D = np.eye(idx.dim)
    D[idx.theta, idx.theta] = right_jacobian_inv(quat_log(quat_mul(quat_conj(x.q), y.q)))
    return D


def quat_average(q, weights, initial=None, tol=1e-12, max_iterations=20):
    """Weighted intrinsic mean of quaternions q (K, 4).

    Iterates q_bar <- q_bar ⊗ Exp(sum_k w_k Log(q_bar^-1 ⊗ q_k)) until the
    tangent-space gradient norm falls below tol.
    """
    q = np.asarray(q, dtype=float)
    weights = np.asarray(weights, dtype=float)
    q_bar = q[0] if initial is None else np.asarray(initial, dtype=float)
    for _ in range(max_iterations):
        err = quat_log(quat_mul(quat_conj(q_bar)[None, :], q))
        grad = weights.dot(err)
        q_bar = quat_mul(q_bar, quat_exp(grad))
        if np.linalg.norm(grad) < tol:
            break
    return q_bar


def mean_state(states, weights, initial=None):
    """Weighted mean of a batch of states; orientations averaged intrinsically.

    Vector blocks are averaged as offsets from `initial` (default: the first state)
    so that large-magnitude sigma weights do not cancel catastrophically.
    """
    weights = np.asarray(weights, dtype=float)
    center = states.take(0) if initial is None else initial

    def avg(a, c):
        return c + np.tensordot(weights, a - c, axes=(0, 0))
    return RobotState(p=avg(states.p, center.p), v=avg(states.v, center.v),
                      q=quat_average(states.q, weights, initial=center.q),
                      s=avg(states.s, center.s), bg=avg(states.bg, center.bg), ba=avg(states.ba, center.ba))


def symmetrize(P):
    P = np.asarray(P, dtype=float)
    return 0.5 * (P + P.T)


def floor_eigenvalues(P, floor=COVARIANCE_FLOOR):
    """Symmetrize P and lift eigenvalues below `floor`.

    Returns the repaired matrix and the minimum eigenvalue before flooring. When
    P - floor I has a Cholesky factor, P is returned untouched (apart from
    symmetrization) and the reported minimum is `floor`, a lower bound; no
    eigendecomposition is done in that case.
    """
    P = symmetrize(P)
    try:
        np.linalg.cholesky(P - floor * np.eye(P.shape[0]))
        return P, float(floor)
    except np.linalg.LinAlgError:
        pass
    eigvals, eigvecs = np.linalg.eigh(P)
    min_eig = float(eigvals[0])
    if min_eig >= floor:
        return P, min_eig
    eigvals = np.maximum(eigvals, floor)
    return symmetrize((eigvecs * eigvals).dot(eigvecs.T)), min_eig


def is_covariance(P, sym_tol=1e-12, eig_tol=-1e-10):
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        return False
    if np.max(np.abs(P - P.T)) > sym_tol * max(1.0, np.max(np.abs(P))):
        return False
    return np.linalg.eigvalsh(symmetrize(P))[0] >= eig_tol
