"""Baseline state filters and the calf-length parameter filter.

Covariances live on the error state (see core.state). Every covariance produced
here is symmetrized and eigen-floored before it is returned.
"""

from collections import namedtuple
import logging

import numpy as np
from filterpy.kalman import MerweScaledSigmaPoints, unscented_transform
from scipy import linalg

from .exceptions import NumericalFailureError, SingularConfigurationError
from .kinematics import fk, is_well_conditioned, jacobian, statics_normal_force
from .measurement import (effective_covariance, leg_row_mask, leg_rows, leg_terms, measure,
                          measurement_jacobian)
from .process import process_jacobian, propagate
from .state import (COVARIANCE_FLOOR, floor_eigenvalues, local, local_jacobian,
                    mean_state, retract, rotation_matrix, skew)

logger = logging.getLogger(__name__)


class GaussianBelief(namedtuple('GaussianBelief', ['mean', 'cov', 'info'])):
    """Mean (RobotState or parameter vector) with covariance over its tangent space.

    `info` carries per-step diagnostics such as gate firings or skipped updates.
    """
    __slots__ = ()

    def __new__(cls, mean, cov, info=None):
        return super(GaussianBelief, cls).__new__(cls, mean, np.asarray(cov, dtype=float), info or {})


SigmaPointSet = namedtuple('SigmaPointSet', ['points', 'wm', 'wc'])


def sigma_points(cov, ut, center=None):
    """Merwe scaled sigma points of N(center, cov); center defaults to the origin of the tangent space."""
    cov = np.asarray(cov, dtype=float)
    n = cov.shape[0]
    center = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    merwe = MerweScaledSigmaPoints(n, alpha=ut.alpha, beta=ut.beta, kappa=ut.kappa)
    try:
        points = merwe.sigma_points(center, cov)
    except np.linalg.LinAlgError as e:
        raise NumericalFailureError('sigma point factorization failed: %s' % e)
    return SigmaPointSet(points=points, wm=merwe.Wm, wc=merwe.Wc)


def _solve_gain(cross, S, what):
    """cross S^-1 for symmetric S."""
    try:
        return linalg.solve(S, cross.T, assume_a='pos').T
    except (np.linalg.LinAlgError, linalg.LinAlgError, ValueError) as e:
        raise NumericalFailureError('%s innovation covariance is not invertible: %s' % (what, e))


def _floored(P, floor, info=None):
    P, min_eig = floor_eigenvalues(P, floor)
    if info is not None:
        info['min_eig'] = min(min_eig, info.get('min_eig', np.inf))
    return P


def reset_feet(belief, frame, params, geometry, legs, reset_std, floor=COVARIANCE_FLOOR):
    """Re-anchor the feet of `legs` at p + R fk(phi; lc) on a prior belief.

    The covariance is carried through the reset Jacobian plus an isotropic reset variance.
    """
    legs = list(legs)
    if not legs:
        return belief
    x = belief.mean
    idx = x.index
    R = rotation_matrix(x.q)
    s = x.s.copy()
    G = np.eye(idx.dim)
    added = np.zeros((idx.dim, idx.dim))
    for leg in legs:
        f = fk(frame.phi[leg], geometry[leg], params[leg])
        s[leg] = x.p + R.dot(f)
        rows = idx.foot(leg)
        G[rows, :] = 0.0
        G[rows, idx.p] = np.eye(3)
        G[rows, idx.theta] = -R.dot(skew(f))
        added[rows, rows] = reset_std ** 2 * np.eye(3)
    cov = _floored(G.dot(belief.cov).dot(G.T) + added, floor)
    info = dict(belief.info, touchdown=legs)
    return GaussianBelief(x._replace(s=s), cov, info)


def ekf_predict(belief, u, noise, floor=COVARIANCE_FLOOR):
    x = belief.mean
    F = process_jacobian(x, u, noise.g)
    info = {}
    cov = _floored(F.dot(belief.cov).dot(F.T) + noise.process_covariance(x.q), floor, info)
    return GaussianBelief(propagate(x, u, noise.g), cov, info)


def ekf_update(prior, frame, params, noise, geometry, inflation=1e6, floor=COVARIANCE_FLOOR):
    """One Kalman update against y = 0 with the Joseph-form covariance."""
    x, P = prior.mean, prior.cov
    terms = leg_terms(frame, params, geometry)
    z = measure(x, frame, params, geometry, terms)
    H = measurement_jacobian(x, frame, params, geometry, terms)
    sigma = effective_covariance(noise.measurement_covariance(), leg_row_mask(frame), inflation)
    S = H.dot(P).dot(H.T) + sigma
    K = _solve_gain(P.dot(H.T), S, 'EKF')
    dx = K.dot(-z)
    A = np.eye(P.shape[0]) - K.dot(H)
    info = dict(prior.info)
    cov = _floored(A.dot(P).dot(A.T) + K.dot(sigma).dot(K.T), floor, info)
    return GaussianBelief(retract(x, dx), cov, info)


def qekf_step(belief, u, frame, params, noise, geometry, inflation=1e6, floor=COVARIANCE_FLOOR,
              touchdown=(), reset_std=0.0):
    prior = ekf_predict(belief, u, noise, floor)
    prior = reset_feet(prior, frame, params, geometry, touchdown, reset_std, floor)
    return ekf_update(prior, frame, params, noise, geometry, inflation, floor)


def iekf_update(prior, frame, params, noise, geometry, inflation=1e6, floor=COVARIANCE_FLOOR,
                max_iterations=50, tol=1e-12):
    """Iterated EKF update, relinearizing h and the prior chart at every iterate.

    Finds the minimizer of 1/2 |h(x)|^2_Sigma^-1 + 1/2 |x - prior|^2_P^-1.
    """
    x0, P = prior.mean, prior.cov
    sigma = effective_covariance(noise.measurement_covariance(), leg_row_mask(frame), inflation)
    terms = leg_terms(frame, params, geometry)
    x = x0
    n = P.shape[0]
    for iteration in range(1, max_iterations + 1):
        z = measure(x, frame, params, geometry, terms)
        H = measurement_jacobian(x, frame, params, geometry, terms)
        e = local(x0, x)
        D_inv = np.linalg.inv(local_jacobian(x0, x))
        Hs = H.dot(D_inv)
        S = Hs.dot(P).dot(Hs.T) + sigma
        K = _solve_gain(P.dot(Hs.T), S, 'IEKF')
        eta = K.dot(Hs.dot(e) - z)
        delta = D_inv.dot(eta - e)
        x = retract(x, delta)
        if np.linalg.norm(delta) < tol:
            break
    A = np.eye(n) - K.dot(Hs)
    cov = _floored(A.dot(P).dot(A.T) + K.dot(sigma).dot(K.T), floor)
    return GaussianBelief(x, cov, dict(prior.info, iterations=iteration))


def _unscented_propagate(belief, u, noise, ut, floor):
    x = belief.mean
    sp = sigma_points(belief.cov, ut)
    moved = propagate(retract(x, sp.points), u, noise.g)
    center = propagate(x, u, noise.g)
    mean = mean_state(moved, sp.wm, initial=center)
    dev = local(mean, moved)
    cov = (dev * sp.wc[:, None]).T.dot(dev) + noise.process_covariance(x.q)
    info = {}
    return GaussianBelief(mean, _floored(cov, floor, info), info)


def _gate(nu, S, contact, n_legs, threshold, mode):
    rejected = np.zeros(n_legs, dtype=bool)
    if mode == 'full':
        rows = np.flatnonzero(leg_row_mask(None, contact))
        if rows.size:
            d2 = nu[rows].dot(np.linalg.solve(S[np.ix_(rows, rows)], nu[rows]))
            if not d2 <= threshold:
                rejected[:] = contact
        return rejected
    for leg in np.flatnonzero(contact):
        rows = leg_rows(leg, n_legs)
        d2 = nu[rows].dot(np.linalg.solve(S[np.ix_(rows, rows)], nu[rows]))
        rejected[leg] = not d2 <= threshold
    return rejected


def ukf_or_step(belief, u, frame, params, noise, threshold, geometry, ut, inflation=1e6,
                floor=COVARIANCE_FLOOR, gate='per_leg', touchdown=(), reset_std=0.0):
    """Unscented predict/update with Mahalanobis rejection of leg measurements.

    A contact leg whose innovation distance exceeds `threshold` gets its rows inflated
    like a swinging leg for this step.
    """
    prior = _unscented_propagate(belief, u, noise, ut, floor)
    prior = reset_feet(prior, frame, params, geometry, touchdown, reset_std, floor)
    x_bar, P_bar = prior.mean, prior.cov
    n_legs = len(geometry)

    sp = sigma_points(P_bar, ut)
    Z = measure(retract(x_bar, sp.points), frame, params, geometry)
    z_bar = Z[0] + sp.wm.dot(Z - Z[0])
    dz = Z - z_bar
    Pzz = (dz * sp.wc[:, None]).T.dot(dz)
    Pxz = (sp.points * sp.wc[:, None]).T.dot(dz)
    nu = -z_bar

    sigma = noise.measurement_covariance()
    contact = np.asarray(frame.contact, dtype=bool)
    S = Pzz + effective_covariance(sigma, leg_row_mask(frame), inflation)
    rejected = _gate(nu, S, contact, n_legs, threshold, gate)
    if rejected.any():
        logger.debug('t=%.4f: rejected legs %s', frame.t, np.flatnonzero(rejected).tolist())
        S = Pzz + effective_covariance(sigma, leg_row_mask(frame, contact & ~rejected), inflation)

    K = _solve_gain(Pxz, S, 'UKF')
    info = dict(prior.info, rejected=rejected)
    cov = _floored(P_bar - K.dot(S).dot(K.T), floor, info)
    return GaussianBelief(retract(x_bar, K.dot(nu)), cov, info)


def usable_legs(frame, params, geometry):
    """Contact legs whose Jacobian at the current calf lengths is well conditioned."""
    usable = []
    for leg, geo in enumerate(geometry):
        if frame.contact[leg] and is_well_conditioned(jacobian(frame.phi[leg], geo, params[leg])):
            usable.append(leg)
    return usable


def ukf_param_step(belief, frame, geometry, noise, ut, bounds=(1e-3, 1.0), floor=COVARIANCE_FLOOR):
    """Random-walk predict and statics update of the calf lengths.

    The observation is the measured normal force of each usable leg against the
    force predicted from the joint torques. The state belief never enters here.
    """
    mean = np.asarray(belief.mean, dtype=float)
    P_bar = belief.cov + noise.param_walk_covariance()
    legs = usable_legs(frame, mean, geometry)
    if not legs:
        return GaussianBelief(mean, P_bar, dict(skipped=True, legs=[]))

    sp = sigma_points(P_bar, ut, center=mean)
    try:
        Z = np.stack([statics_normal_force(frame.phi[leg], geometry[leg], sp.points[:, leg], frame.tau[leg])
                      for leg in legs], -1)
    except SingularConfigurationError as e:
        logger.debug('t=%.4f: parameter update skipped, %s', frame.t, e)
        return GaussianBelief(mean, P_bar, dict(skipped=True, legs=[]))
    z_bar, S = unscented_transform(Z, sp.wm, sp.wc, noise_cov=noise.statics_covariance()[np.ix_(legs, legs)])
    Pxz = ((sp.points - mean) * sp.wc[:, None]).T.dot(Z - z_bar)
    K = _solve_gain(Pxz, S, 'parameter')
    innovation = frame.fz[legs] - z_bar
    updated = np.clip(mean + K.dot(innovation), bounds[0], bounds[1])
    cov = _floored(P_bar - K.dot(S).dot(K.T), floor)
    return GaussianBelief(updated, cov, dict(skipped=False, legs=legs, innovation=innovation))
