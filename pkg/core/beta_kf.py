# =========================================================================================
# Robust MAP update under the beta-divergence.
# For a measurement residual r(x) with covariance Sigma (dim m), a prior mean x0 with
# covariance P and e(x) = local(x0, x):
#   l_h(x) = -c exp(-beta/2 d2(x)) + C,   d2 = r^T Sigma^-1 r
#   c      = (beta + 1) / (beta (2 pi)^(beta m / 2) det(Sigma)^(beta / 2))
#   C      = (1 + beta)^(-m / 2) (2 pi)^(-beta m / 2) det(Sigma)^(-beta / 2)
#   l_f(x) = 1/2 e^T P^-1 e
# The optimizer minimizes c (1 - exp(-beta/2 d2)) + l_f, which differs from l_h + l_f
# by a constant and keeps full precision as beta -> 0.
# w(x) = beta c exp(-beta/2 d2) is the weight every measurement row gets in the
# gradient w H^T Sigma^-1 r.
# =========================================================================================

from collections import namedtuple
import logging

import numpy as np
from scipy import linalg

from .exceptions import NumericalFailureError
from .measurement import effective_covariance, leg_row_mask, leg_terms, measure, measurement_jacobian
from .state import COVARIANCE_FLOOR, floor_eigenvalues, local, local_jacobian, retract

logger = logging.getLogger(__name__)

MAX_DAMPING = 1e12


class RobotMeasurementModel(namedtuple('RobotMeasurementModel', ['frame', 'params', 'geometry', 'terms'])):
    """Leg residual measurement on the robot state manifold.

    `terms` holds the leg kinematics of the frame, evaluated once on construction.
    """
    __slots__ = ()

    def __new__(cls, frame, params, geometry, terms=None):
        if terms is None:
            terms = leg_terms(frame, params, geometry)
        return super(RobotMeasurementModel, cls).__new__(cls, frame, params, geometry, terms)

    def residual(self, x):
        return measure(x, self.frame, self.params, self.geometry, self.terms)

    def jacobian(self, x):
        return measurement_jacobian(x, self.frame, self.params, self.geometry, self.terms)

    @staticmethod
    def retract(x, dx):
        return retract(x, dx)

    @staticmethod
    def local(x0, x):
        return local(x0, x)

    @staticmethod
    def local_jacobian(x0, x):
        return local_jacobian(x0, x)


class EuclideanModel(namedtuple('EuclideanModel', ['observation', 'design'])):
    """Linear residual design x - observation on a vector space."""
    __slots__ = ()

    def residual(self, x):
        return np.asarray(self.design).dot(x) - self.observation

    def jacobian(self, x):
        return np.asarray(self.design, dtype=float)

    @staticmethod
    def retract(x, dx):
        return x + dx

    @staticmethod
    def local(x0, x):
        return x - x0

    @staticmethod
    def local_jacobian(x0, x):
        return np.eye(np.size(x))


class BetaObjective(namedtuple('BetaObjective', [
        'model', 'prior', 'prior_cov', 'sigma', 'beta', 'm', 'scale', 'constant', 'log_weight_max',
        'sigma_factor', 'sigma_inv', 'prior_factor'])):
    """Frozen inputs of one robust update; build with BetaObjective.create."""
    __slots__ = ()

    @classmethod
    def create(cls, model, prior, prior_cov, sigma, beta):
        sigma = np.asarray(sigma, dtype=float)
        prior_cov = np.asarray(prior_cov, dtype=float)
        m = sigma.shape[0]
        try:
            sigma_factor = linalg.cho_factor(sigma)
            prior_factor = linalg.cho_factor(prior_cov)
        except linalg.LinAlgError as e:
            raise NumericalFailureError('objective covariance is not positive definite: %s' % e)
        logdet = 2.0 * np.sum(np.log(np.diag(sigma_factor[0])))
        sigma_inv = linalg.cho_solve(sigma_factor, np.eye(m))
        log_norm = -0.5 * beta * m * np.log(2.0 * np.pi) - 0.5 * beta * logdet
        log_weight_max = np.log1p(beta) + log_norm
        return cls(model=model, prior=prior, prior_cov=prior_cov, sigma=sigma, beta=float(beta), m=m,
                   scale=np.exp(log_weight_max) / beta,
                   constant=np.exp(-0.5 * m * np.log1p(beta) + log_norm),
                   log_weight_max=log_weight_max, sigma_factor=sigma_factor,
                   sigma_inv=0.5 * (sigma_inv + sigma_inv.T), prior_factor=prior_factor)

    @property
    def weight_max(self):
        return np.exp(self.log_weight_max)

    def mahalanobis(self, x):
        r = self.model.residual(x)
        return r, float(r.dot(self.sigma_inv.dot(r)))

    def prior_term(self, x):
        e = self.model.local(self.prior, x)
        return e, 0.5 * float(e.dot(linalg.cho_solve(self.prior_factor, e)))


SolveDiagnostics = namedtuple('SolveDiagnostics', ['iterations', 'gradient_norm', 'weight', 'converged', 'history'])


def weight(obj, x):
    _, d2 = obj.mahalanobis(x)
    return float(np.exp(obj.log_weight_max - 0.5 * obj.beta * d2))


def beta_loss(obj, x):
    """l_h(x) + l_f(x), including the x-independent constant."""
    _, d2 = obj.mahalanobis(x)
    _, lf = obj.prior_term(x)
    return -obj.scale * np.exp(-0.5 * obj.beta * d2) + obj.constant + lf


def shifted_loss(obj, x):
    """beta_loss(x) + c - C; the quantity minimized by solve."""
    _, d2 = obj.mahalanobis(x)
    _, lf = obj.prior_term(x)
    return -obj.scale * np.expm1(-0.5 * obj.beta * d2) + lf


def beta_gradient_hessian(obj, x):
    """Gradient over the tangent space and the Gauss-Newton Hessian approximation.

    The curvature of w(x) itself is dropped.
    """
    r, d2 = obj.mahalanobis(x)
    H = obj.model.jacobian(x)
    e, _ = obj.prior_term(x)
    D = obj.model.local_jacobian(obj.prior, x)
    w = np.exp(obj.log_weight_max - 0.5 * obj.beta * d2)
    Si_H = obj.sigma_inv.dot(H)
    Pi_D = linalg.cho_solve(obj.prior_factor, D)
    gradient = w * Si_H.T.dot(r) + Pi_D.T.dot(e)
    hessian = w * H.T.dot(Si_H) + D.T.dot(Pi_D)
    return gradient, 0.5 * (hessian + hessian.T)


def solve(obj, settings):
    """Levenberg-Marquardt damped Gauss-Newton on the shifted loss, started at the prior mean.

    A step is only taken when it does not increase the loss. Returns the final
    iterate and SolveDiagnostics; `converged` is False after max_iterations without meeting a tolerance.
    """
    x = obj.prior
    loss = shifted_loss(obj, x)
    history = [loss]
    damping = settings.damping_init
    converged = False
    accepted = True
    iterations = 0
    gradient_norm = np.inf
    moved = True
    for _ in range(settings.max_iterations):
        gradient, hessian = beta_gradient_hessian(obj, x)
        gradient_norm = float(np.linalg.norm(gradient))
        moved = False
        if gradient_norm < settings.gradient_tol:
            converged = True
            break
        diag = np.diag(np.diag(hessian))
        accepted = small = False
        while damping <= MAX_DAMPING:
            try:
                step = linalg.solve(hessian + damping * diag, -gradient, assume_a='pos')
            except linalg.LinAlgError:
                damping *= settings.damping_scale
                continue
            candidate = obj.model.retract(x, step)
            candidate_loss = shifted_loss(obj, candidate)
            small = np.linalg.norm(step) < settings.step_tol
            if candidate_loss <= loss:
                x, loss = candidate, candidate_loss
                damping = max(damping / settings.damping_scale, settings.damping_init)
                accepted = moved = True
            if accepted or small:
                break
            damping *= settings.damping_scale
        if accepted:
            iterations += 1
            history.append(loss)
        if small:
            converged = True
            break
        if not accepted:
            logger.debug('damping exhausted after %d iterations, gradient norm %.3e', iterations, gradient_norm)
            break
    if moved and (converged or not accepted):
        gradient_norm = float(np.linalg.norm(beta_gradient_hessian(obj, x)[0]))
    return x, SolveDiagnostics(iterations=iterations, gradient_norm=gradient_norm, weight=weight(obj, x),
                               converged=converged, history=history)


def riccati_prior(P_prev, F, H, Q, sigma, floor=COVARIANCE_FLOOR, return_min_eig=False):
    """P_next = Q + F P F^T - F P H^T (H P H^T + Sigma)^-1 H P F^T, symmetrized and floored."""
    P_prev = 0.5 * (P_prev + P_prev.T)
    FP = F.dot(P_prev)
    S = H.dot(P_prev).dot(H.T) + sigma
    try:
        gain = linalg.solve(S, H.dot(FP.T), assume_a='pos').T
    except (linalg.LinAlgError, ValueError) as e:
        raise NumericalFailureError('Riccati inner matrix is not invertible: %s' % e)
    P_next, min_eig = floor_eigenvalues(Q + FP.dot(F.T) - gain.dot(H.dot(FP.T)), floor)
    if return_min_eig:
        return P_next, min_eig
    return P_next


BetaUpdate = namedtuple('BetaUpdate', ['state', 'diagnostics', 'jacobian', 'sigma', 'objective'])


def beta_update(prior, P, frame, params, noise, geometry, settings, inflation=1e6, contact=None):
    """Build the objective of one frame and solve it.

    Also returns H at the solution and the inflated Sigma, the inputs of the next Riccati step.
    """
    sigma = effective_covariance(noise.measurement_covariance(), leg_row_mask(frame, contact), inflation)
    model = RobotMeasurementModel(frame, params, geometry)
    obj = BetaObjective.create(model, prior, P, sigma, noise.beta)
    x, diagnostics = solve(obj, settings)
    if not diagnostics.converged:
        logger.debug('t=%.4f: robust update stopped after %d iterations (|g| = %.3e)',
                     frame.t, diagnostics.iterations, diagnostics.gradient_norm)
    return BetaUpdate(state=x, diagnostics=diagnostics, jacobian=model.jacobian(x), sigma=sigma, objective=obj)
