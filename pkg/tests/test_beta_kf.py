import numpy as np
import pytest

from conftest import quiet_scenario, random_frame, random_state
from core.beta_kf import (BetaObjective, EuclideanModel, RobotMeasurementModel, beta_gradient_hessian, beta_loss,
                          beta_update, riccati_prior, shifted_loss, solve, weight)
from core.config import NoiseConfig, SolverSettings
from core.filters import GaussianBelief, ekf_update, iekf_update
from core.kinematics import jacobian
from core.simulator import generate
from core.state import is_covariance, retract, rotation_matrix

SETTINGS = SolverSettings.from_dict()
LC = np.full(4, 0.226)


def _linear(beta, y, sigma=1.0, P=1.0):
    model = EuclideanModel(observation=np.atleast_1d(y), design=np.eye(1))
    return BetaObjective.create(model, np.zeros(1), P * np.eye(1), sigma * np.eye(1), beta)


def test_objective_constants():
    obj = _linear(0.5, 0.0, sigma=2.0)
    # c = (beta + 1) / (beta (2 pi)^(beta m / 2) det^(beta / 2))
    c = 1.5 / (0.5 * (2 * np.pi) ** 0.25 * 2.0 ** 0.25)
    C = 1.5 ** -0.5 * (2 * np.pi) ** -0.25 * 2.0 ** -0.25
    assert obj.scale == pytest.approx(c, rel=1e-12)
    assert obj.constant == pytest.approx(C, rel=1e-12)
    assert obj.weight_max == pytest.approx(0.5 * c, rel=1e-12)
    x = np.array([0.7])
    assert beta_loss(obj, x) == pytest.approx(shifted_loss(obj, x) - c + C, rel=1e-12)
    assert weight(obj, x) == pytest.approx(0.5 * c * np.exp(-0.25 * 0.49 / 2.0), rel=1e-12)


def test_small_beta_recovers_the_kalman_update():
    obj = _linear(1e-12, 3.0, sigma=0.5, P=2.0)
    x, diag = solve(obj, SETTINGS)
    assert diag.converged
    np.testing.assert_allclose(x, 2.0 / 2.5 * 3.0, atol=1e-8)


def test_gross_outlier_is_ignored():
    obj = _linear(0.5, 100.0)
    x, diag = solve(obj, SETTINGS)
    assert abs(x[0]) < 1e-6
    assert diag.weight < 1e-100


def test_moderate_residual_is_downweighted_not_dropped():
    x_beta, _ = solve(_linear(0.5, 2.0), SETTINGS)
    x_kf, _ = solve(_linear(1e-12, 2.0), SETTINGS)
    assert 0.0 < x_beta[0] < x_kf[0]


def test_loss_history_never_increases(rng):
    obj = _linear(0.3, 2.5, sigma=0.2)
    _, diag = solve(obj, SETTINGS)
    assert np.all(np.diff(diag.history) <= 0.0)


def test_gradient_matches_finite_differences(rng, geometry):
    noise = NoiseConfig.from_dict(dict(beta=0.01))
    for _ in range(20):
        prior = random_state(rng)
        frame = random_frame(rng)
        model = RobotMeasurementModel(frame, LC, geometry)
        x = retract(prior, 1e-2 * rng.normal(size=27))
        # keep d2 moderate so the weight does not underflow
        x = x._replace(s=x.s + (model.residual(x)[:12].reshape(4, 3) * 0.99))
        sigma = np.diag(np.r_[np.full(12, 0.05), np.full(12, 0.5)]) ** 2 * 1e2
        obj = BetaObjective.create(model, prior, 1e-2 * np.eye(27), sigma, noise.beta)
        gradient, hessian = beta_gradient_hessian(obj, x)
        h = 1e-6
        numeric = np.zeros(27)
        for i in range(27):
            e = np.zeros(27)
            e[i] = h
            numeric[i] = (shifted_loss(obj, retract(x, e)) - shifted_loss(obj, retract(x, -e))) / (2 * h)
        np.testing.assert_allclose(gradient, numeric, rtol=1e-5, atol=1e-6 * np.abs(numeric).max())
        assert is_covariance(hessian, eig_tol=0.0)


def test_scalar_riccati_fixed_point():
    f, h, q, r = 0.9, 1.0, 0.1, 0.5
    P = np.eye(1)
    for _ in range(500):
        P = riccati_prior(P, f * np.eye(1), h * np.eye(1), q * np.eye(1), r * np.eye(1), floor=0.0)
    b = r - q * h * h - f * f * r
    closed = (-b + np.sqrt(b * b + 4.0 * h * h * q * r)) / (2.0 * h * h)
    assert P[0, 0] == pytest.approx(closed, abs=1e-10)


def test_riccati_with_identities_and_no_noise():
    n = 27
    P = riccati_prior(np.eye(n), np.eye(n), np.zeros((24, n)), np.zeros((n, n)), np.eye(24), floor=0.0)
    np.testing.assert_allclose(P, np.eye(n), atol=1e-15)


def test_beta_update_at_truth_stays_there(standing, geometry):
    dataset, truth = standing
    noise = NoiseConfig.from_dict()
    x_true = truth.states.take(40)
    update = beta_update(x_true, 1e-4 * np.eye(27), dataset[40], truth.params[40], noise, geometry, SETTINGS)
    assert update.diagnostics.converged
    assert update.state.allclose(x_true, atol=1e-10)
    assert update.jacobian.shape == (24, 27)
    assert update.diagnostics.weight == pytest.approx(update.objective.weight_max, rel=1e-9)


def test_vanishing_beta_matches_iterated_ekf(rng, standing, geometry):
    dataset, truth = standing
    noise = NoiseConfig.from_dict(dict(beta=1e-12))
    for k in (10, 200, 700):
        prior = retract(truth.states.take(k), 2e-3 * rng.normal(size=27))
        P = np.diag(np.r_[np.full(9, 1e-4), np.full(12, 1e-6), np.full(6, 1e-8)])
        update = beta_update(prior, P, dataset[k], truth.params[k], noise, geometry, SETTINGS)
        iekf = iekf_update(GaussianBelief(prior, P), dataset[k], truth.params[k], noise, geometry)
        assert update.state.allclose(iekf.mean, atol=1e-6)


def test_scalar_riccati_fixed_point_of_a_random_walk():
    q, r = 0.2, 0.7
    P = np.eye(1)
    for _ in range(500):
        P = riccati_prior(P, np.eye(1), np.eye(1), q * np.eye(1), r * np.eye(1), floor=0.0)
    assert P[0, 0] == pytest.approx((q + np.sqrt(q * q + 4.0 * q * r)) / 2.0, abs=1e-12)


def test_riccati_prior_stays_positive_semidefinite(rng):
    n, m = 6, 4
    for _ in range(1000):
        A = rng.normal(size=(n, n))
        P = A.dot(A.T) + 1e-6 * np.eye(n)
        B = rng.normal(size=(n, n))
        Q = 1e-2 * B.dot(B.T)
        C = rng.normal(size=(m, m))
        sigma = C.dot(C.T) + 1e-3 * np.eye(m)
        F, H = rng.normal(size=(n, n)) / np.sqrt(n), rng.normal(size=(m, n))
        P_next = riccati_prior(P, F, H, Q, sigma)
        assert is_covariance(P_next)
        E = 1e-13 * rng.normal(size=(n, n))
        np.testing.assert_allclose(riccati_prior(P + E - E.T, F, H, Q, sigma), P_next,
                                   rtol=1e-9, atol=1e-12 * np.abs(P_next).max())


def test_objective_is_bounded_by_the_scale(rng):
    for beta in (1e-3, 0.1, 0.9):
        design = rng.normal(size=(3, 3))
        obj = BetaObjective.create(EuclideanModel(observation=rng.normal(size=3), design=design), np.zeros(3),
                                   np.eye(3), np.diag([0.5, 1.0, 2.0]), beta)
        samples = [np.linalg.solve(design, obj.model.observation)] + list(3.0 * rng.normal(size=(2000, 3)))
        gap = np.array([beta_loss(obj, x) - obj.prior_term(x)[1] - obj.constant for x in samples])
        assert np.all(gap < 0.0)
        assert np.abs(gap).max() <= obj.scale * (1.0 + 1e-12)
        assert np.abs(gap[0]) == pytest.approx(obj.scale, rel=1e-12)


def test_weight_strictly_decreases_with_the_residual():
    obj = _linear(0.5, 0.0)
    weights = [weight(obj, np.array([x])) for x in np.linspace(0.0, 10.0, 101)]
    assert np.all(np.diff(weights) < 0.0)
    assert weights[0] == pytest.approx(obj.weight_max, rel=1e-12)


def test_gap_to_the_kalman_update_shrinks_with_beta():
    settings = SolverSettings.from_dict(dict(gradient_tol=1e-12, step_tol=1e-14))
    gaps = []
    for eps in (1e-6, 1e-9, 1e-12):
        x, diag = solve(_linear(eps, 100.0), settings)
        assert diag.converged
        gaps.append(abs(x[0] - 50.0))
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-6


def _slipping(frame, truth, k, geometry, leg=1, speed=(0.5, 0.0, 0.0)):
    """`frame` with the joint rates of `leg` adding `speed` (world) to its velocity residual."""
    R = rotation_matrix(truth.states.q[k])
    dphi = frame.dphi.copy()
    dphi[leg] += np.linalg.solve(jacobian(frame.phi[leg], geometry[leg], truth.params[k][leg]),
                                 R.T.dot(speed))
    return frame._replace(dphi=dphi)


def test_slipping_leg_moves_the_robust_update_less(standing, geometry):
    dataset, truth = standing
    k = 60
    noise = NoiseConfig.from_dict()
    prior = GaussianBelief(truth.states.take(k), 1e-6 * np.eye(27))
    frame = _slipping(dataset[k], truth, k, geometry)
    qekf = ekf_update(prior, frame, truth.params[k], noise, geometry)
    robust = beta_update(prior.mean, prior.cov, frame, truth.params[k], noise, geometry, SETTINGS)
    jump_qekf = np.linalg.norm(qekf.mean.v - prior.mean.v)
    jump_robust = np.linalg.norm(robust.state.v - prior.mean.v)
    assert jump_qekf > 5e-4
    assert jump_robust < 0.5 * jump_qekf


@pytest.mark.slow
def test_vanishing_beta_follows_iterated_ekf_along_a_trot(rng, robot, geometry):
    dataset, truth = generate(quiet_scenario(duration=10.0), robot)
    noise = NoiseConfig.from_dict(dict(beta=1e-12))
    P = np.diag(np.r_[np.full(9, 1e-4), np.full(12, 1e-6), np.full(6, 1e-8)])
    for k in range(len(dataset)):
        prior = retract(truth.states.take(k), 2e-3 * rng.normal(size=27))
        update = beta_update(prior, P, dataset[k], truth.params[k], noise, geometry, SETTINGS)
        iekf = iekf_update(GaussianBelief(prior, P), dataset[k], truth.params[k], noise, geometry)
        assert update.state.allclose(iekf.mean, atol=1e-6), 'frame %d' % k
