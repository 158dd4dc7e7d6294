from collections import namedtuple
import logging

import numpy as np
from torch.utils.data import DataLoader
from ignite.engine import Engine, Events
from tensorboardX import SummaryWriter
from tqdm import tqdm

from .beta_kf import beta_update, riccati_prior
from .config import RobotConfig
from .exceptions import InvalidArgumentError, NumericalFailureError, SequencingError
from .filters import GaussianBelief, ekf_predict, ekf_update, reset_feet, ukf_or_step, ukf_param_step
from .kinematics import check_calf_lengths, fk
from .process import ControlInput, process_jacobian, propagate
from .state import RobotState, error_dim, floor_eigenvalues, is_covariance, stack_states

logger = logging.getLogger(__name__)

EstimatorOutput = namedtuple('EstimatorOutput', ['t', 'state', 'params', 'diagnostics'])


class EstimatorRun(namedtuple('EstimatorRun', ['outputs', 'failures'])):
    """Per-frame outputs of one run plus (frame index, message) for every failed frame."""
    __slots__ = ()

    def times(self):
        return np.array([out.t for out in self.outputs])

    def states(self):
        return stack_states([out.state for out in self.outputs])

    def params(self):
        return np.stack([out.params for out in self.outputs])


def _keep_frame(frame):
    return frame


def initial_state(frame, params, geometry):
    """Start at the origin, level, at rest, with feet placed by the first frame's kinematics."""
    feet = np.stack([fk(frame.phi[i], geo, params[i]) for i, geo in enumerate(geometry)])
    return RobotState.create(s=feet, n_legs=len(geometry))


class DualEstimator(object):
    def __init__(self, config, geometry, x0, params0=None, P0=None, **kwargs):
        """
        Required Arguments:
            - config: EstimatorConfig; selects the variant and its noise/solver settings.
            - geometry: tuple of LegGeometry, one per leg.
            - x0: initial RobotState.
        Optional Arguments:
            - params0: initial calf lengths; defaults to config.initial_calf_length, or the
              nominal calf_length when that is not set, for every leg.
            - P0: initial error covariance of x0; defaults to config.initial_cov.
            - calf_bounds: (low, high) range of the calf-length estimate; params0 must lie inside.
            - calf_length: nominal calf length of the robot.
            - log_path: tensorboard directory for per-frame diagnostics; nothing is written when None.
            - progress: show a tqdm progress bar in run().

        The first propagation is deferred to the second frame: no P_{1|0} is formed here
        and step() on the first frame returns x0 unchanged.
        """
        self.config = config
        self.geometry = tuple(geometry)
        self.noise = config.noise
        self.n_legs = len(self.geometry)
        if self.noise.n_legs != self.n_legs:
            raise InvalidArgumentError('noise model has %d legs, geometry %d' % (self.noise.n_legs, self.n_legs))

        robot = RobotConfig.from_dict()
        self.calf_bounds = kwargs.pop('calf_bounds', robot.calf_bounds)
        nominal = kwargs.pop('calf_length', robot.calf_length)
        self.log_path = kwargs.pop('log_path', None)
        self.progress = kwargs.pop('progress', False)
        if kwargs:
            raise InvalidArgumentError('unknown options: %s' % ', '.join(sorted(kwargs)))

        dim = error_dim(self.n_legs)
        P0 = config.initial_cov.matrix(self.n_legs) if P0 is None else np.asarray(P0, dtype=float)
        if P0.shape != (dim, dim):
            raise InvalidArgumentError('initial covariance must be %dx%d, got %s' % (dim, dim, P0.shape))
        if not is_covariance(P0) or np.linalg.eigvalsh(P0)[0] <= 0.0:
            raise InvalidArgumentError('initial covariance must be symmetric positive definite')
        if params0 is None:
            params0 = config.initial_lengths(self.n_legs, nominal)
        params0 = check_calf_lengths(params0, self.calf_bounds)
        if params0.shape != (self.n_legs,):
            raise InvalidArgumentError('expected %d calf lengths, got shape %s' % (self.n_legs, params0.shape))

        self.state = GaussianBelief(x0, P0)
        self.param_belief = GaussianBelief(params0, config.param_std ** 2 * np.eye(self.n_legs))
        # calf lengths seen by the state filter; a stance leg keeps the one from its touchdown
        self.stance_lengths = params0.copy()
        # robust variants: state.cov holds the last prior P_{t|t-1}; pending holds (H_t, Sigma_t)
        self.pending = None
        self.prior_cov = None
        self.last_frame = None
        self.last_contact = None
        self.frame_index = 0
        self._fallback = None
        self.writer = None
        self.progress_bar = None

    @property
    def variant(self):
        return self.config.variant

    def _contacts(self, frame):
        return frame._replace(contact=np.asarray(frame.fz) >= self.config.contact_threshold)

    def _output(self, frame, diagnostics):
        return EstimatorOutput(t=frame.t, state=self.state.mean, params=np.array(self.param_belief.mean),
                               diagnostics=diagnostics)

    def _commit(self, frame, state, pending, param_belief, lengths=None):
        self.state = state
        self.pending = pending
        self.param_belief = param_belief
        if lengths is not None:
            self.stance_lengths = lengths
        self.last_frame = frame
        self.last_contact = frame.contact
        self.frame_index += 1
        self._fallback = None

    def control(self, frame):
        """IMU of the previous frame applied over the gap to `frame`."""
        if self.last_frame is None:
            return None
        dt = frame.t - self.last_frame.t
        if not dt > 0.0:
            raise SequencingError('frame %d: timestamp %.9f does not follow %.9f'
                                  % (self.frame_index, frame.t, self.last_frame.t))
        return ControlInput.from_frame(self.last_frame, dt)

    def step(self, frame, u=None):
        """Process one frame and return its EstimatorOutput.

        The first frame only records the contacts and emits x0 with empty diagnostics;
        from the second frame on, the IMU of the previous frame drives the prediction.
        """
        frame = self._contacts(frame)
        if self.last_frame is not None and not frame.t > self.last_frame.t:
            raise SequencingError('frame %d: timestamp %.9f does not follow %.9f'
                                  % (self.frame_index, frame.t, self.last_frame.t))
        if self.last_frame is None:
            self._commit(frame, self.state, None, self.param_belief)
            return self._output(frame, {})
        if u is None:
            u = self.control(frame)
        try:
            return self._advance(frame, u)
        except NumericalFailureError as e:
            if e.frame_index is None:
                raise NumericalFailureError(str(e), frame_index=self.frame_index)
            raise

    def recover(self, frame, u=None, message=''):
        """Keep the predicted state for a frame whose update failed."""
        frame = self._contacts(frame)
        if self._fallback is not None:
            state, param_belief = self._fallback
        else:
            state, param_belief = self.state, self.param_belief
        self._commit(frame, state, None, param_belief, self._kinematic_lengths(frame, param_belief.mean))
        return self._output(frame, dict(failed=message))

    def _touchdown(self, frame):
        return np.flatnonzero(frame.contact & ~self.last_contact).tolist()

    def _kinematic_lengths(self, frame, estimate):
        """Calf lengths for the leg measurement of `frame`.

        A leg that stays in contact keeps the length its foot was anchored with at
        touchdown; swing and touchdown legs take the current estimate.
        """
        if self.last_contact is None:
            return np.array(estimate, dtype=float)
        held = frame.contact & self.last_contact
        return np.where(held, self.stance_lengths, estimate)

    def _advance(self, frame, u):
        cfg = self.config
        noise = self.noise
        floor = cfg.covariance_floor
        diagnostics = {}

        if cfg.is_dual:
            param_belief = ukf_param_step(self.param_belief, frame, self.geometry, noise, cfg.ut,
                                          self.calf_bounds, floor)
            diagnostics['param_skipped'] = param_belief.info['skipped']
        else:
            param_belief = self.param_belief
        params = self._kinematic_lengths(frame, param_belief.mean)
        touchdown = self._touchdown(frame)
        diagnostics['touchdown'] = len(touchdown)

        if self.variant in ('QEKF', 'DualQEKF'):
            prior = ekf_predict(self.state, u, noise, floor)
            self._fallback = (prior, param_belief)
            prior = reset_feet(prior, frame, params, self.geometry, touchdown, cfg.foot_reset_std, floor)
            state = ekf_update(prior, frame, params, noise, self.geometry, cfg.inflation, floor)
            diagnostics['min_eig'] = state.info['min_eig']
            self._commit(frame, state, None, param_belief, params)
            return self._output(frame, diagnostics)

        if self.variant == 'UKF-OR':
            self._fallback = (ekf_predict(self.state, u, noise, floor), param_belief)
            state = ukf_or_step(self.state, u, frame, params, noise, cfg.gate_threshold, self.geometry, cfg.ut,
                                cfg.inflation, floor, cfg.gate, touchdown, cfg.foot_reset_std)
            diagnostics['rejected'] = int(np.sum(state.info['rejected']))
            diagnostics['min_eig'] = state.info['min_eig']
            self._commit(frame, state, None, param_belief, params)
            return self._output(frame, diagnostics)

        x_prev = self.state.mean
        F = process_jacobian(x_prev, u, noise.g)
        Q = noise.process_covariance(x_prev.q)
        if self.pending is None:
            P_prior, min_eig = floor_eigenvalues(F.dot(self.state.cov).dot(F.T) + Q, floor)
        else:
            H, sigma = self.pending
            P_prior, min_eig = riccati_prior(self.state.cov, F, H, Q, sigma, floor, return_min_eig=True)
        prior = GaussianBelief(propagate(x_prev, u, noise.g), P_prior)
        self._fallback = (prior, param_belief)
        prior = reset_feet(prior, frame, params, self.geometry, touchdown, cfg.foot_reset_std, floor)
        self.prior_cov = prior.cov
        update = beta_update(prior.mean, prior.cov, frame, params, noise, self.geometry, cfg.solver, cfg.inflation)
        diag = update.diagnostics
        diagnostics.update(iterations=diag.iterations, weight=diag.weight, gradient_norm=diag.gradient_norm,
                           converged=diag.converged, min_eig=min_eig)
        self._commit(frame, GaussianBelief(update.state, prior.cov), (update.jacobian, update.sigma), param_belief,
                     params)
        return self._output(frame, diagnostics)

    def run_end_iter_handler(self, engine):
        index = engine.state.iteration - 1
        output = engine.state.output
        engine.state.outputs.append(output)
        if self.progress_bar is not None:
            self.progress_bar.update(1)
        if self.writer is None:
            return
        label = self.config.label
        for key, value in output.diagnostics.items():
            if isinstance(value, (bool, int, float, np.floating, np.integer)):
                self.writer.add_scalar('%s/%s' % (label, key), float(value), index)
        for leg, value in enumerate(output.params):
            self.writer.add_scalar('%s/calf_length_%d' % (label, leg), float(value), index)

    def _process(self, engine, frame):
        try:
            return self.step(frame)
        except NumericalFailureError as e:
            logger.warning('%s: %s', self.config.label, e)
            engine.state.failures.append((e.frame_index, str(e)))
            return self.recover(frame, message=str(e))

    def run(self, dataset):
        """Fold step over a SensorDataset; returns an EstimatorRun."""
        if len(dataset) == 0:
            return EstimatorRun(outputs=[], failures=[])
        loader = DataLoader(dataset, batch_size=None, shuffle=False, collate_fn=_keep_frame)
        engine = Engine(self._process)
        engine.add_event_handler(Events.STARTED, self.run_start_handler)
        engine.add_event_handler(Events.ITERATION_COMPLETED, self.run_end_iter_handler)
        self.writer = SummaryWriter(self.log_path) if self.log_path else None
        self.progress_bar = tqdm(total=len(dataset), desc=self.config.label, disable=not self.progress)
        try:
            state = engine.run(loader, max_epochs=1)
        finally:
            self.progress_bar.close()
            if self.writer is not None:
                self.writer.close()
        return EstimatorRun(outputs=state.outputs, failures=state.failures)

    def run_start_handler(self, engine):
        engine.state.outputs = []
        engine.state.failures = []


def init(x0, params0, P0, config, geometry, **kwargs):
    """Estimator context holding (x0, P0) and (params0, param_std^2 I); see DualEstimator.

    The prior P_{1|0} is not formed here. It is propagated lazily when the second
    frame arrives, and the first frame emits x0 without a measurement update.
    """
    return DualEstimator(config, geometry, x0, params0, P0, **kwargs)


def step(ctx, frame, u=None):
    return ctx.step(frame, u)


def run(ctx, dataset):
    return ctx.run(dataset)
