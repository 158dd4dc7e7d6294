"""Run configuration.

A run is described by one YAML document:

    seed: 42
    output_dir: output/standard
    workers: 1
    log_path: null                # tensorboard directory for per-frame diagnostics
    robot: {...}                  # RobotConfig
    scenario: {...}               # ScenarioConfig, or
    dataset: data/standard        # directory holding sensors.csv (+ truth.csv)
    estimators:
      - variant: DualBetaKF       # QEKF | UKF-OR | DualQEKF | BetaKF | DualBetaKF
        noise: {...}              # NoiseConfig
        solver: {...}             # SolverSettings
        ...

Every block is an immutable namedtuple with defaults; unknown keys are reported
with the line they appear on.
"""

from collections import namedtuple
import math

import numpy as np
import yaml
from scipy.stats import chi2

from .exceptions import ConfigError
from .kinematics import LegGeometry, LEG_NAMES
from .state import StateIndex, rotation_matrix
from .utils import read_text

VARIANTS = ('QEKF', 'UKF-OR', 'DualQEKF', 'BetaKF', 'DualBetaKF')
DUAL_VARIANTS = ('DualQEKF', 'DualBetaKF')
BETA_VARIANTS = ('BetaKF', 'DualBetaKF')
GATE_MODES = ('per_leg', 'full')


def _key_lines(node, path=()):
    lines = {}
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            key_path = path + (key_node.value,)
            lines[key_path] = key_node.start_mark.line + 1
            lines.update(_key_lines(value_node, key_path))
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            lines[path + (i,)] = item.start_mark.line + 1
            lines.update(_key_lines(item, path + (i,)))
    return lines


def _scalar(kind):
    def convert(raw, path, lines):
        if isinstance(raw, bool) and kind is not bool:
            raise ValueError('expected %s, got boolean' % kind.__name__)
        return kind(raw)
    return convert


def _optional(convert):
    def wrapped(raw, path, lines):
        return None if raw is None else convert(raw, path, lines)
    return wrapped


def _floats(length=None):
    def convert(raw, path, lines):
        values = tuple(float(v) for v in raw)
        if length is not None and len(values) != length:
            raise ValueError('expected %d values, got %d' % (length, len(values)))
        return values
    return convert


def _choice(options):
    def convert(raw, path, lines):
        if raw not in options:
            raise ValueError('expected one of %s, got %r' % (', '.join(options), raw))
        return raw
    return convert


def _block(cls):
    def convert(raw, path, lines):
        return cls.from_dict(raw, path, lines)
    return convert


def _blocks(cls):
    def convert(raw, path, lines):
        if not isinstance(raw, list):
            raise ConfigError("'%s' must be a list" % '.'.join(map(str, path)), line=lines.get(path))
        return tuple(cls.from_dict(item, path + (i,), lines) for i, item in enumerate(raw))
    return convert


def _to_plain(value):
    if isinstance(value, _ConfigBlock):
        return value.to_dict()
    if isinstance(value, tuple):
        return [_to_plain(v) for v in value]
    return value


class _ConfigBlock(object):
    __slots__ = ()
    _defaults = {}
    _converters = {}

    @classmethod
    def from_dict(cls, data=None, path=(), lines=None):
        lines = lines or {}
        data = {} if data is None else data
        where = '.'.join(map(str, path)) or '<root>'
        if not isinstance(data, dict):
            raise ConfigError("block '%s' must be a mapping" % where, line=lines.get(path))
        for key in data:
            if key not in cls._fields:
                raise ConfigError("unknown key '%s' in block '%s'" % (key, where), line=lines.get(path + (key,)))
        values = {}
        for field in cls._fields:
            raw = data.get(field, cls._defaults[field])
            convert = cls._converters.get(field)
            if convert is None:
                values[field] = raw
                continue
            try:
                values[field] = convert(raw, path + (field,), lines)
            except (TypeError, ValueError) as e:
                raise ConfigError("invalid value for '%s' in block '%s': %s" % (field, where, e),
                                  line=lines.get(path + (field,)))
        block = cls(**values)
        try:
            block.validate()
        except ValueError as e:
            raise ConfigError("block '%s': %s" % (where, e), line=lines.get(path))
        return block

    def validate(self):
        pass

    def to_dict(self):
        return {field: _to_plain(getattr(self, field)) for field in self._fields}


class NoiseConfig(_ConfigBlock, namedtuple('NoiseConfig', [
        'beta', 'gravity', 'position_std', 'velocity_std', 'orientation_std', 'foot_std',
        'gyro_bias_std', 'accel_bias_std', 'meas_position_std', 'meas_velocity_std',
        'param_walk_std', 'statics_std', 'n_legs'])):
    """Noise model of the filters, given as standard deviations per filter step.

    Expands into Q (process, 3N+15), Sigma (leg measurement, 6N),
    Xi (calf-length random walk, N) and Z (statics measurement, N).
    """
    __slots__ = ()
    _defaults = dict(beta=1e-3, gravity=(0.0, 0.0, -9.81), position_std=1e-5, velocity_std=2e-4,
                     orientation_std=2e-5, foot_std=(1e-4, 1e-4, 1e-4), gyro_bias_std=1e-6,
                     accel_bias_std=1e-5, meas_position_std=5e-3, meas_velocity_std=1e-2,
                     param_walk_std=1e-4, statics_std=3.0, n_legs=4)
    _converters = dict(beta=_scalar(float), gravity=_floats(3), position_std=_scalar(float),
                       velocity_std=_scalar(float), orientation_std=_scalar(float), foot_std=_floats(3),
                       gyro_bias_std=_scalar(float), accel_bias_std=_scalar(float),
                       meas_position_std=_scalar(float), meas_velocity_std=_scalar(float),
                       param_walk_std=_scalar(float), statics_std=_scalar(float), n_legs=_scalar(int))

    def validate(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError('beta must lie in (0, 1), got %r' % self.beta)
        stds = [self.position_std, self.velocity_std, self.orientation_std, self.gyro_bias_std,
                self.accel_bias_std, self.param_walk_std] + list(self.foot_std)
        if min(stds) < 0.0:
            raise ValueError('process noise standard deviations must be non-negative')
        if min(self.meas_position_std, self.meas_velocity_std, self.statics_std) <= 0.0:
            raise ValueError('measurement noise standard deviations must be positive')
        if self.n_legs < 1:
            raise ValueError('n_legs must be positive')

    @property
    def g(self):
        return np.array(self.gravity)

    def process_covariance(self, q=None):
        """Q over the error state; the foot random walk is rotated to the world frame by q."""
        idx = StateIndex.for_legs(self.n_legs)
        Q = np.zeros((idx.dim, idx.dim))
        Q[idx.p, idx.p] = self.position_std ** 2 * np.eye(3)
        Q[idx.v, idx.v] = self.velocity_std ** 2 * np.eye(3)
        Q[idx.theta, idx.theta] = self.orientation_std ** 2 * np.eye(3)
        foot = np.diag(np.square(self.foot_std))
        if q is not None:
            R = rotation_matrix(q)
            foot = R.dot(foot).dot(R.T)
        for leg in range(self.n_legs):
            Q[idx.foot(leg), idx.foot(leg)] = foot
        Q[idx.bg, idx.bg] = self.gyro_bias_std ** 2 * np.eye(3)
        Q[idx.ba, idx.ba] = self.accel_bias_std ** 2 * np.eye(3)
        return Q

    def measurement_covariance(self):
        n = 3 * self.n_legs
        return np.diag(np.concatenate([np.full(n, self.meas_position_std ** 2),
                                       np.full(n, self.meas_velocity_std ** 2)]))

    def param_walk_covariance(self):
        return self.param_walk_std ** 2 * np.eye(self.n_legs)

    def statics_covariance(self):
        return self.statics_std ** 2 * np.eye(self.n_legs)


class SolverSettings(_ConfigBlock, namedtuple('SolverSettings', [
        'max_iterations', 'gradient_tol', 'step_tol', 'damping_init', 'damping_scale'])):
    __slots__ = ()
    _defaults = dict(max_iterations=50, gradient_tol=1e-8, step_tol=1e-10, damping_init=1e-9, damping_scale=10.0)
    _converters = dict(max_iterations=_scalar(int), gradient_tol=_scalar(float), step_tol=_scalar(float),
                       damping_init=_scalar(float), damping_scale=_scalar(float))

    def validate(self):
        if min(self) <= 0:
            raise ValueError('solver settings must all be positive')
        if self.damping_scale <= 1.0:
            raise ValueError('damping_scale must exceed 1')


class UTSettings(_ConfigBlock, namedtuple('UTSettings', ['alpha', 'beta', 'kappa'])):
    """Merwe scaled sigma point parameters."""
    __slots__ = ()
    _defaults = dict(alpha=1e-3, beta=2.0, kappa=0.0)
    _converters = dict(alpha=_scalar(float), beta=_scalar(float), kappa=_scalar(float))

    def validate(self):
        if self.alpha <= 0.0:
            raise ValueError('alpha must be positive')


class InitialCovariance(_ConfigBlock, namedtuple('InitialCovariance', [
        'position', 'velocity', 'orientation', 'foot', 'gyro_bias', 'accel_bias'])):
    """Standard deviations of P0."""
    __slots__ = ()
    _defaults = dict(position=1e-3, velocity=1e-2, orientation=1e-3, foot=1e-3, gyro_bias=1e-3, accel_bias=1e-2)
    _converters = {name: _scalar(float) for name in _defaults}

    def validate(self):
        if min(self) <= 0.0:
            raise ValueError('initial standard deviations must be positive')

    def matrix(self, n_legs):
        idx = StateIndex.for_legs(n_legs)
        std = np.zeros(idx.dim)
        std[idx.p], std[idx.v], std[idx.theta] = self.position, self.velocity, self.orientation
        std[idx.s], std[idx.bg], std[idx.ba] = self.foot, self.gyro_bias, self.accel_bias
        return np.diag(std ** 2)


class EstimatorConfig(_ConfigBlock, namedtuple('EstimatorConfig', [
        'variant', 'name', 'noise', 'solver', 'ut', 'outlier_threshold', 'gate', 'contact_threshold',
        'inflation', 'initial_calf_length', 'param_std', 'initial_cov', 'foot_reset_std',
        'covariance_floor'])):
    __slots__ = ()
    _defaults = dict(variant='DualBetaKF', name=None, noise=None, solver=None, ut=None,
                     outlier_threshold=None, gate='per_leg', contact_threshold=10.0, inflation=1e6,
                     initial_calf_length=None, param_std=0.02, initial_cov=None, foot_reset_std=5e-3,
                     covariance_floor=1e-12)
    _converters = dict(variant=_choice(VARIANTS), name=_optional(_scalar(str)), noise=_block(NoiseConfig),
                       solver=_block(SolverSettings), ut=_block(UTSettings),
                       outlier_threshold=_optional(_scalar(float)), gate=_choice(GATE_MODES),
                       contact_threshold=_scalar(float), inflation=_scalar(float),
                       initial_calf_length=_optional(_scalar(float)), param_std=_scalar(float),
                       initial_cov=_block(InitialCovariance), foot_reset_std=_scalar(float),
                       covariance_floor=_scalar(float))

    def validate(self):
        if self.outlier_threshold is not None and self.outlier_threshold < 0.0:
            raise ValueError('outlier_threshold must be non-negative')
        if self.inflation < 1.0:
            raise ValueError('inflation must be at least 1')
        if self.param_std <= 0.0 or (self.initial_calf_length is not None and self.initial_calf_length <= 0.0):
            raise ValueError('calf length prior must be positive')
        if self.foot_reset_std < 0.0 or self.covariance_floor < 0.0:
            raise ValueError('foot_reset_std and covariance_floor must be non-negative')

    @property
    def label(self):
        return self.name or self.variant

    def initial_lengths(self, n_legs, nominal):
        """Initial calf-length estimate of every leg; `nominal` (the robot's calf length) unless set here."""
        lc = nominal if self.initial_calf_length is None else self.initial_calf_length
        return np.full(n_legs, float(lc))

    @property
    def is_dual(self):
        return self.variant in DUAL_VARIANTS

    @property
    def gate_threshold(self):
        if self.outlier_threshold is not None:
            return self.outlier_threshold
        dof = 6 if self.gate == 'per_leg' else 6 * self.noise.n_legs
        return float(chi2.ppf(0.99, dof))


class CalfProfile(_ConfigBlock, namedtuple('CalfProfile', [
        'profile', 'value', 'mean', 'amplitude', 'period', 'phase_step', 'start', 'end',
        'ramp_start', 'ramp_end'])):
    """True calf-length trajectory, identical in shape for every leg.

    constant: value; sinusoid: mean + amplitude * sin(2 pi t / period + leg * phase_step);
    ramp: start until ramp_start, linear to end at ramp_end, then end.
    """
    __slots__ = ()
    _defaults = dict(profile='constant', value=0.226, mean=0.2175, amplitude=0.0355, period=20.0,
                     phase_step=math.pi / 2, start=0.226, end=0.20, ramp_start=0.0, ramp_end=10.0)
    _converters = dict(profile=_choice(('constant', 'sinusoid', 'ramp')), value=_scalar(float),
                       mean=_scalar(float), amplitude=_scalar(float), period=_scalar(float),
                       phase_step=_scalar(float), start=_scalar(float), end=_scalar(float),
                       ramp_start=_scalar(float), ramp_end=_scalar(float))

    def validate(self):
        if self.period <= 0.0:
            raise ValueError('period must be positive')
        if self.ramp_end <= self.ramp_start:
            raise ValueError('ramp_end must come after ramp_start')

    def evaluate(self, t, n_legs):
        """Calf lengths (K, N) and their time derivatives at times t (K,)."""
        t = np.asarray(t, dtype=float)[:, None]
        legs = np.arange(n_legs)[None, :]
        if self.profile == 'constant':
            value = np.full((t.shape[0], n_legs), self.value)
            return value, np.zeros_like(value)
        if self.profile == 'sinusoid':
            omega = 2.0 * np.pi / self.period
            arg = omega * t + legs * self.phase_step
            return self.mean + self.amplitude * np.sin(arg), self.amplitude * omega * np.cos(arg)
        frac = np.clip((t - self.ramp_start) / (self.ramp_end - self.ramp_start), 0.0, 1.0)
        slope = (self.end - self.start) / (self.ramp_end - self.ramp_start)
        inside = (t > self.ramp_start) & (t < self.ramp_end)
        value = self.start + (self.end - self.start) * frac + 0.0 * legs
        return value, np.where(inside, slope, 0.0) + 0.0 * legs


class SensorNoise(_ConfigBlock, namedtuple('SensorNoise', [
        'gyro', 'accel', 'joint_angle', 'joint_velocity', 'torque', 'force'])):
    __slots__ = ()
    _defaults = dict(gyro=0.01, accel=0.1, joint_angle=1e-3, joint_velocity=0.01, torque=0.2, force=2.0)
    _converters = {name: _scalar(float) for name in _defaults}

    def validate(self):
        if min(self) < 0.0:
            raise ValueError('sensor noise standard deviations must be non-negative')


class ScenarioConfig(_ConfigBlock, namedtuple('ScenarioConfig', [
        'duration', 'rate', 'speed', 'ramp_time', 'yaw_rates', 'segment_duration', 'sway_amplitude',
        'body_height', 'swing_height', 'gait', 'gait_period', 'duty_factor', 'slip_rate', 'slip_speed',
        'slip_duration', 'calf_length', 'noise', 'gyro_bias', 'accel_bias', 'contact_threshold', 'seed'])):
    __slots__ = ()
    _defaults = dict(duration=60.0, rate=500.0, speed=0.5, ramp_time=1.0, yaw_rates=(0.0, 0.15, 0.0, -0.15),
                     segment_duration=10.0, sway_amplitude=0.02, body_height=0.30, swing_height=0.06,
                     gait='trot', gait_period=0.5, duty_factor=0.6, slip_rate=0.05, slip_speed=(0.2, 0.8),
                     slip_duration=25.0, calf_length=None, noise=None, gyro_bias=(0.0, 0.0, 0.0),
                     accel_bias=(0.0, 0.0, 0.0), contact_threshold=10.0, seed=None)
    _converters = dict(duration=_scalar(float), rate=_scalar(float), speed=_scalar(float),
                       ramp_time=_scalar(float), yaw_rates=_floats(), segment_duration=_scalar(float),
                       sway_amplitude=_scalar(float), body_height=_scalar(float), swing_height=_scalar(float),
                       gait=_choice(('trot', 'stand')), gait_period=_scalar(float), duty_factor=_scalar(float),
                       slip_rate=_scalar(float), slip_speed=_floats(2), slip_duration=_scalar(float),
                       calf_length=_block(CalfProfile), noise=_block(SensorNoise), gyro_bias=_floats(3),
                       accel_bias=_floats(3), contact_threshold=_scalar(float), seed=_optional(_scalar(int)))

    def validate(self):
        if self.duration <= 0.0 or self.rate <= 0.0:
            raise ValueError('duration and rate must be positive')
        if not 0.0 < self.duty_factor < 1.0:
            raise ValueError('duty_factor must lie in (0, 1)')
        if not 0.0 <= self.slip_rate < 1.0:
            raise ValueError('slip_rate must lie in [0, 1)')
        if self.slip_duration < 1.0:
            raise ValueError('slip_duration is a mean frame count and must be at least 1')
        if self.slip_speed[0] < 0.0 or self.slip_speed[1] < self.slip_speed[0]:
            raise ValueError('slip_speed must be an ordered non-negative range')
        if not self.yaw_rates:
            raise ValueError('yaw_rates needs at least one segment')

    @property
    def frame_count(self):
        return int(round(self.duration * self.rate))


class RobotConfig(_ConfigBlock, namedtuple('RobotConfig', [
        'thigh_length', 'hip_offset', 'hip_positions', 'calf_length', 'mass', 'calf_bounds'])):
    """Fixed leg geometry (legs ordered FL, FR, RL, RR) and body mass.

    calf_length is the nominal calf length the estimators start from when their
    initial_calf_length is not given.
    """
    __slots__ = ()
    _defaults = dict(thigh_length=0.213, hip_offset=0.0955,
                     hip_positions=((0.1934, 0.0465, 0.0), (0.1934, -0.0465, 0.0),
                                    (-0.1934, 0.0465, 0.0), (-0.1934, -0.0465, 0.0)),
                     calf_length=0.226, mass=15.0, calf_bounds=(1e-3, 1.0))

    @staticmethod
    def _hips(raw, path, lines):
        return tuple(_floats(3)(hip, path, lines) for hip in raw)

    def validate(self):
        if self.thigh_length <= 0.0 or self.hip_offset == 0.0:
            raise ValueError('thigh_length must be positive and hip_offset non-zero')
        if len(self.hip_positions) != len(LEG_NAMES):
            raise ValueError('expected %d hip positions' % len(LEG_NAMES))
        if not 0.0 < self.calf_bounds[0] < self.calf_bounds[1]:
            raise ValueError('calf_bounds must be an increasing positive range')
        if self.mass <= 0.0:
            raise ValueError('mass must be positive')

    def geometry(self):
        legs = []
        for name, hip in zip(LEG_NAMES, self.hip_positions):
            side = 1.0 if hip[1] >= 0.0 else -1.0
            legs.append(LegGeometry(leg_id=name, hip_position=np.array(hip), hip_offset=abs(self.hip_offset),
                                    thigh_length=self.thigh_length, side_sign=side))
        return tuple(legs)


RobotConfig._converters = dict(thigh_length=_scalar(float), hip_offset=_scalar(float),
                               hip_positions=RobotConfig._hips, calf_length=_scalar(float),
                               mass=_scalar(float), calf_bounds=_floats(2))


class RunConfig(_ConfigBlock, namedtuple('RunConfig', [
        'seed', 'output_dir', 'workers', 'log_path', 'robot', 'scenario', 'dataset', 'estimators'])):
    __slots__ = ()
    _defaults = dict(seed=42, output_dir='output', workers=1, log_path=None, robot=None, scenario=None,
                     dataset=None, estimators=[])
    _converters = dict(seed=_scalar(int), output_dir=_scalar(str), workers=_scalar(int),
                       log_path=_optional(_scalar(str)), robot=_block(RobotConfig),
                       scenario=_optional(_block(ScenarioConfig)), dataset=_optional(_scalar(str)),
                       estimators=_blocks(EstimatorConfig))

    def validate(self):
        if (self.scenario is None) == (self.dataset is None):
            raise ValueError("exactly one of 'scenario' or 'dataset' must be given")
        if not self.estimators:
            raise ValueError('at least one estimator is required')
        labels = [est.label for est in self.estimators]
        if len(set(labels)) != len(labels):
            raise ValueError('estimator names must be unique, got %s' % ', '.join(labels))
        if self.workers < 1:
            raise ValueError('workers must be at least 1')

    def resolved_scenario(self):
        """Scenario with the run seed filled in when the scenario does not carry one."""
        if self.scenario is None or self.scenario.seed is not None:
            return self.scenario
        return self.scenario._replace(seed=self.seed)


def load_run_config(text):
    try:
        data = yaml.safe_load(text)
        lines = _key_lines(yaml.compose(text)) if data is not None else {}
    except yaml.YAMLError as e:
        mark = getattr(e, 'problem_mark', None)
        raise ConfigError('malformed YAML: %s' % getattr(e, 'problem', e),
                          line=None if mark is None else mark.line + 1)
    return RunConfig.from_dict(data, (), lines)


def load_run_config_file(path):
    return load_run_config(read_text(path))


def dump_run_config(config):
    return yaml.safe_dump(config.to_dict(), sort_keys=False, default_flow_style=None)
