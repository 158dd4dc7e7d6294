from torch.utils.data.dataset import Dataset
import numpy as np
import pandas as pd

from .exceptions import SchemaError
from .kinematics import LEG_NAMES
from .state import RobotState, SensorFrame

TAGS = tuple(name.lower() for name in LEG_NAMES)
FLOAT_FORMAT = '%.17g'


def sensor_columns():
    columns = ['t', 'wx', 'wy', 'wz', 'ax', 'ay', 'az']
    for tag in TAGS:
        columns += ['q%s%d' % (tag, j) for j in (1, 2, 3)]
        columns += ['dq%s%d' % (tag, j) for j in (1, 2, 3)]
        columns += ['tau%s%d' % (tag, j) for j in (1, 2, 3)]
        columns += ['fz%s' % tag, 'contact%s' % tag]
    return columns


def _pose_columns():
    return ['t', 'px', 'py', 'pz', 'vx', 'vy', 'vz', 'qw', 'qx', 'qy', 'qz']


def truth_columns():
    columns = _pose_columns()
    for tag in TAGS:
        columns += ['s%s%s' % (tag, a) for a in 'xyz']
        columns += ['sd%s%s' % (tag, a) for a in 'xyz']
    return columns


def estimate_columns():
    columns = _pose_columns()
    for tag in TAGS:
        columns += ['s%s%s' % (tag, a) for a in 'xyz']
    return columns + ['bgx', 'bgy', 'bgz', 'bax', 'bay', 'baz']


def param_columns():
    return ['t'] + ['lc_%s' % tag for tag in TAGS]


class SensorDataset(Dataset):
    """Time-ordered sensor stream; indexing yields SensorFrame records."""

    def __init__(self, t, gyro, accel, phi, dphi, tau, fz, contact):
        self.t = np.asarray(t, dtype=float)
        self.gyro = np.asarray(gyro, dtype=float).reshape(-1, 3)
        self.accel = np.asarray(accel, dtype=float).reshape(-1, 3)
        self.phi = np.asarray(phi, dtype=float)
        self.dphi = np.asarray(dphi, dtype=float)
        self.tau = np.asarray(tau, dtype=float)
        self.fz = np.asarray(fz, dtype=float)
        self.contact = np.asarray(contact, dtype=bool)

    @classmethod
    def empty(cls, n_legs=len(LEG_NAMES)):
        return cls(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, n_legs, 3)),
                   np.zeros((0, n_legs, 3)), np.zeros((0, n_legs, 3)), np.zeros((0, n_legs)),
                   np.zeros((0, n_legs), dtype=bool))

    def __getitem__(self, index):
        return SensorFrame(t=float(self.t[index]), gyro=self.gyro[index].copy(), accel=self.accel[index].copy(),
                           phi=self.phi[index].copy(), dphi=self.dphi[index].copy(), tau=self.tau[index].copy(),
                           fz=self.fz[index].copy(), contact=self.contact[index].copy())

    def __len__(self, ):
        return len(self.t)

    @property
    def n_legs(self):
        return self.phi.shape[1]

    def arrays(self):
        return dict(t=self.t, gyro=self.gyro, accel=self.accel, phi=self.phi, dphi=self.dphi,
                    tau=self.tau, fz=self.fz, contact=self.contact)

    def replace(self, **arrays):
        fields = self.arrays()
        fields.update(arrays)
        return SensorDataset(**{k: np.array(v) for k, v in fields.items()})

    def equals(self, other):
        return len(self) == len(other) and all(
            np.array_equal(a, b) for a, b in zip(self.arrays().values(), other.arrays().values()))


def _frame(columns, data):
    return pd.DataFrame(data, columns=columns)


def _write(df, path):
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def _read(path, columns):
    """Read a CSV and check that every column is present and numeric."""
    try:
        df = pd.read_csv(path, float_precision='round_trip')
    except pd.errors.ParserError as e:
        raise SchemaError('%s: malformed row: %s' % (path, e))
    except pd.errors.EmptyDataError:
        raise SchemaError('%s: file is empty' % path)
    for column in columns:
        if column not in df.columns:
            raise SchemaError("%s: missing column '%s'" % (path, column))
    values = df[columns].apply(pd.to_numeric, errors='coerce')
    bad = values.isna().any(axis=1).to_numpy()
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        column = values.columns[values.iloc[row].isna().to_numpy()][0]
        # +2: one-based numbering plus the header line
        raise SchemaError("%s: row %d: bad value %r in column '%s'"
                          % (path, row + 2, df[column].iloc[row], column))
    return values.to_numpy(dtype=float)


def write_sensors(dataset, path):
    blocks = [dataset.t[:, None], dataset.gyro, dataset.accel]
    for leg in range(dataset.n_legs):
        blocks += [dataset.phi[:, leg], dataset.dphi[:, leg], dataset.tau[:, leg],
                   dataset.fz[:, leg, None], dataset.contact[:, leg, None].astype(float)]
    df = _frame(sensor_columns(), np.hstack(blocks))
    for tag in TAGS:
        df['contact%s' % tag] = df['contact%s' % tag].astype(int)
    _write(df, path)


def read_sensors(path):
    values = _read(path, sensor_columns())
    n = values.shape[0]
    legs = values[:, 7:].reshape(n, len(TAGS), 11)
    return SensorDataset(t=values[:, 0], gyro=values[:, 1:4], accel=values[:, 4:7],
                         phi=legs[:, :, 0:3], dphi=legs[:, :, 3:6], tau=legs[:, :, 6:9],
                         fz=legs[:, :, 9], contact=legs[:, :, 10] != 0.0)


def _pose_block(t, states):
    return [np.asarray(t, dtype=float)[:, None], states.p, states.v, states.q]


def write_truth(t, states, foot_velocity, path):
    blocks = _pose_block(t, states)
    for leg in range(states.s.shape[1]):
        blocks += [states.s[:, leg], foot_velocity[:, leg]]
    _write(_frame(truth_columns(), np.hstack(blocks)), path)


def read_truth(path, gyro_bias=None, accel_bias=None):
    """Returns (t, states, foot_velocity); biases are not part of the file and default to zero."""
    values = _read(path, truth_columns())
    n = values.shape[0]
    legs = values[:, 11:].reshape(n, len(TAGS), 6)
    bg = np.zeros((n, 3)) + (0.0 if gyro_bias is None else np.asarray(gyro_bias))
    ba = np.zeros((n, 3)) + (0.0 if accel_bias is None else np.asarray(accel_bias))
    states = RobotState(p=values[:, 1:4], v=values[:, 4:7], q=values[:, 7:11], s=legs[:, :, 0:3], bg=bg, ba=ba)
    return values[:, 0], states, legs[:, :, 3:6]


def write_estimate(t, states, path):
    blocks = _pose_block(t, states)
    blocks += [states.s[:, leg] for leg in range(states.s.shape[1])]
    blocks += [states.bg, states.ba]
    _write(_frame(estimate_columns(), np.hstack(blocks)), path)


def read_estimate(path):
    values = _read(path, estimate_columns())
    n = values.shape[0]
    feet_end = 11 + 3 * len(TAGS)
    states = RobotState(p=values[:, 1:4], v=values[:, 4:7], q=values[:, 7:11],
                        s=values[:, 11:feet_end].reshape(n, len(TAGS), 3),
                        bg=values[:, feet_end:feet_end + 3], ba=values[:, feet_end + 3:feet_end + 6])
    return values[:, 0], states


def write_params(t, params, path):
    data = np.hstack([np.asarray(t, dtype=float)[:, None], np.asarray(params, dtype=float)])
    _write(_frame(param_columns(), data), path)


def read_params(path):
    values = _read(path, param_columns())
    return values[:, 0], values[:, 1:]
