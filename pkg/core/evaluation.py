"""Trajectory accuracy metrics and the per-variant comparison table.

No trajectory alignment is applied: runs start from the true initial state.
"""

from collections import namedtuple, OrderedDict
import logging

import numpy as np
import pandas as pd

from .exceptions import AlignmentError, UndefinedMetricError

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ['variant', 'ate_m', 'mpd_m', 'dr_percent', 'traj_len_m']


def _errors(est, truth):
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape != truth.shape:
        raise AlignmentError('estimate has %d samples, ground truth %d' % (len(est), len(truth)))
    if est.ndim != 2 or est.shape[0] == 0:
        raise AlignmentError('expected a non-empty (T, 3) position sequence, got shape %s' % (est.shape,))
    return np.linalg.norm(est - truth, axis=1)


def ate(est, truth):
    """Root mean square position error over the T samples."""
    err = _errors(est, truth)
    return float(np.sqrt(np.mean(err ** 2)))


def mpd(est, truth):
    """Largest position deviation along the trajectory."""
    return float(np.max(_errors(est, truth)))


def trajectory_length(positions):
    positions = np.asarray(positions, dtype=float)
    if len(positions) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(positions, axis=0), axis=1)))


def drift_ratio(est, truth):
    """Endpoint error over the distance travelled by the ground truth."""
    err = _errors(est, truth)
    length = trajectory_length(truth)
    if not length > 0.0:
        raise UndefinedMetricError('drift ratio is undefined for a zero-length trajectory')
    return float(err[-1] / length)


def rmse(est, truth):
    """Per-axis root mean square error."""
    _errors(est, truth)
    diff = np.asarray(est, dtype=float) - np.asarray(truth, dtype=float)
    return np.sqrt(np.mean(diff ** 2, axis=0))


class MetricReport(namedtuple('MetricReport', ['variant', 'ate', 'mpd', 'dr', 'traj_len', 'rmse'])):
    """Metrics of one variant; dr is NaN when the ground truth does not move."""
    __slots__ = ()

    @classmethod
    def compute(cls, variant, est, truth):
        try:
            dr = drift_ratio(est, truth)
        except UndefinedMetricError as e:
            logger.warning('%s: %s', variant, e)
            dr = float('nan')
        return cls(variant=variant, ate=ate(est, truth), mpd=mpd(est, truth), dr=dr,
                   traj_len=trajectory_length(truth), rmse=rmse(est, truth))

    @property
    def dr_percent(self):
        return 100.0 * self.dr


def compare(outputs, truth):
    """One MetricReport per variant, in the order of `outputs` (variant -> (T, 3) positions)."""
    reports = []
    for variant, est in outputs.items():
        reports.append(MetricReport.compute(variant, est, truth))
        logger.info('%s: ATE %.4f m, MPD %.4f m, DR %.2f %%', variant, reports[-1].ate, reports[-1].mpd,
                    reports[-1].dr_percent)
    return reports


def metrics_frame(reports):
    rows = OrderedDict((column, []) for column in METRIC_COLUMNS)
    for report in reports:
        rows['variant'].append(report.variant)
        rows['ate_m'].append(report.ate)
        rows['mpd_m'].append(report.mpd)
        rows['dr_percent'].append(report.dr_percent)
        rows['traj_len_m'].append(report.traj_len)
    return pd.DataFrame(rows, columns=METRIC_COLUMNS)


def write_metrics(reports, path):
    metrics_frame(reports).to_csv(path, index=False, float_format='%.17g')


def format_table(reports):
    """Aligned plain-text table, including the per-axis RMSE."""
    header = ['variant', 'ATE [m]', 'MPD [m]', 'DR [%]', 'l_traj [m]', 'RMSE x/y/z [m]']
    rows = [header]
    for r in reports:
        rows.append([r.variant, '%.4f' % r.ate, '%.4f' % r.mpd, '%.2f' % r.dr_percent, '%.2f' % r.traj_len,
                     '/'.join('%.4f' % v for v in r.rmse)])
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = []
    for k, row in enumerate(rows):
        cells = [row[0].ljust(widths[0])] + [cell.rjust(w) for cell, w in zip(row[1:], widths[1:])]
        lines.append('  '.join(cells))
        if k == 0:
            lines.append('  '.join('-' * w for w in widths))
    return '\n'.join(lines)
