"""simulate / estimate / evaluate, the operations behind the entry scripts.

Each command returns a process exit code; results go to files and stdout.
"""

import concurrent.futures
import logging
import os
import sys

import numpy as np

from .config import VARIANTS, dump_run_config, load_run_config_file
from .dataset import (read_estimate, read_sensors, read_truth, write_estimate, write_params,
                      write_sensors, write_truth)
from .evaluation import compare, format_table, write_metrics
from .exceptions import ConfigError
from .simulator import generate
from .solver import DualEstimator, initial_state
from .state import RobotState
from .utils import ensure_dir, estimate_paths, write_text

logger = logging.getLogger(__name__)

SENSORS_FILE = 'sensors.csv'
TRUTH_FILE = 'truth.csv'
PARAMS_TRUTH_FILE = 'params_truth.csv'
METRICS_FILE = 'metrics.csv'


def _write_simulation(dataset, truth, out_dir):
    ensure_dir(out_dir)
    write_sensors(dataset, os.path.join(out_dir, SENSORS_FILE))
    write_truth(truth.t, truth.states, truth.foot_velocity, os.path.join(out_dir, TRUTH_FILE))
    write_params(truth.t, truth.params, os.path.join(out_dir, PARAMS_TRUTH_FILE))


def cmd_simulate(config_path, out_dir, progress=False):
    cfg = load_run_config_file(config_path)
    if cfg.scenario is None:
        raise ConfigError("%s: 'simulate' needs a 'scenario' block" % config_path)
    dataset, truth = generate(cfg.resolved_scenario(), cfg.robot, progress=progress)
    _write_simulation(dataset, truth, out_dir)
    print('%d frames written to %s' % (len(dataset), out_dir))
    return 0


def _load_data(cfg, progress):
    """(dataset, initial state or None) from the scenario or the dataset directory."""
    if cfg.scenario is not None:
        dataset, truth = generate(cfg.resolved_scenario(), cfg.robot, progress=progress)
        _write_simulation(dataset, truth, cfg.output_dir)
        x0 = truth.states.take(0)
    else:
        dataset = read_sensors(os.path.join(cfg.dataset, SENSORS_FILE))
        truth_path = os.path.join(cfg.dataset, TRUTH_FILE)
        x0 = read_truth(truth_path)[1].take(0) if os.path.exists(truth_path) and len(dataset) else None
    if x0 is not None:
        # IMU biases always start at zero
        x0 = x0._replace(bg=np.zeros(3), ba=np.zeros(3))
    return dataset, x0


def _estimate_one(est_cfg, robot, dataset, x0, out_dir, log_path, progress=False):
    """Run one estimator and write its files; returns (label, failures)."""
    geometry = robot.geometry()
    params0 = est_cfg.initial_lengths(len(geometry), robot.calf_length)
    if x0 is None and len(dataset):
        x0 = initial_state(dataset[0], params0, geometry)
    elif x0 is None:
        x0 = RobotState.create(n_legs=len(geometry))
    label = est_cfg.label
    estimator = DualEstimator(est_cfg, geometry, x0, params0,
                              calf_bounds=robot.calf_bounds,
                              log_path=os.path.join(log_path, label) if log_path else None,
                              progress=progress)
    result = estimator.run(dataset)
    estimate_path, params_path = estimate_paths(out_dir, label)
    if result.outputs:
        write_estimate(result.times(), result.states(), estimate_path)
        write_params(result.times(), result.params(), params_path)
    logger.info('%s: %d frames, %d failures', label, len(result.outputs), len(result.failures))
    return label, result.failures


def cmd_estimate(config_path, progress=False):
    cfg = load_run_config_file(config_path)
    ensure_dir(cfg.output_dir)
    write_text(dump_run_config(cfg), os.path.join(cfg.output_dir, 'config.yaml'))
    dataset, x0 = _load_data(cfg, progress)

    jobs = [(est, cfg.robot, dataset, x0, cfg.output_dir, cfg.log_path) for est in cfg.estimators]
    if cfg.workers > 1 and len(jobs) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.workers) as executor:
            futures = [executor.submit(_estimate_one, *job) for job in jobs]
            results = [future.result() for future in futures]
    else:
        results = [_estimate_one(*job, progress=progress) for job in jobs]

    failed = [(label, failures) for label, failures in results if failures]
    for label, failures in failed:
        for _, message in failures:
            sys.stderr.write('%s: %s\n' % (label, message))
    print('%d frames, %d estimators written to %s' % (len(dataset), len(results), cfg.output_dir))
    return 1 if failed else 0


def _variant_order(label):
    """VARIANTS order first, then custom names alphabetically."""
    return (VARIANTS.index(label) if label in VARIANTS else len(VARIANTS), label)


def find_estimates(est_dir):
    labels = []
    for name in os.listdir(est_dir):
        if name.startswith('estimate_') and name.endswith('.csv'):
            labels.append(name[len('estimate_'):-len('.csv')])
    return sorted(labels, key=_variant_order)


def cmd_evaluate(est_dir, truth_path):
    if not os.path.isfile(truth_path):
        raise FileNotFoundError('ground truth file not found: %s' % truth_path)
    _, truth, _ = read_truth(truth_path)
    outputs = {}
    for label in find_estimates(est_dir):
        _, states = read_estimate(estimate_paths(est_dir, label)[0])
        outputs[label] = states.p
    reports = compare(outputs, truth.p)
    write_metrics(reports, os.path.join(est_dir, METRICS_FILE))
    print(format_table(reports))
    return 0
