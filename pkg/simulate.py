import argparse
import sys

from core.commands import cmd_simulate
from core.exceptions import EstimationError
from core.utils import setup_logging

parser = argparse.ArgumentParser(description='Simulate a trotting quadruped and write sensors, truth and calf lengths.')

parser.add_argument('--config', type=str, required=True, help='Run configuration (YAML) holding a scenario block.')
parser.add_argument('--out', type=str, required=True, help='Directory receiving sensors.csv, truth.csv and params_truth.csv.')
parser.add_argument('--progress', action='store_true', default=False, help='Show a progress bar while simulating.')

def main():
    args = parser.parse_args()
    setup_logging()
    try:
        return cmd_simulate(args.config, args.out, progress=args.progress)
    except (EstimationError, OSError) as e:
        sys.stderr.write('simulate: %s\n' % e)
        return 2

if __name__ == "__main__":
    sys.exit(main())
