import argparse
import sys

from core.commands import cmd_evaluate
from core.exceptions import EstimationError
from core.utils import setup_logging

parser = argparse.ArgumentParser(description='Compare estimated trajectories against ground truth.')

parser.add_argument('--est', type=str, required=True, help='Directory holding estimate_<variant>.csv files; metrics.csv is written here.')
parser.add_argument('--truth', type=str, required=True, help='Ground-truth trajectory (truth.csv).')

def main():
    args = parser.parse_args()
    setup_logging()
    try:
        return cmd_evaluate(args.est, args.truth)
    except (EstimationError, OSError) as e:
        sys.stderr.write('evaluate: %s\n' % e)
        return 2

if __name__ == "__main__":
    sys.exit(main())
