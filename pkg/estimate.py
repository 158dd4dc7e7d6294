import argparse
import sys

from core.commands import cmd_estimate
from core.exceptions import EstimationError
from core.utils import setup_logging

parser = argparse.ArgumentParser(description='Run the configured estimators over a dataset or a simulated scenario.')

parser.add_argument('--config', type=str, required=True, help='Run configuration (YAML) with a scenario or dataset block and the estimator list.')
parser.add_argument('--progress', action='store_true', default=False, help='Show one progress bar per estimator.')

def main():
    args = parser.parse_args()
    setup_logging()
    try:
        return cmd_estimate(args.config, progress=args.progress)
    except (EstimationError, OSError) as e:
        sys.stderr.write('estimate: %s\n' % e)
        return 2

if __name__ == "__main__":
    sys.exit(main())
