import logging
import os

LOG_LEVEL_ENV = 'DBKF_LOG_LEVEL'
LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


def setup_logging(level=None):
    """Configure the root logger once; the level comes from $DBKF_LOG_LEVEL unless given."""
    level = (level or os.environ.get(LOG_LEVEL_ENV) or 'INFO').upper()
    if not isinstance(logging.getLevelName(level), int):
        raise ValueError('unknown log level %r in $%s' % (level, LOG_LEVEL_ENV))
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logging.getLogger().setLevel(level)
    return level


def ensure_dir(path):
    if path and not os.path.isdir(path):
        os.makedirs(path)
    return path


def read_text(path):
    with open(path, 'r') as f:
        return f.read()


def write_text(text, path):
    with open(path, 'w') as f:
        f.write(text)


def estimate_paths(out_dir, label):
    """(estimate csv, params csv) of one estimator label."""
    return (os.path.join(out_dir, 'estimate_%s.csv' % label),
            os.path.join(out_dir, 'params_%s.csv' % label))
