"""
Structured logging for pointcube.

Diagnostics go to standard error as JSON records; per-step training losses go
to a JSON-lines metrics file through a dedicated logger.
"""

import json
import logging
import os
import sys
from pathlib import Path

from pythonjsonlogger.json import JsonFormatter

LOG_FORMAT = '%(asctime)s %(name)s %(levelname)s %(module)s %(funcName)s %(lineno)d %(message)s'
METRIC_FIELDS = ('step', 'epoch', 'global', 'local', 'total')


def resolve_level(level=None):
    """
    Resolve the log level from an explicit value or the environment.

    Explicit argument > POINTCUBE_LOG_LEVEL > WARNING when POINTCUBE_QUIET is set > INFO.
    """
    if isinstance(level, int):
        return level
    if level is None:
        quiet = os.getenv('POINTCUBE_QUIET', 'false').lower() in ('1', 'true', 'yes', 'on')
        level = os.getenv('POINTCUBE_LOG_LEVEL', 'WARNING' if quiet else 'INFO')
    name = str(level).upper()
    levels = logging.getLevelNamesMapping()
    if name not in levels or name == 'NOTSET':
        valid = sorted(set(levels) - {'NOTSET'})
        logging.getLogger(__name__).warning(
            f"Invalid log level '{name}'. Valid levels: {', '.join(valid)}. Using INFO.")
        return logging.INFO
    return levels[name]


def setup_logging(app_name='pointcube', level=None, stream=None):
    """
    Sets up a logger that writes JSON records to standard error.

    Args:
        app_name: Logger name (e.g., 'pointcube')
        level: Level name or number; resolved from the environment when None
        stream: Output stream (default: sys.stderr)

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(app_name)
    logger.setLevel(resolve_level(level))
    logger.propagate = False

    # Clear existing handlers to avoid duplicates
    logger.handlers.clear()

    handler = logging.StreamHandler(stream if stream is not None else sys.stderr)
    formatter = JsonFormatter(LOG_FORMAT, rename_fields={'funcName': 'funcname'})
    handler.setFormatter(formatter)
    logger.addHandler(handler)
    return logger


class MetricsWriter:
    """
    JSON-lines sink for per-step loss records.

    Records carry no timestamp, so two runs with equal seeds write identical bytes.
    """

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.logger = logging.getLogger(f"pointcube.metrics.{self.path.resolve()}")
        self.logger.setLevel(logging.INFO)
        self.logger.propagate = False
        self.logger.handlers.clear()
        self.handler = logging.FileHandler(self.path, mode='w', encoding='utf-8')
        self.handler.setFormatter(JsonFormatter('%(message)s'))
        self.logger.addHandler(self.handler)

    def write(self, record):
        extra = {key: record[key] for key in METRIC_FIELDS if key in record}
        self.logger.info('train_step', extra=extra)

    def close(self):
        self.handler.flush()
        self.handler.close()
        self.logger.removeHandler(self.handler)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()
        return False


def read_metrics(path):
    """Parse a metrics file back into a list of dicts (without the message key)."""
    records = []
    with open(path, encoding='utf-8') as f:
        for line in f:
            if line.strip():
                record = json.loads(line)
                record.pop('message', None)
                records.append(record)
    return records
