"""Shared helpers: logging setup and the small number formatting the CLI needs."""

from __future__ import annotations

import logging
import logging.handlers
import math
import sys
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

CONSOLE_FORMAT = '%(levelname)-7s %(name)-28s %(message)s'
FILE_FORMAT = '%(asctime)s ' + CONSOLE_FORMAT
LOG_FILE_BYTES = 2_000_000
LOG_FILE_BACKUPS = 3

# Third-party loggers held at WARNING.
_QUIET = ('PIL',)

_CONFIGURED = False


def _handler(handler: logging.Handler, level: int, fmt: str) -> logging.Handler:
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(fmt))
    return handler


def _level(name: str) -> int:
    value = logging.getLevelName(str(name).upper())
    return value if isinstance(value, int) else logging.INFO


def setup_logging(level: str = 'INFO', log_file: Optional[Path] = None,
                  force: bool = False) -> logging.Logger:
    """Console at `level`, a rotating DEBUG log file beside it. Later calls are no-ops
    unless `force`."""
    global _CONFIGURED
    root = logging.getLogger()
    if _CONFIGURED and not force:
        return root

    for old in root.handlers[:]:
        root.removeHandler(old)
        old.close()
    root.setLevel(logging.DEBUG)
    root.addHandler(_handler(logging.StreamHandler(sys.stdout), _level(level), CONSOLE_FORMAT))

    if log_file is None:
        from .paths import PROJECT_ROOT
        log_file = PROJECT_ROOT / 'fishrepro.log'
    log_file = Path(log_file)
    try:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        rotating = logging.handlers.RotatingFileHandler(
            log_file, maxBytes=LOG_FILE_BYTES, backupCount=LOG_FILE_BACKUPS, encoding='utf-8')
        root.addHandler(_handler(rotating, logging.DEBUG, FILE_FORMAT))
    except OSError as exc:
        root.warning('No log file at %s: %s', log_file, exc)

    for name in _QUIET:
        logging.getLogger(name).setLevel(logging.WARNING)
    _CONFIGURED = True
    return root


def parse_float_list(text: str) -> List[float]:
    """``"0,110,135"`` -> ``[0.0, 110.0, 135.0]``. Raises ValueError on junk."""
    return [float(part) for part in str(text).split(',') if part.strip()]


def format_number(value: Optional[float], digits: int = 1) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return '-'
    return f'{value:.{digits}f}'


def format_table(header: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    """Plain fixed-width table, first column left-aligned, the rest right-aligned."""
    rows = [list(map(str, row)) for row in rows]
    widths = [max(len(str(h)), *(len(row[i]) for row in rows)) if rows else len(str(h))
              for i, h in enumerate(header)]

    def line(cells: Sequence[str]) -> str:
        return '  '.join(str(cell).ljust(widths[i]) if i == 0 else str(cell).rjust(widths[i])
                         for i, cell in enumerate(cells))

    return '\n'.join([line(header), line(['-' * w for w in widths])] + [line(r) for r in rows])
