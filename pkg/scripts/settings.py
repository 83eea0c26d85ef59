"""Run-wide configuration, stored in a ``.env`` file at the project root.

Values resolve in this order:  process environment  >  .env file  >  built-in default.
A ``--config run.json`` overrides these for one run, and explicit command-line flags
override that in turn; see :mod:`scripts.pipeline`. Nothing here writes the .env file.
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path
from typing import Any, Callable, Dict, List, NamedTuple, Optional

from .paths import PROJECT_ROOT

ENV_PATH = PROJECT_ROOT / '.env'

logger = logging.getLogger(__name__)


class Setting(NamedTuple):
    default: str
    kind: str
    help: str


SCHEMA: Dict[str, Setting] = {
    # --- runtime
    'FISHREPRO_THREADS': Setting('4', 'int', 'Upper bound on worker threads for per-record work.'),
    'FISHREPRO_LOG_LEVEL': Setting('INFO', 'str',
                                   'Console log level; the log file always gets DEBUG.'),

    # --- crops
    'FISHREPRO_CROP_SIZE': Setting('256', 'int', 'Side of the square output crop, pixels.'),
    'FISHREPRO_ZOOM_MARGIN': Setting('0.95', 'float',
                                     'Share of the half-crop the farthest bbox side midpoint '
                                     'may use.'),
    'FISHREPRO_ALPHA_T': Setting('110', 'float',
                                 'Hybrid threshold, degrees: PH below it, DS from it up.'),
    'FISHREPRO_ALPHA_TS': Setting('0,110,135,180', 'list',
                                  'Thresholds a sweep compares, degrees.'),
    'FISHREPRO_FALLBACK_TO_DS': Setting('false', 'bool',
                                        'Re-crop with DS when a PH crop cannot hold the box.'),

    # --- evaluation
    'FISHREPRO_BIN_WIDTH': Setting('10', 'float', 'Width of the MPJA bins, degrees.'),
    'FISHREPRO_PCK_THRESHOLD': Setting('150', 'float', 'PCK distance threshold, mm.'),
    'FISHREPRO_ROOT_INDEX': Setting('0', 'int',
                                    'Root joint for relative metrics (0 is the pelvis).'),
    'FISHREPRO_MAX_SKIP_FRACTION': Setting('0.10', 'float',
                                           'Share of skipped or failed records that fails a run.'),

    # --- triangulation
    'FISHREPRO_HUBER_DELTA': Setting('2.0', 'float', 'Huber loss knee, pixels.'),
    'FISHREPRO_LAMBDA_SYM': Setting('1.0', 'float',
                                    'Weight of the left/right bone symmetry term.'),
}

_BOOLEANS = {'true': True, 'yes': True, 'on': True, '1': True,
             'false': False, 'no': False, 'off': False, '0': False}


def _int(text: str) -> int:
    return int(float(text))


def _bool(text: str) -> bool:
    return _BOOLEANS[text.strip().lower()]


class Settings:
    """The project's ``.env``, read on construction."""

    def __init__(self, env_path: Optional[Path] = None):
        self.env_path = Path(env_path) if env_path else ENV_PATH
        self._values: Dict[str, str] = {}
        self.reload()

    def reload(self) -> None:
        self._values = read_env_file(self.env_path)

    # -------------------------------------------------------------- reading

    def get(self, key: str, default: Any = None) -> str:
        """The raw string for `key`, after environment and .env have had their say."""
        from_env = os.environ.get(key, '')
        if from_env != '':
            return from_env
        if key in self._values:
            return self._values[key]
        if default is not None:
            return str(default)
        return SCHEMA[key].default if key in SCHEMA else ''

    def _typed(self, key: str, parse: Callable[[str], Any], default: Any) -> Any:
        raw = self.get(key)
        try:
            return parse(raw)
        except (KeyError, TypeError, ValueError):
            pass
        if default is not None:
            return default
        logger.warning('%s=%r is not a valid %s; using the default', key, raw,
                       SCHEMA[key].kind if key in SCHEMA else 'value')
        return parse(SCHEMA[key].default)

    def get_int(self, key: str, default: Optional[int] = None) -> int:
        return self._typed(key, _int, default)

    def get_float(self, key: str, default: Optional[float] = None) -> float:
        return self._typed(key, float, default)

    def get_bool(self, key: str, default: Optional[bool] = None) -> bool:
        return self._typed(key, _bool, default)

    def get_float_list(self, key: str) -> List[float]:
        """Comma-separated numbers; entries that are not numbers are dropped."""
        numbers = []
        for part in filter(None, (p.strip() for p in self.get(key).split(','))):
            try:
                numbers.append(float(part))
            except ValueError:
                logger.warning('%s: ignoring %r, not a number', key, part)
        return numbers

    def as_dict(self) -> Dict[str, str]:
        return {key: self.get(key) for key in SCHEMA}

    def set(self, key: str, value: Any) -> None:
        """Override a value in memory for the rest of this process."""
        if isinstance(value, bool):
            text = str(value).lower()
        elif isinstance(value, (list, tuple)):
            text = ','.join(map(str, value))
        else:
            text = str(value)
        self._values[key] = text


def _key_of(line: str) -> Optional[str]:
    """The key an assignment line sets, or None for comments and blanks."""
    stripped = line.strip()
    if not stripped or stripped.startswith('#') or '=' not in stripped:
        return None
    return stripped.split('=', 1)[0].strip()


def read_env_file(path: Path) -> Dict[str, str]:
    if not path.exists():
        return {}
    values = {}
    for line in path.read_text(encoding='utf-8').splitlines():
        key = _key_of(line)
        if key is not None:
            values[key] = _unquote(line.split('=', 1)[1])
    return values


def _unquote(text: str) -> str:
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] == '"':
        try:
            return json.loads(text)
        except ValueError:
            return text[1:-1]
    if len(text) >= 2 and text[0] == text[-1] == "'":
        return text[1:-1]
    # unquoted values may carry a trailing comment
    return text.split(' #', 1)[0].strip()


_settings: Optional[Settings] = None


def get_settings(reload: bool = False) -> Settings:
    """Process-wide Settings singleton."""
    global _settings
    if _settings is None or reload:
        _settings = Settings()
    return _settings
