"""JSON-lines files: ground truth, predictions, detections, per-record run output.

One JSON object per line. Reading is forgiving - a corrupt line is logged and skipped,
so one bad record never costs the rest of a run. Writing goes through a temporary file
and a rename, so a killed run leaves the previous file intact rather than half of a
new one.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List

import numpy as np

logger = logging.getLogger(__name__)


def _default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f'{type(value).__name__} is not JSON serialisable')


def dumps(record: Dict[str, Any]) -> str:
    """One record as a single line, keys sorted so repeated runs diff cleanly."""
    return json.dumps(record, default=_default, sort_keys=True, ensure_ascii=False,
                      allow_nan=False)


def iter_jsonl(path: Path) -> Iterator[Dict[str, Any]]:
    path = Path(path)
    with open(path, 'r', encoding='utf-8') as handle:
        for number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except ValueError:
                logger.warning('Skipping corrupt line %d of %s', number, path.name)
                continue
            if not isinstance(record, dict):
                logger.warning('Skipping line %d of %s: not an object', number, path.name)
                continue
            yield record


def read_jsonl(path: Path) -> List[Dict[str, Any]]:
    return list(iter_jsonl(path))


def write_jsonl(path: Path, records: Iterable[Dict[str, Any]]) -> int:
    """Replace `path` with `records`. Returns how many were written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + '.tmp')
    count = 0
    with open(tmp, 'w', encoding='utf-8') as handle:
        for record in records:
            handle.write(dumps(record) + '\n')
            count += 1
    tmp.replace(path)
    logger.debug('Wrote %d record(s) to %s', count, path)
    return count

