"""Where things live on disk, and writing files without leaving half of one behind."""

from __future__ import annotations

import sys
from pathlib import Path


def project_root() -> Path:
    """The folder the program lives in, and writes its .env and log into.

    Frozen into a one-file executable the sources are unpacked into a temporary
    directory that vanishes on exit, so there the root is the executable's folder.
    """
    if getattr(sys, 'frozen', False):
        return Path(sys.executable).resolve().parent
    return Path(__file__).resolve().parent.parent


PROJECT_ROOT = project_root()

# Bundled data: the default skeleton topology.
DATA_ROOT = Path(__file__).resolve().parent / 'data'


def data_file(name: str) -> Path:
    return DATA_ROOT / name


def atomic_write_text(path: Path, text: str) -> None:
    """Write through a sibling temp file and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + '.tmp')
    tmp.write_text(text, encoding='utf-8')
    tmp.replace(path)


def record_path(out_dir: Path, record_id: str, suffix: str) -> Path:
    """``<out_dir>/<record_id><suffix>``, with path separators in the id made safe."""
    safe = ''.join('_' if c in '/\\:*?"<>|' else c for c in str(record_id)) or 'record'
    return Path(out_dir) / f'{safe}{suffix}'
