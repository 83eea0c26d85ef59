"""A thread pool map for per-record work.

Records are independent, so they fan out over a pool and come back in input order.
A record that raises does not stop the others: its failure is returned in its slot
for the caller to count, log and decide about. numpy and scipy release the GIL in
their inner loops, which is what makes threads worth having here.
"""

from __future__ import annotations

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Generic, Iterable, List, Optional, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')


@dataclass
class Outcome(Generic[R]):
    index: int
    value: Optional[R] = None
    error: Optional[BaseException] = None

    @property
    def ok(self) -> bool:
        return self.error is None


class Cancellation:
    """Cooperative stop flag shared with every task."""

    def __init__(self) -> None:
        self._event = threading.Event()

    def cancel(self) -> None:
        self._event.set()

    @property
    def cancelled(self) -> bool:
        return self._event.is_set()


def parallel_map(func: Callable[[T], R], items: Iterable[T], threads: int = 1,
                 cancellation: Optional[Cancellation] = None,
                 catch: Any = Exception) -> List[Outcome[R]]:
    """Apply `func` to every item; results in input order, one Outcome each.

    Exceptions of type `catch` are captured per item. Anything else, and
    KeyboardInterrupt in particular, cancels the remaining items and propagates.
    """
    items = list(items)
    cancellation = cancellation or Cancellation()

    def run(index: int) -> Outcome[R]:
        if cancellation.cancelled:
            return Outcome(index, error=RuntimeError('cancelled'))
        try:
            return Outcome(index, value=func(items[index]))
        except catch as exc:
            return Outcome(index, error=exc)
        except BaseException:
            cancellation.cancel()
            raise

    if threads <= 1 or len(items) <= 1:
        return [run(index) for index in range(len(items))]

    workers = min(threads, len(items))
    logger.debug('Mapping %d item(s) over %d thread(s)', len(items), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        try:
            return list(pool.map(run, range(len(items))))
        except BaseException:
            cancellation.cancel()
            raise
