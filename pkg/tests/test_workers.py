"""The per-record thread pool and the small CLI helpers."""

from __future__ import annotations

import logging
import math
import time

import pytest

from scripts import utils
from scripts.utils import format_number, format_table, parse_float_list, setup_logging
from scripts.workers import Cancellation, parallel_map


# ---------------------------------------------------------------- parallel_map

@pytest.mark.parametrize('threads', [1, 4])
def test_results_come_back_in_input_order(threads):
    def slow_square(n):
        time.sleep(0.01 * (5 - n))
        return n * n

    outcomes = parallel_map(slow_square, range(6), threads=threads)
    assert [o.value for o in outcomes] == [0, 1, 4, 9, 16, 25]
    assert [o.index for o in outcomes] == list(range(6))


def test_one_failure_does_not_stop_the_rest():
    def invert(n):
        return 1.0 / n

    outcomes = parallel_map(invert, [2, 0, 4], threads=2)
    assert [o.ok for o in outcomes] == [True, False, True]
    assert isinstance(outcomes[1].error, ZeroDivisionError)
    assert outcomes[2].value == 0.25


def test_errors_outside_catch_propagate():
    def lookup(key):
        return {}[key]

    with pytest.raises(KeyError):
        parallel_map(lookup, ['a', 'b'], threads=2, catch=ValueError)


def test_a_cancelled_map_runs_nothing():
    calls = []
    cancellation = Cancellation()
    cancellation.cancel()
    outcomes = parallel_map(calls.append, range(3), threads=1, cancellation=cancellation)
    assert calls == [] and not any(o.ok for o in outcomes)


# ---------------------------------------------------------------- formatting

def test_numbers_format_with_a_dash_for_missing_values():
    assert format_number(None) == '-'
    assert format_number(math.nan) == '-'
    assert format_number(3.14159, 2) == '3.14'


def test_tables_align_their_columns():
    table = format_table(['A', 'NUM'], [['x', '1'], ['long', '22']])
    assert table.splitlines() == ['A     NUM', '----  ---', 'x       1', 'long   22']
    assert format_table(['A', 'B'], []).splitlines() == ['A  B', '-  -']


def test_float_lists_skip_blanks_and_refuse_junk():
    assert parse_float_list('0, 110,,135') == [0.0, 110.0, 135.0]
    with pytest.raises(ValueError):
        parse_float_list('0,abc')


# ---------------------------------------------------------------- logging

@pytest.fixture
def fresh_logging(monkeypatch):
    monkeypatch.setattr(utils, '_CONFIGURED', False)
    root = logging.getLogger()
    before = list(root.handlers)
    level = root.level
    yield root
    for handler in list(root.handlers):
        if handler not in before:
            root.removeHandler(handler)
            handler.close()
    for handler in before:
        if handler not in root.handlers:
            root.addHandler(handler)
    root.setLevel(level)


def test_the_log_file_gets_debug_output(fresh_logging, tmp_path):
    log_file = tmp_path / 'logs' / 'run.log'
    setup_logging('WARNING', log_file)
    logging.getLogger('fishrepro.test').debug('detail for the file')
    for handler in fresh_logging.handlers:
        handler.flush()
    assert 'detail for the file' in log_file.read_text(encoding='utf-8')


def test_logging_is_configured_only_once(fresh_logging, tmp_path):
    setup_logging('INFO', tmp_path / 'first.log')
    setup_logging('INFO', tmp_path / 'second.log')
    assert not (tmp_path / 'second.log').exists()
    setup_logging('INFO', tmp_path / 'third.log', force=True)
    assert (tmp_path / 'third.log').exists()
