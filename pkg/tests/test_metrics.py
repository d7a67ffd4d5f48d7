import itertools
import math
import random

import pytest

from cellloc.exceptions import ComparisonError
from cellloc.geometry import Point
from cellloc.metrics import (
    SUCCESS,
    LocalizationResult,
    compare,
    cumulative_elapsed,
    summarize,
)
from cellloc.protocol import Scenario


def ok(i, err=0.0, elapsed=1e-4, messages=9):
    return LocalizationResult(i, Point(0, 0), SUCCESS, Point(err, 0), messages, elapsed, 0.0)


def failed(i, status="degenerate-topology", messages=0):
    return LocalizationResult(i, Point(0, 0), status, logical_messages=messages)


def test_ten_successes():
    s = summarize([ok(i, err=0.1 * i) for i in range(10)], Scenario.DDBA)
    assert (s.runs, s.successes, s.total_messages) == (10, 10, 90)
    assert s.mean_position_error == pytest.approx(0.45)
    assert s.max_position_error == pytest.approx(0.9)
    assert s.failures == {}


def test_empty():
    s = summarize([], "cdba")
    assert s.runs == 0 and s.successes == 0 and s.total_messages == 0
    assert s.mean_position_error is None and s.mean_elapsed is None
    assert s.max_position_error is None


def test_failure_tally():
    results = [ok(i) for i in range(8)] + [failed(8), failed(9, "inconsistent-measurement", 9)]
    s = summarize(results, Scenario.DDBA)
    assert s.successes == 8
    assert s.failures == {"degenerate-topology": 1, "inconsistent-measurement": 1}
    assert s.total_messages == 81
    # failed runs never feed the means
    assert s.mean_position_error == 0.0


def test_permutation_invariant():
    rng = random.Random(4)
    results = [ok(i, rng.uniform(0, 1e-3), rng.uniform(1e-5, 1e-3)) for i in range(12)]
    results += [failed(20), failed(21, "timing")]
    base = summarize(results, Scenario.DDBA)
    for _ in range(20):
        rng.shuffle(results)
        assert summarize(results, Scenario.DDBA) == base


def test_cumulative():
    results = [ok(i, elapsed=e) for i, e in enumerate([1.0, 2.0, 0.5])]
    assert cumulative_elapsed(results) == [1.0, 3.0, 3.5]
    assert cumulative_elapsed([]) == []


def test_success_requires_estimate():
    with pytest.raises(ValueError):
        LocalizationResult(1, Point(0, 0), SUCCESS)


def test_mixed_scenarios_rejected():
    r = LocalizationResult(1, Point(0, 0), SUCCESS, Point(0, 0), scenario=Scenario.CDBA)
    with pytest.raises(ValueError):
        summarize([r], Scenario.DDBA)


def test_compare_self_is_zero():
    s = summarize([ok(i) for i in range(5)], Scenario.DDBA, db_entries=6)
    c = compare(s, s)
    assert c.message_delta_per_query == 0.0
    assert c.elapsed_delta == 0.0
    assert c.db_entry_delta == 0


def test_compare_worked_counts():
    d = summarize([ok(i, messages=9, elapsed=1e-4) for i in range(4)], Scenario.DDBA, 6)
    c = summarize([ok(i, messages=11, elapsed=2e-4) for i in range(4)], Scenario.CDBA, 3)
    cmp = compare(d, c)
    assert cmp.message_delta_per_query == 2.0
    assert cmp.elapsed_delta == pytest.approx(1e-4)
    assert cmp.db_entry_delta == -3


def test_compare_mismatched_runs():
    a = summarize([ok(1)], Scenario.DDBA)
    b = summarize([ok(1), ok(2)], Scenario.CDBA)
    with pytest.raises(ComparisonError):
        compare(a, b)


def test_compare_without_successes():
    a = summarize([failed(1)], Scenario.DDBA)
    c = compare(a, a)
    assert c.elapsed_delta is None
    assert c.db_entry_delta is None


@pytest.mark.parametrize("order", list(itertools.permutations(range(3))))
def test_max_error_is_order_free(order):
    errs = [0.3, 0.1, 0.2]
    s = summarize([ok(i, errs[i]) for i in order], Scenario.DDBA)
    assert math.isclose(s.max_position_error, 0.3)
