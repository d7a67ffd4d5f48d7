"""Per-query results, scenario summaries and DDBA-vs-CDBA comparison."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .exceptions import ComparisonError
from .geometry import Point, euclidean_distance
from .protocol import Scenario

SUCCESS = "success"

# logical messages in one complete localization
EXPECTED_MESSAGES = {Scenario.DDBA: 9, Scenario.CDBA: 11}


@dataclass(frozen=True)
class LocalizationResult:
    mobile_id: int
    true_position: Point
    status: str
    estimated: Point | None = None
    logical_messages: int = 0
    elapsed_sim_time: float = 0.0
    residual: float | None = None
    scenario: Scenario | None = None
    detail: str = ""

    def __post_init__(self):
        if self.status == SUCCESS and self.estimated is None:
            raise ValueError("successful result without an estimate")

    @property
    def ok(self) -> bool:
        return self.status == SUCCESS

    @property
    def position_error(self) -> float | None:
        if self.estimated is None:
            return None
        return euclidean_distance(self.estimated, self.true_position)


@dataclass(frozen=True)
class ScenarioSummary:
    scenario: Scenario
    runs: int
    successes: int
    mean_position_error: float | None
    max_position_error: float | None
    mean_elapsed: float | None
    total_messages: int
    failures: Mapping[str, int] = field(default_factory=dict)
    db_entries: int | None = None


def _mean(values: Sequence[float]) -> float | None:
    return math.fsum(values) / len(values) if values else None


def summarize(results: Sequence[LocalizationResult], scenario: Scenario,
              db_entries: int | None = None) -> ScenarioSummary:
    """Aggregate one scenario's results. Means cover successful runs only.

    The output does not depend on the order of ``results``.
    """
    scenario = Scenario(scenario)
    for r in results:
        if r.scenario is not None and r.scenario is not scenario:
            raise ValueError(f"result for mobile {r.mobile_id} is from {r.scenario.value}")
    ok = [r for r in results if r.ok]
    # sorted so fsum input order cannot leak into the last bit
    errors = sorted(r.position_error for r in ok)
    elapsed = sorted(r.elapsed_sim_time for r in ok)
    failures = Counter(r.status for r in results if not r.ok)
    return ScenarioSummary(
        scenario=scenario,
        runs=len(results),
        successes=len(ok),
        mean_position_error=_mean(errors),
        max_position_error=errors[-1] if errors else None,
        mean_elapsed=_mean(elapsed),
        total_messages=sum(r.logical_messages for r in results),
        failures=dict(sorted(failures.items())),
        db_entries=db_entries,
    )


def cumulative_elapsed(results: Sequence[LocalizationResult]) -> list[float]:
    """Running total of per-query elapsed time, in result order."""
    total, out = 0.0, []
    for r in results:
        total += r.elapsed_sim_time
        out.append(total)
    return out


@dataclass(frozen=True)
class Comparison:
    runs: int
    message_delta_per_query: float
    elapsed_delta: float | None
    ddba_db_entries: int | None
    cdba_db_entries: int | None

    @property
    def db_entry_delta(self) -> int | None:
        if self.ddba_db_entries is None or self.cdba_db_entries is None:
            return None
        return self.cdba_db_entries - self.ddba_db_entries


def compare(ddba: ScenarioSummary, cdba: ScenarioSummary) -> Comparison:
    """CDBA minus DDBA, per query, over matched runs."""
    if ddba.runs != cdba.runs:
        raise ComparisonError(f"run counts differ: {ddba.runs} vs {cdba.runs}")
    runs = ddba.runs
    delta = (cdba.total_messages - ddba.total_messages) / runs if runs else 0.0
    if ddba.mean_elapsed is None or cdba.mean_elapsed is None:
        elapsed = None
    else:
        elapsed = cdba.mean_elapsed - ddba.mean_elapsed
    return Comparison(runs, delta, elapsed, ddba.db_entries, cdba.db_entries)
