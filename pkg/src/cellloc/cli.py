"""Command-line runner: load a topology, simulate, write CSV or JSON.

Topology files are JSON with three top-level lists::

    {"bscs":    [{"id": 111, "x": 5.0, "y": 5.0}],
     "btss":    [{"id": 1, "x": 1.0, "y": 2.0, "bsc": 111, "neighbors": [2, 3]}],
     "mobiles": [{"id": 1, "x": 0.92, "y": 7.44, "serving_bts": 1, "query": "..."}]}

Coordinates are kilometers. ``neighbors``, ``serving_bts`` and ``query`` are
optional. The name ``worked_example`` loads the bundled three-station example.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from importlib import resources
from pathlib import Path

from .exceptions import ConfigurationError
from .geometry import Point, PropagationConstants
from .metrics import compare, cumulative_elapsed, summarize
from .protocol import Scenario
from .simulator import Bsc, Bts, Mobile, SimConfig, Topology, db_entry_count, run_scenario

RESULT_COLUMNS = ["scenario", "mobile_id", "status", "est_x_km", "est_y_km", "true_x_km",
                  "true_y_km", "error_km", "messages", "elapsed_s", "residual"]
SUMMARY_COLUMNS = ["scenario", "runs", "successes", "mean_error_km", "max_error_km",
                   "mean_elapsed_s", "total_messages", "failures", "db_entries"]
SERIES_COLUMNS = ["scenario", "mobile_id", "elapsed_s", "cumulative_elapsed_s"]
COMPARISON_COLUMNS = ["runs", "message_delta_per_query", "elapsed_delta_s",
                      "ddba_db_entries", "cdba_db_entries"]

BUNDLED = {"worked_example": "worked_example.json"}


def _field(obj, key, where, kind=float, required=True):
    if key not in obj:
        if required:
            raise ConfigurationError(f"{where}: missing field '{key}'")
        return None
    value = obj[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)) \
                or not math.isfinite(value):
            raise ConfigurationError(f"{where}.{key}: expected a finite number, got {value!r}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int) or value < 0:
            raise ConfigurationError(
                f"{where}.{key}: expected a non-negative integer, got {value!r}")
        return value
    if kind is str:
        if not isinstance(value, str):
            raise ConfigurationError(f"{where}.{key}: expected a string, got {value!r}")
        return value
    if kind is list:
        if not isinstance(value, list):
            raise ConfigurationError(f"{where}.{key}: expected a list, got {value!r}")
        return value
    raise TypeError(kind)


def _items(doc, key):
    if key not in doc:
        raise ConfigurationError(f"missing top-level key '{key}'")
    items = doc[key]
    if not isinstance(items, list):
        raise ConfigurationError(f"'{key}' must be a list")
    for i, item in enumerate(items):
        if not isinstance(item, dict):
            raise ConfigurationError(f"{key}[{i}]: expected an object")
    return items


def parse_topology(text: str, source: str = "<topology>") -> Topology:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(
            f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{source}: top level must be an object")
    bscs = [Bsc(_field(b, "id", f"bscs[{i}]", int),
                Point(_field(b, "x", f"bscs[{i}]"), _field(b, "y", f"bscs[{i}]")))
            for i, b in enumerate(_items(doc, "bscs"))]
    btss = []
    for i, b in enumerate(_items(doc, "btss")):
        where = f"btss[{i}]"
        neighbors = _field(b, "neighbors", where, list, required=False)
        if neighbors is not None:
            for j, n in enumerate(neighbors):
                if isinstance(n, bool) or not isinstance(n, int):
                    raise ConfigurationError(f"{where}.neighbors[{j}]: expected a BTS id")
            neighbors = tuple(neighbors)
        btss.append(Bts(_field(b, "id", where, int),
                        Point(_field(b, "x", where), _field(b, "y", where)),
                        _field(b, "bsc", where, int), neighbors))
    mobiles = []
    for i, m in enumerate(_items(doc, "mobiles")):
        where = f"mobiles[{i}]"
        query = (_field(m, "query", where, str, required=False) or "").encode("utf-8")
        if len(query) > 0xFFFF:
            raise ConfigurationError(f"{where}.query: longer than 65535 bytes")
        mobiles.append(Mobile(_field(m, "id", where, int),
                              Point(_field(m, "x", where), _field(m, "y", where)),
                              query,
                              _field(m, "serving_bts", where, int, required=False)))
    try:
        return Topology(tuple(btss), tuple(bscs), tuple(mobiles))
    except ConfigurationError as exc:
        raise ConfigurationError(f"{source}: {exc}") from None


def load_topology(path) -> Topology:
    """Read and validate a topology file, or a bundled one by name."""
    path = str(path)
    if path in BUNDLED and not Path(path).exists():
        text = resources.files("cellloc").joinpath("data").joinpath(BUNDLED[path]).read_text()
        return parse_topology(text, path)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read topology {path}: {exc.strerror}") from None
    return parse_topology(text, path)


def build_report(topology: Topology, scenarios, base: SimConfig, trace=None) -> dict:
    """Run every requested scenario and collect plain-value tables."""
    report = {"results": [], "summaries": [], "series": [], "comparison": None}
    summaries = {}
    for scenario in scenarios:
        config = SimConfig(scenario, base.consts, base.timing_noise_sigma,
                           base.processing_delay, base.rng_seed, base.eq9_literal)
        results = run_scenario(config, topology, trace=trace)
        for r in results:
            est = r.estimated
            report["results"].append({
                "scenario": scenario.value,
                "mobile_id": r.mobile_id,
                "status": r.status,
                "est_x_km": est.x if est else None,
                "est_y_km": est.y if est else None,
                "true_x_km": r.true_position.x,
                "true_y_km": r.true_position.y,
                "error_km": r.position_error,
                "messages": r.logical_messages,
                "elapsed_s": r.elapsed_sim_time,
                "residual": r.residual,
            })
        for r, cum in zip(results, cumulative_elapsed(results)):
            report["series"].append({"scenario": scenario.value, "mobile_id": r.mobile_id,
                                     "elapsed_s": r.elapsed_sim_time,
                                     "cumulative_elapsed_s": cum})
        s = summarize(results, scenario, db_entry_count(topology, scenario))
        summaries[scenario] = s
        report["summaries"].append({
            "scenario": scenario.value,
            "runs": s.runs,
            "successes": s.successes,
            "mean_error_km": s.mean_position_error,
            "max_error_km": s.max_position_error,
            "mean_elapsed_s": s.mean_elapsed,
            "total_messages": s.total_messages,
            "failures": dict(s.failures),
            "db_entries": s.db_entries,
        })
    if len(summaries) == 2:
        c = compare(summaries[Scenario.DDBA], summaries[Scenario.CDBA])
        report["comparison"] = {
            "runs": c.runs,
            "message_delta_per_query": c.message_delta_per_query,
            "elapsed_delta_s": c.elapsed_delta,
            "ddba_db_entries": c.ddba_db_entries,
            "cdba_db_entries": c.cdba_db_entries,
        }
    return report


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, dict):
        return ";".join(f"{k}={v}" for k, v in value.items())
    return repr(value) if isinstance(value, float) else str(value)


def render_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    blocks = [(RESULT_COLUMNS, report["results"]),
              (SUMMARY_COLUMNS, report["summaries"]),
              (SERIES_COLUMNS, report["series"])]
    if report["comparison"] is not None:
        blocks.append((COMPARISON_COLUMNS, [report["comparison"]]))
    for i, (columns, rows) in enumerate(blocks):
        if i:
            w.writerow([])
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row[c]) for c in columns])
    return buf.getvalue()


def render_json(report: dict) -> str:
    return json.dumps(report, indent=2) + "\n"


def _non_negative(text):
    value = float(text)
    if not (math.isfinite(value) and value >= 0):
        raise argparse.ArgumentTypeError(f"must be a finite number >= 0, got {text}")
    return value


def _positive(text):
    value = float(text)
    if not (math.isfinite(value) and value > 0):
        raise argparse.ArgumentTypeError(f"must be a finite number > 0, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cellloc",
        description="Simulate hello-message localization of mobiles in a cellular network.")
    p.add_argument("--scenario", choices=["ddba", "cdba", "both"], default="both")
    p.add_argument("--topology", required=True,
                   help="topology JSON file, or 'worked_example' for the bundled one")
    p.add_argument("--noise-sigma", type=_non_negative, default=0.0,
                   help="std. dev. of timestamp read noise in seconds (default 0)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--speed-of-light", type=_positive, default=PropagationConstants().c,
                   help="signal speed in km/s")
    p.add_argument("--processing-delay", type=_non_negative, default=0.0,
                   help="per-hop processing delay in seconds")
    p.add_argument("--eq9-literal", action="store_true",
                   help="invert BSC loops with the one-way timing form")
    p.add_argument("--output", default="-", help="output file ('-' for stdout)")
    p.add_argument("--format", dest="output_format", choices=["csv", "json"], default="csv")
    p.add_argument("--trace", dest="trace_path", default=None,
                   help="write one line per delivered hop to this file")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        topology = load_topology(args.topology)
        base = SimConfig(consts=PropagationConstants(args.speed_of_light),
                         timing_noise_sigma=args.noise_sigma,
                         processing_delay=args.processing_delay,
                         rng_seed=args.seed, eq9_literal=args.eq9_literal)
        scenarios = ([Scenario.DDBA, Scenario.CDBA] if args.scenario == "both"
                     else [Scenario(args.scenario)])
        trace = [] if args.trace_path else None
        report = build_report(topology, scenarios, base, trace)
    except ConfigurationError as exc:
        print(f"cellloc: error: {exc}", file=sys.stderr)
        return 2

    text = render_csv(report) if args.output_format == "csv" else render_json(report)
    try:
        if args.output == "-":
            sys.stdout.write(text)
        else:
            Path(args.output).write_text(text)
        if trace is not None:
            Path(args.trace_path).write_text("".join(r.format() + "\n" for r in trace))
    except OSError as exc:
        print(f"cellloc: error: cannot write output: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
