import csv
import io
import json

import pytest

from cellloc.cli import RESULT_COLUMNS, load_topology, main, parse_topology
from cellloc.exceptions import ConfigurationError


def blocks(text):
    return [list(csv.reader(io.StringIO(b))) for b in text.strip("\n").split("\n\n")]


def topo_doc(btss=None, mobiles=None):
    return {
        "bscs": [{"id": 1, "x": 0.0, "y": 0.0}],
        "btss": btss if btss is not None else [
            {"id": 1, "x": 0.0, "y": 0.0, "bsc": 1},
            {"id": 2, "x": 10.0, "y": 0.0, "bsc": 1},
            {"id": 3, "x": 0.0, "y": 10.0, "bsc": 1},
        ],
        "mobiles": mobiles if mobiles is not None else [{"id": 1, "x": 2.0, "y": 3.0}],
    }


class TestLoadTopology:
    def test_bundled(self):
        topo = load_topology("worked_example")
        assert [b.id for b in topo.btss] == [1, 2, 3]
        assert topo.mobile(1).serving_bts == 1
        assert topo.mobile(1).query == b"nearest hotels"

    def test_file(self, tmp_path):
        p = tmp_path / "t.json"
        p.write_text(json.dumps(topo_doc()))
        assert len(load_topology(p).btss) == 3

    def test_small_bss(self):
        doc = topo_doc(btss=topo_doc()["btss"][:2])
        with pytest.raises(ConfigurationError, match="at least 3"):
            parse_topology(json.dumps(doc))

    def test_duplicate_id(self):
        btss = topo_doc()["btss"] + [{"id": 2, "x": 5.0, "y": 5.0, "bsc": 1}]
        with pytest.raises(ConfigurationError, match="duplicate BTS id 2"):
            parse_topology(json.dumps(topo_doc(btss=btss)))

    def test_malformed_json_position(self):
        with pytest.raises(ConfigurationError, match=r"t\.json:2:"):
            parse_topology('{"bscs": [],\n  oops}', "t.json")

    @pytest.mark.parametrize("patch,where", [
        ({"x": "far"}, r"btss\[0\]\.x"),
        ({"bsc": -1}, r"btss\[0\]\.bsc"),
        ({"neighbors": ["2"]}, r"btss\[0\]\.neighbors\[0\]"),
    ])
    def test_field_errors_point_at_field(self, patch, where):
        doc = topo_doc()
        doc["btss"][0].update(patch)
        with pytest.raises(ConfigurationError, match=where):
            parse_topology(json.dumps(doc))

    def test_missing_field(self):
        doc = topo_doc()
        del doc["mobiles"][0]["y"]
        with pytest.raises(ConfigurationError, match=r"mobiles\[0\]: missing field 'y'"):
            parse_topology(json.dumps(doc))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError, match="cannot read"):
            load_topology(tmp_path / "nope.json")


class TestMain:
    def test_both_csv(self, tmp_path, capsys):
        out = tmp_path / "r.csv"
        assert main(["--topology", "worked_example", "--output", str(out)]) == 0
        results, summaries, series, comparison = blocks(out.read_text())
        assert results[0] == RESULT_COLUMNS
        rows = {r[0]: dict(zip(results[0], r)) for r in results[1:]}
        assert rows["ddba"]["messages"] == "9" and rows["cdba"]["messages"] == "11"
        assert all(float(r["error_km"]) < 1e-6 for r in rows.values())
        assert [r[0] for r in summaries[1:]] == ["ddba", "cdba"]
        assert len(series) == 3
        cmp = dict(zip(comparison[0], comparison[1]))
        assert cmp["message_delta_per_query"] == "2.0"
        assert (cmp["ddba_db_entries"], cmp["cdba_db_entries"]) == ("6", "3")

    def test_single_scenario_has_no_comparison(self, capsys):
        assert main(["--topology", "worked_example", "--scenario", "cdba"]) == 0
        assert len(blocks(capsys.readouterr().out)) == 3

    @pytest.mark.parametrize("flag,value", [("--noise-sigma", "-1"),
                                            ("--speed-of-light", "0"),
                                            ("--processing-delay", "nan")])
    def test_bad_numbers(self, flag, value, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--topology", "worked_example", flag, value])
        assert exc.value.code != 0

    def test_bad_topology_exit_code(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text("{")
        assert main(["--topology", str(p)]) == 2
        assert "bad.json:1:" in capsys.readouterr().err

    def test_repeatable(self, tmp_path):
        outs = []
        for i in range(2):
            out, trace = tmp_path / f"o{i}.csv", tmp_path / f"t{i}.txt"
            assert main(["--topology", "worked_example", "--seed", "42", "--noise-sigma", "1e-9",
                         "--output", str(out), "--trace", str(trace)]) == 0
            outs.append((out.read_bytes(), trace.read_bytes()))
        assert outs[0] == outs[1]

    def test_trace_lines(self, tmp_path):
        trace = tmp_path / "t.txt"
        main(["--topology", "worked_example", "--output", str(tmp_path / "o"),
              "--trace", str(trace)])
        lines = trace.read_text().splitlines()
        # DDBA: 9 hops plus the report; CDBA: 14 hops
        assert len(lines) == 24
        t, src, dst, kind, nbytes = lines[0].split(", ")
        assert (src, dst, kind) == ("mobile:1", "bts:1", "HELLO")
        assert float(t) > 0 and int(nbytes) == 24

    def test_csv_and_json_agree(self, tmp_path):
        c, j = tmp_path / "o.csv", tmp_path / "o.json"
        main(["--topology", "worked_example", "--output", str(c)])
        main(["--topology", "worked_example", "--output", str(j), "--format", "json"])
        report = json.loads(j.read_text())
        results = blocks(c.read_text())[0]
        for row, rec in zip(results[1:], report["results"]):
            for col, cell in zip(results[0], row):
                value = rec[col]
                if isinstance(value, float):
                    assert float(cell) == value
                else:
                    assert cell == str(value)

    def test_unwritable_output(self, tmp_path, capsys):
        target = tmp_path / "missing-dir" / "out.csv"
        assert main(["--topology", "worked_example", "--output", str(target)]) == 1
        assert "cannot write" in capsys.readouterr().err

    def test_failures_are_rows_not_errors(self, tmp_path, capsys):
        doc = topo_doc(btss=[{"id": i, "x": float(i), "y": 0.0, "bsc": 1} for i in (1, 2, 3)])
        p = tmp_path / "line.json"
        p.write_text(json.dumps(doc))
        assert main(["--topology", str(p), "--scenario", "ddba"]) == 0
        results = blocks(capsys.readouterr().out)[0]
        row = dict(zip(results[0], results[1]))
        assert row["status"] == "degenerate-topology"
        assert row["est_x_km"] == ""
