"""Tests for cbcporo.core.report."""

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from cbcporo.core.precond import PrecondKind
from cbcporo.core.report import (
    ResultTable,
    render,
    render_csv,
    render_json,
    render_markdown,
    validate_report,
    write_report,
    write_vertex_fields,
)


@pytest.fixture
def table() -> ResultTable:
    t = ResultTable("sweep", ["n", "iterations", "converged", "error"], meta={"failures": 1})
    t.add_row(n=8, iterations=np.int64(21), converged=True, error=1.5e-7)
    t.add_row(n=32, iterations=250, converged=False, error=float("nan"))
    return t


class TestResultTable:
    def test_missing_cells_are_none(self):
        t = ResultTable("x", ["a", "b"])
        t.add_row(a=1)
        assert t.rows == [{"a": 1, "b": None}]

    def test_unknown_column(self, table: ResultTable):
        with pytest.raises(KeyError, match="extra"):
            table.add_row(extra=1)

    def test_column(self, table: ResultTable):
        assert table.column("n") == [8, 32]

    def test_to_dict_is_plain_json(self, table: ResultTable):
        table.meta["preconditioner"] = PrecondKind.ROBUST
        data = json.loads(json.dumps(table.to_dict()))
        assert data["rows"][0]["iterations"] == 21
        assert data["rows"][1]["error"] is None
        assert data["meta"]["preconditioner"] == "robust"


class TestRenderers:
    def test_csv(self, table: ResultTable):
        rows = list(csv.reader(render_csv(table).splitlines()))
        assert rows[0] == ["n", "iterations", "converged", "error"]
        assert rows[1] == ["8", "21", "true", "1.5e-07"]
        assert rows[2][2] == "false"

    def test_json(self, table: ResultTable):
        data = json.loads(render_json(table))
        assert data["experiment"] == "sweep"
        assert data["meta"] == {"failures": 1}
        assert validate_report(data) == []

    def test_markdown(self, table: ResultTable):
        text = render_markdown(table)
        assert text.startswith("# sweep\n")
        assert "- Created (UTC):" in text
        assert "- failures: 1" in text
        assert "| n | iterations | converged | error |" in text
        assert "| 8 | 21 | true | 1.5e-07 |" in text

    def test_render_by_name(self, table: ResultTable):
        assert render(table, "md") == render_markdown(table)


class TestWrite:
    def test_write_report_creates_parents(self, table: ResultTable, tmp_path: Path):
        path = write_report(table, tmp_path / "out" / "sweep.json", "json")
        assert path.is_file()
        assert json.loads(path.read_text())["columns"][0] == "n"

    def test_vertex_fields(self, tmp_path: Path):
        path = write_vertex_fields(tmp_path / "f.csv", ["vertex", "x"], [[0, 0.25], [1, 0.5]])
        assert path.read_text().splitlines() == ["vertex,x", "0,0.25", "1,0.5"]


class TestValidateReport:
    def test_missing_keys(self):
        issues = validate_report({"experiment": "sweep"})
        assert "missing key 'rows'" in issues

    def test_wrong_types(self):
        issues = validate_report(
            {"experiment": 1, "created": "t", "columns": [], "rows": [], "meta": {}}
        )
        assert issues == ["'experiment' must be of type string"]

    def test_row_keys(self, table: ResultTable):
        data = table.to_dict()
        data["rows"][1] = {"n": 1}
        assert validate_report(data) == ["row 1 keys do not match columns"]

    def test_not_an_object(self):
        assert validate_report([]) == ["report must be an object"]
