"""Result tables and their CSV / JSON / Markdown renderings."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from cbcporo.core.config import OutputFormat, utc_timestamp

REPORT_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["experiment", "created", "columns", "rows", "meta"],
    "properties": {
        "experiment": {"type": "string"},
        "created": {"type": "string"},
        "columns": {"type": "array", "items": {"type": "string"}},
        "rows": {"type": "array", "items": {"type": "object"}},
        "meta": {"type": "object"},
    },
}

_JSON_TYPES = {"object": dict, "array": list, "string": str}


@dataclass
class ResultTable:
    """Ordered columns and one dict per row; ``meta`` carries run-level facts."""

    experiment: str
    columns: list[str]
    rows: list[dict[str, Any]] = field(default_factory=list)
    meta: dict[str, Any] = field(default_factory=dict)
    created: str = field(default_factory=utc_timestamp)

    def add_row(self, **values: Any) -> None:
        unknown = set(values) - set(self.columns)
        if unknown:
            raise KeyError(f"columns not in table: {', '.join(sorted(unknown))}")
        self.rows.append({c: values.get(c) for c in self.columns})

    def column(self, name: str) -> list[Any]:
        return [row[name] for row in self.rows]

    def to_dict(self) -> dict[str, Any]:
        return {
            "experiment": self.experiment,
            "created": self.created,
            "columns": list(self.columns),
            "rows": [_jsonable(row) for row in self.rows],
            "meta": _jsonable(self.meta),
        }


def _jsonable(value: Any) -> Any:
    """Plain JSON values; non-finite floats become null."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "item") and callable(value.item):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if hasattr(value, "value") and not isinstance(value, (int, float, str, bool)):
        return value.value
    return value


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


# ---------------------------------------------------------------------------
# Renderers
# ---------------------------------------------------------------------------

def render_csv(table: ResultTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([_cell(row.get(c)) for c in table.columns])
    return buf.getvalue()


def render_json(table: ResultTable) -> str:
    return json.dumps(table.to_dict(), indent=2, ensure_ascii=False) + "\n"


def render_markdown(table: ResultTable) -> str:
    lines = [
        f"# {table.experiment}",
        "",
        f"- Created (UTC): {table.created}",
    ]
    for key, value in table.meta.items():
        if isinstance(value, (dict, list)):
            value = json.dumps(_jsonable(value))
        lines.append(f"- {key}: {value}")
    lines += [
        "",
        "| " + " | ".join(table.columns) + " |",
        "|" + "|".join("---" for _ in table.columns) + "|",
    ]
    for row in table.rows:
        lines.append("| " + " | ".join(_cell(row.get(c)) for c in table.columns) + " |")
    return "\n".join(lines) + "\n"


RENDERERS = {
    OutputFormat.CSV: render_csv,
    OutputFormat.JSON: render_json,
    OutputFormat.MARKDOWN: render_markdown,
}


def render(table: ResultTable, fmt: OutputFormat | str = OutputFormat.CSV) -> str:
    return RENDERERS[OutputFormat(fmt)](table)


def write_report(table: ResultTable, path: Path, fmt: OutputFormat | str = OutputFormat.CSV) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render(table, fmt), encoding="utf-8")
    return path


def write_vertex_fields(path: Path, columns: list[str], rows: list[list[Any]]) -> Path:
    """Plain CSV of per-vertex values."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate_report(data: dict[str, Any]) -> list[str]:
    """Issues found checking ``data`` against ``REPORT_SCHEMA``; empty when valid."""
    issues: list[str] = []
    if not isinstance(data, dict):
        return ["report must be an object"]
    for key in REPORT_SCHEMA["required"]:
        if key not in data:
            issues.append(f"missing key '{key}'")
    for key, spec in REPORT_SCHEMA["properties"].items():
        if key in data and not isinstance(data[key], _JSON_TYPES[spec["type"]]):
            issues.append(f"'{key}' must be of type {spec['type']}")
    if issues:
        return issues

    columns = data["columns"]
    if not all(isinstance(c, str) for c in columns):
        issues.append("'columns' must hold strings")
    for i, row in enumerate(data["rows"]):
        if not isinstance(row, dict):
            issues.append(f"row {i} is not an object")
        elif list(row) != columns:
            issues.append(f"row {i} keys do not match columns")
    return issues
