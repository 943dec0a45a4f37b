# TimeFieldsLib/app/reports.py

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import openpyxl

from .planner import PlanResult

BASE_COLUMNS = ["method", "sr_percent", "time_mean", "time_std", "length_mean", "length_std", "n_queries"]
TIMING_COLUMNS = {"time_mean", "time_std"}


@dataclass
class MethodRow:
    method: str
    sr_percent: float
    time_mean: float
    time_std: float
    length_mean: float
    length_std: float
    n_queries: int
    extras: dict = field(default_factory=dict)

    @classmethod
    def from_results(cls, method: str, results: list[PlanResult], **extras) -> "MethodRow":
        """Time and length statistics use successful queries only; failures only lower the SR."""
        n = len(results)
        ok = [r for r in results if r.success]
        times = np.asarray([r.wall_time for r in ok])
        lengths = np.asarray([r.length for r in ok])
        return cls(
            method=method,
            sr_percent=100.0 * len(ok) / n if n else 0.0,
            time_mean=float(times.mean()) if ok else math.nan,
            time_std=float(times.std()) if ok else math.nan,
            length_mean=float(lengths.mean()) if ok else math.nan,
            length_std=float(lengths.std()) if ok else math.nan,
            n_queries=n,
            extras=dict(extras),
        )

    def values(self, include_timing: bool = True) -> dict:
        out = {c: getattr(self, c) for c in BASE_COLUMNS if include_timing or c not in TIMING_COLUMNS}
        out.update({k: v for k, v in self.extras.items() if include_timing or not k.endswith("_seconds")})
        return out


def _cell(value):
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return value


def _json_value(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


@dataclass
class BenchReport:
    title: str
    rows: list[MethodRow]
    env_digest: str = ""
    config_digest: str = ""
    comparisons: list[dict] = field(default_factory=list)

    def columns(self, include_timing: bool = True) -> list[str]:
        cols = [c for c in BASE_COLUMNS if include_timing or c not in TIMING_COLUMNS]
        for row in self.rows:
            for key in row.values(include_timing):
                if key not in cols:
                    cols.append(key)
        return cols

    def row(self, method: str) -> MethodRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    def to_csv_string(self, include_timing: bool = True) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        cols = self.columns(include_timing)
        writer.writerow(cols)
        for r in self.rows:
            values = r.values(include_timing)
            writer.writerow([_cell(values.get(c, "")) for c in cols])
        return buffer.getvalue()

    def to_csv(self, output_path, include_timing: bool = True) -> Path:
        output_path = Path(output_path)
        os.makedirs(output_path.parent, exist_ok=True)
        output_path.write_text(self.to_csv_string(include_timing), encoding="utf-8")
        return output_path

    def to_dict(self, include_timing: bool = True) -> dict:
        return {
            "title": self.title,
            "env_digest": self.env_digest,
            "config_digest": self.config_digest,
            "rows": [{k: _json_value(v) for k, v in r.values(include_timing).items()} for r in self.rows],
            "comparisons": self.comparisons,
        }

    def to_json(self, output_path, include_timing: bool = True) -> Path:
        output_path = Path(output_path)
        os.makedirs(output_path.parent, exist_ok=True)
        output_path.write_text(json.dumps(self.to_dict(include_timing), indent=2), encoding="utf-8")
        return output_path

    def to_table(self) -> str:
        """Fixed-width text table, SR/Time/Length first."""
        cols = self.columns()
        body = []
        for r in self.rows:
            values = r.values()
            body.append([_format(values.get(c, "")) for c in cols])
        widths = [max(len(c), *(len(line[k]) for line in body)) if body else len(c) for k, c in enumerate(cols)]
        lines = [self.title, "  ".join(c.ljust(w) for c, w in zip(cols, widths))]
        lines.append("  ".join("-" * w for w in widths))
        lines.extend("  ".join(v.ljust(w) for v, w in zip(line, widths)) for line in body)
        for comp in self.comparisons:
            lines.append(", ".join(f"{k}={_format(v)}" for k, v in comp.items()))
        return "\n".join(lines) + "\n"


def _format(value) -> str:
    if isinstance(value, float):
        return "-" if math.isnan(value) else f"{value:.4g}"
    return str(value)


def save_reports_xlsx(reports: list[BenchReport], output_path) -> Path:
    """One worksheet per report."""
    output_path = Path(output_path)
    os.makedirs(output_path.parent, exist_ok=True)
    workbook = openpyxl.Workbook()
    workbook.remove(workbook.active)
    used = set()
    for report in reports:
        name = report.title[:31] or "report"
        base, k = name, 1
        while name in used:
            suffix = f"_{k}"
            name = base[:31 - len(suffix)] + suffix
            k += 1
        used.add(name)
        sheet = workbook.create_sheet(name)
        cols = report.columns()
        sheet.append(cols)
        for r in report.rows:
            values = r.values()
            sheet.append([_json_value(values.get(c)) for c in cols])
    workbook.save(output_path)
    return output_path


def load_reports_xlsx(path) -> dict[str, list[dict]]:
    workbook = openpyxl.load_workbook(path)
    out = {}
    for sheet_name in workbook.sheetnames:
        rows = list(workbook[sheet_name].iter_rows(values_only=True))
        if not rows:
            continue
        headers = rows[0]
        out[sheet_name] = [dict(zip(headers, row)) for row in rows[1:]]
    return out
