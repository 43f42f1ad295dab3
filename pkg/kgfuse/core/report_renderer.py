"""
Report Renderer
Renders metrics, comparison tables, gradient checks and training traces as
fixed-width text, CSV and JSON artifacts
"""

import logging
import os
from pathlib import Path
from typing import List, Optional, Sequence, Union

import pandas as pd
from pydantic import BaseModel

from kgfuse.models.report import (
    ComparisonReport,
    EpochTrace,
    GradCheckReport,
    MetricsReport,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]

TRACE_COLUMNS = ["epoch", "mean_loss", "val_accuracy", "val_weighted_f1"]


def format_delta(full: float, variant: float, precision: int = 4) -> str:
    """Change of a variant against the full model, e.g. "(↓ 0.65)" """
    delta = round(variant - full, precision)
    if delta == 0:
        return f"(= {0:.{precision}f})"
    arrow = "↓" if delta < 0 else "↑"
    return f"({arrow} {abs(delta):.{precision}f})"


def fixed_width_table(
    headers: Sequence[str], rows: Sequence[Sequence[str]], title: str = ""
) -> str:
    widths = [len(h) for h in headers]
    for row in rows:
        widths = [max(w, len(cell)) for w, cell in zip(widths, row)]

    def line(cells: Sequence[str]) -> str:
        return " | ".join(cell.ljust(w) for cell, w in zip(cells, widths)).rstrip()

    rule = "-+-".join("-" * w for w in widths)
    out = [title] if title else []
    out += [line(headers), rule]
    out += [line(row) for row in rows]
    return "\n".join(out) + "\n"


class ReportRenderer:
    """Service for rendering experiment reports as text tables and CSV files"""

    def __init__(self, precision: int = 4) -> None:
        self.precision = precision

    def _number(self, value: Optional[float]) -> str:
        return "" if value is None else f"{value:.{self.precision}f}"

    def comparison_frame(self, report: ComparisonReport) -> pd.DataFrame:
        """
        One row per variant with formatted w-F1 / Acc and deltas

        Deltas are taken against report.baseline when it names a row.
        """
        baseline = next((row for row in report.rows if row.name == report.baseline), None)
        records = []
        for row in report.rows:
            record = {
                "name": row.name,
                "weighted_f1": self._number(row.weighted_f1),
                "accuracy": self._number(row.accuracy),
            }
            if baseline is not None:
                record["weighted_f1_delta"] = record["accuracy_delta"] = ""
                if row is not baseline:
                    record["weighted_f1_delta"] = format_delta(
                        baseline.weighted_f1, row.weighted_f1, self.precision
                    )
                    record["accuracy_delta"] = format_delta(
                        baseline.accuracy, row.accuracy, self.precision
                    )
            records.append(record)
        columns = ["name", "weighted_f1", "accuracy"]
        if baseline is not None:
            columns += ["weighted_f1_delta", "accuracy_delta"]
        return pd.DataFrame(records, columns=columns)

    def render_comparison_table(self, report: ComparisonReport) -> str:
        frame = self.comparison_frame(report)
        has_deltas = "weighted_f1_delta" in frame.columns
        rows = []
        for record in frame.to_dict("records"):
            wf1, acc = record["weighted_f1"], record["accuracy"]
            if has_deltas and record["weighted_f1_delta"]:
                wf1 = f"{wf1} {record['weighted_f1_delta']}"
                acc = f"{acc} {record['accuracy_delta']}"
            rows.append([record["name"], wf1, acc])
        footer = (
            f"test records: {report.num_test_records}  seed: {report.seed}  "
            f"split: {report.test_split_hash[:16]}\n"
        )
        return fixed_width_table(["Model", "w-F1", "Acc"], rows, title=report.title) + footer

    def render_metrics_table(self, report: MetricsReport) -> str:
        rows = [
            [name, self._number(f1), str(support)]
            for name, f1, support in zip(report.class_names, report.per_class_f1, report.support)
        ]
        table = fixed_width_table(["Class", "F1", "Support"], rows)
        summary = (
            f"accuracy: {self._number(report.accuracy)}  "
            f"weighted F1: {self._number(report.weighted_f1)}  "
            f"records: {report.num_evaluated}\n"
        )
        return table + summary

    def render_gradcheck_table(self, reports: Sequence[GradCheckReport]) -> str:
        rows = [
            [
                report.label,
                f"{report.max_rel_error:.3e}",
                "PASS" if report.passed else "FAIL",
                ", ".join(report.failing_tensors),
            ]
            for report in reports
        ]
        tol = reports[0].tol if reports else 0.0
        return fixed_width_table(
            ["Variant", "max rel err", "status", "failing tensors"],
            rows,
            title=f"Gradient check (tol {tol:.0e})",
        )

    def trace_frame(self, trace: Sequence[EpochTrace]) -> pd.DataFrame:
        return pd.DataFrame([row.model_dump() for row in trace], columns=TRACE_COLUMNS)

    def render_trace_table(self, trace: Sequence[EpochTrace]) -> str:
        rows = [
            [
                str(row.epoch),
                f"{row.mean_loss:.6f}",
                self._number(row.val_accuracy),
                self._number(row.val_weighted_f1),
            ]
            for row in trace
        ]
        return fixed_width_table(TRACE_COLUMNS, rows)

    def _write_text(self, path: Path, text: str) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)

    def _write_json(self, path: Path, model: BaseModel) -> None:
        self._write_text(path, model.model_dump_json(indent=2) + "\n")

    def _write_csv(self, path: Path, frame: pd.DataFrame) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, lineterminator="\n")

    def write_comparison(
        self, report: ComparisonReport, out_dir: PathLike, stem: str
    ) -> str:
        """Write <stem>.json/.csv/.txt and return the text table"""
        out_dir = Path(out_dir)
        table = self.render_comparison_table(report)
        self._write_json(out_dir / f"{stem}.json", report)
        self._write_csv(out_dir / f"{stem}.csv", self.comparison_frame(report))
        self._write_text(out_dir / f"{stem}.txt", table)
        logger.info("Wrote %s report to %s", stem, out_dir)
        return table

    def write_metrics(self, report: MetricsReport, out_dir: PathLike, stem: str) -> str:
        out_dir = Path(out_dir)
        table = self.render_metrics_table(report)
        self._write_json(out_dir / f"{stem}.json", report)
        per_class = pd.DataFrame({
            "class": report.class_names,
            "f1": report.per_class_f1,
            "support": report.support,
        })
        self._write_csv(out_dir / f"{stem}.csv", per_class)
        self._write_text(out_dir / f"{stem}.txt", table)
        return table

    def write_gradcheck(
        self, reports: List[GradCheckReport], out_dir: PathLike, stem: str = "gradcheck"
    ) -> str:
        out_dir = Path(out_dir)
        table = self.render_gradcheck_table(reports)
        payload = "[\n" + ",\n".join(r.model_dump_json(indent=2) for r in reports) + "\n]\n"
        self._write_text(out_dir / f"{stem}.json", payload)
        rows = [
            {"variant": r.label, "tensor": res.name, "checked": res.checked, "skipped": res.skipped,
             "max_rel_error": res.max_rel_error, "passed": res.passed}
            for r in reports for res in r.results
        ]
        self._write_csv(out_dir / f"{stem}.csv", pd.DataFrame(
            rows, columns=["variant", "tensor", "checked", "skipped", "max_rel_error", "passed"]
        ))
        self._write_text(out_dir / f"{stem}.txt", table)
        return table

    def write_trace(
        self, trace: Sequence[EpochTrace], out_dir: PathLike, stem: str = "trace"
    ) -> str:
        out_dir = Path(out_dir)
        table = self.render_trace_table(trace)
        self._write_csv(out_dir / f"{stem}.csv", self.trace_frame(trace))
        self._write_text(out_dir / f"{stem}.txt", table)
        return table
