"""Result tables, CSV/SVG emission and run manifests."""

from __future__ import annotations

import csv
import enum
import json
import math
import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "ReportFormat",
    "ResultTable",
    "emit_report",
    "read_results_csv",
    "write_manifest",
    "format_value",
]


class ReportFormat(str, enum.Enum):
    CSV = "csv"
    SVG = "svg"


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


@dataclass
class ResultTable:
    """Per-repetition observations keyed by a parameter tuple."""

    name: str
    params: tuple
    x: str | None = None
    series: tuple = ()
    rows: dict = field(default_factory=dict)

    def add(self, key: Sequence, value: float) -> None:
        key = tuple(key)
        if len(key) != len(self.params):
            raise ValueError(f"expected {len(self.params)} parameters, got {len(key)}")
        self.rows.setdefault(key, []).append(float(value))

    def __len__(self) -> int:
        return len(self.rows)

    def aggregate(self) -> list[dict]:
        """Rows sorted by parameter tuple with ``mean``, ``std`` (ddof=1; 0 for a single rep) and ``reps``."""
        out = []
        for key in sorted(self.rows):
            vals = np.asarray(self.rows[key])
            std = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
            row = dict(zip(self.params, key))
            row.update(mean=float(np.mean(vals)), std=std, reps=int(vals.size))
            out.append(row)
        return out

    def repetitions(self) -> list[dict]:
        out = []
        for key in sorted(self.rows):
            for r, v in enumerate(self.rows[key]):
                row = dict(zip(self.params, key))
                row.update(rep=r, value=v)
                out.append(row)
        return out


def _write_csv(path: Path, header: list[str], rows: Iterable[dict]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(row[h]) for h in header])


def _parse_cell(text: str):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def read_results_csv(path) -> list[dict]:
    """Parse a results CSV back into dicts with numeric cells converted."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [{k: _parse_cell(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def _plot_svg(table: ResultTable, path: Path, log_y: bool) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "dprf"
    rows = table.aggregate()
    if table.x is None:
        raise ValueError(f"table {table.name!r} has no x-axis parameter to plot")
    lines: dict = {}
    for row in rows:
        label = ", ".join(f"{s}={format_value(row[s])}" for s in table.series) or "value"
        lines.setdefault(label, []).append((row[table.x], row["mean"]))
    fig, ax = plt.subplots(figsize=(6, 4))
    for label in sorted(lines):
        pts = sorted(lines[label])
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=label)
    ax.set_xlabel(table.x)
    ax.set_ylabel("mean")
    if log_y:
        ax.set_yscale("log")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit_report(
    table: ResultTable,
    out_dir,
    formats: Sequence[ReportFormat | str] = (ReportFormat.CSV,),
    log_y: bool = False,
) -> list[Path]:
    """Write ``<name>.csv`` and ``<name>_reps.csv`` (and ``<name>.svg`` on request)."""
    if len(table) == 0:
        raise ValueError(f"result table {table.name!r} is empty")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    written = []
    formats = [ReportFormat(f) for f in formats]
    if ReportFormat.CSV in formats:
        p = out / f"{table.name}.csv"
        _write_csv(p, [*table.params, "mean", "std", "reps"], table.aggregate())
        written.append(p)
        p = out / f"{table.name}_reps.csv"
        _write_csv(p, [*table.params, "rep", "value"], table.repetitions())
        written.append(p)
    if ReportFormat.SVG in formats:
        p = out / f"{table.name}.svg"
        _plot_svg(table, p, log_y)
        written.append(p)
    return written


def _versions() -> dict:
    import scipy

    from dprf import __version__

    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "dprf": __version__}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def write_manifest(out_dir, config: dict, seed: int, *, command: str, incomplete: bool,
                   warnings: Sequence[str] = (), outputs: Sequence[str] = (), extra: dict | None = None,
                   error: str | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "command": command,
        "config": config,
        "seed": seed,
        "versions": _versions(),
        "incomplete": incomplete,
        "warnings": list(warnings),
        "outputs": sorted(outputs),
    }
    if error is not None:
        doc["error"] = error
    if extra:
        doc.update(extra)
    p = out / "manifest.json"
    p.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return p
