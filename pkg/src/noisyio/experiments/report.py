"""Run reports: an aligned text table and its JSON twin."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..errors import IoError
from .config import MODE_ORDER


@dataclass
class RowResult:
    """Metrics of one inference mode or baseline."""

    label: str
    errors: dict = field(default_factory=dict)      # target -> relative L2
    coverage: dict = field(default_factory=dict)    # target -> fraction within 2 std
    mean_std: dict = field(default_factory=dict)    # target -> grid-averaged predictive std
    scalars: dict = field(default_factory=dict)     # name -> [mean, std]
    acceptance: float | None = None
    n_divergent: int | None = None

    def __post_init__(self):
        for v in self.coverage.values():
            if not 0.0 <= v <= 1.0:
                raise ValueError("coverage must lie in [0, 1]")
        for v in self.errors.values():
            if v < 0:
                raise ValueError("errors must be non-negative")


def row_sort_key(label: str) -> tuple:
    if label in MODE_ORDER:
        return (0, MODE_ORDER.index(label), label)
    return (1, 0, label)


@dataclass
class RunReport:
    experiment: str
    config_hash: str
    seeds: dict
    rows: list
    notes: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    wall_time: float | None = None

    def row(self, label: str) -> RowResult:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)

    def to_dict(self) -> dict:
        """JSON form; wall time is left out so identical runs serialise identically."""
        d = asdict(self)
        d.pop("wall_time")
        d["rows"] = [asdict(r) for r in sorted(self.rows, key=lambda r: row_sort_key(r.label))]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        d = dict(d)
        rows = [RowResult(**r) for r in d.pop("rows")]
        return cls(rows=rows, **d)


def _targets(report: RunReport) -> list:
    seen = []
    for r in report.rows:
        for t in list(r.errors) + list(r.coverage) + list(r.mean_std):
            if t not in seen:
                seen.append(t)
    return seen


def render_table(reports) -> str:
    """Aligned table, one block per report and one row per mode or baseline."""
    if isinstance(reports, RunReport):
        reports = [reports]
    blocks = []
    for rep in reports:
        lines = [f"experiment {rep.experiment}  config {rep.config_hash}  seeds "
                 + " ".join(f"{k}={v}" for k, v in sorted(rep.seeds.items()))]
        lines += [f"note: {n}" for n in rep.notes]
        targets = _targets(rep)
        scalars = sorted({s for r in rep.rows for s in r.scalars})
        header = ["method"]
        header += [f"err {t} (%)" for t in targets]
        header += [f"cov {t}" for t in targets]
        header += [f"std {t}" for t in targets]
        header += list(scalars) + ["accept"]
        body = []
        for r in sorted(rep.rows, key=lambda r: row_sort_key(r.label)):
            cells = [r.label]
            cells += [f"{100 * r.errors[t]:.2f}" if t in r.errors else "-" for t in targets]
            cells += [f"{r.coverage[t]:.3f}" if t in r.coverage else "-" for t in targets]
            cells += [f"{r.mean_std[t]:.4g}" if t in r.mean_std else "-" for t in targets]
            cells += [f"{r.scalars[s][0]:.4f} +/- {r.scalars[s][1]:.4f}" if s in r.scalars else "-" for s in scalars]
            cells.append("-" if r.acceptance is None else f"{r.acceptance:.3f}")
            body.append(cells)
        widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
        fmt = lambda row: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths)))
        lines.append(fmt(header))
        lines.append("  ".join("-" * w for w in widths))
        lines += [fmt(row) for row in body]
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def emit_report(reports, path) -> tuple:
    """Write ``path`` (text) and ``path`` with a ``.json`` suffix (its twin)."""
    if isinstance(reports, RunReport):
        reports = [reports]
    path = Path(path)
    json_path = path.with_suffix(".json")
    payload = [r.to_dict() for r in reports]
    doc = payload[0] if len(payload) == 1 else {"reports": payload}
    try:
        path.write_text(render_table(reports))
        json_path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write report {path}: {exc}") from exc
    return path, json_path


def load_reports(json_path) -> list:
    try:
        doc = json.loads(Path(json_path).read_text())
    except (OSError, ValueError) as exc:
        raise IoError(f"cannot read report {json_path}: {exc}") from exc
    items = doc["reports"] if "reports" in doc else [doc]
    return [RunReport.from_dict(d) for d in items]
