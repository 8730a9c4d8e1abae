"""Scoring, per-category aggregation, failure-mode classification, reports.

Scores live on a {0, 0.5, 1} scale; category results are percentages of the
maximum achievable points, kept at full precision internally and rounded to
integers only when a report is emitted. Reports go out as CSV + JSON with a
stable column order; figures are rendered separately (see figures module).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .scenesim import Outcome

FAILURE_MODES = ("execution", "vlm_selection", "masking", "combined")

# an object counts as tagged when candidate masks cover at least this much of it
COVERAGE_THRESHOLD = 0.5


class ContractError(RuntimeError):
    """classify_failure called on a log that did not fail."""


class IoError(OSError):
    """Report destination not writable."""


def round_half_away(x: float) -> int:
    """Round to nearest integer, ties away from zero (figure convention)."""
    return int(math.floor(x + 0.5)) if x >= 0 else -int(math.floor(-x + 0.5))


@dataclass
class EpisodeLog:
    """Full provenance of one evaluation run, JSONL-serializable."""

    episode_id: str
    variant: str
    setting: str
    instruction_text: str
    effective_instruction: str
    category: Optional[int]
    targets: List[str]
    reference_ids: List[str] = field(default_factory=list)
    object_coverage: Dict[str, float] = field(default_factory=dict)
    selection: Optional[dict] = None
    highlighted_ids: List[str] = field(default_factory=list)
    outcome: Optional[dict] = None
    score: float = 0.0
    failure_stage: Optional[str] = None
    timings: dict = field(default_factory=dict)
    artifact_hashes: Dict[str, str] = field(default_factory=dict)
    seed: int = 0
    n_frames: int = 0

    def to_json(self, include_timings: bool = True) -> str:
        d = asdict(self)
        if not include_timings:
            d.pop("timings", None)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "EpisodeLog":
        return cls(**json.loads(line))

    # -- derived predicates used by the failure classifier ------------------

    def masks_complete(self) -> bool:
        """Target and reference objects all carry post-filter masks."""
        needed = set(self.targets) | set(self.reference_ids)
        return all(self.object_coverage.get(oid, 0.0) >= COVERAGE_THRESHOLD for oid in needed)

    def highlight_correct(self) -> bool:
        return set(self.highlighted_ids) == set(self.targets) and bool(self.targets)

    def executor_result(self) -> str:
        return (self.outcome or {}).get("result", "fail")

    def executor_engaged(self) -> List[str]:
        return list((self.outcome or {}).get("engaged", []))


def score_run(outcome: Outcome, targets: Sequence[str], setting: str) -> float:
    """Points for one run: 1 for success on the correct target(s), 0.5 for the
    setting's partial condition on the correct target(s), else 0."""
    if not targets:
        return 0.0
    correct = tuple(outcome.engaged) == tuple(targets)
    if not correct:
        return 0.0
    if outcome.result == "success":
        return 1.0
    if outcome.result == "partial":
        return 0.5
    return 0.0


def is_failure(log: EpisodeLog, half_counts_as_failure: bool = False) -> bool:
    """Only zero-point runs are failures unless the switch pulls halves in."""
    if half_counts_as_failure:
        return log.score < 1.0
    return log.score == 0.0


def classify_failure(log: EpisodeLog, half_counts_as_failure: bool = False) -> str:
    """One tag per failed run, decided in a fixed order.

    masking: relevant objects never got tags, so selection correctness is
    undefined. vlm_selection: tags existed but the wrong ones were chosen,
    and execution on the (wrong) highlighted object still worked.
    combined: wrong highlight and the executor also failed on it.
    execution: correct highlight, the policy simply failed.
    """
    if not is_failure(log, half_counts_as_failure):
        raise ContractError(f"episode {log.episode_id} did not fail (score={log.score})")
    if not log.masks_complete():
        return "masking"
    if not log.highlight_correct():
        executed_ok = (log.executor_result() == "success"
                       and set(log.executor_engaged()) == set(log.highlighted_ids))
        if executed_ok:
            return "vlm_selection"
        return "combined"
    return "execution"


def aggregate(logs: Sequence[EpisodeLog]) -> Dict[Tuple[str, str, Optional[int]], dict]:
    """(variant, setting, category) -> {runs, points, percent (unrounded)}."""
    if not logs:
        return {}
    out: Dict[Tuple[str, str, Optional[int]], dict] = {}
    for log in logs:
        key = (log.variant, log.setting, log.category)
        cell = out.setdefault(key, {"runs": 0, "points": 0.0})
        cell["runs"] += 1
        cell["points"] += log.score
    for cell in out.values():
        cell["percent"] = 100.0 * cell["points"] / cell["runs"]
    return out


def failure_distribution(logs: Sequence[EpisodeLog],
                         half_counts_as_failure: bool = False) -> Dict[str, int]:
    dist = {mode: 0 for mode in FAILURE_MODES}
    for log in logs:
        if is_failure(log, half_counts_as_failure):
            dist[classify_failure(log, half_counts_as_failure)] += 1
    return dist


def _percentile(values: List[float], q: float) -> float:
    if not values:
        return 0.0
    s = sorted(values)
    idx = (len(s) - 1) * q
    lo = int(math.floor(idx))
    hi = int(math.ceil(idx))
    if lo == hi:
        return s[lo]
    return s[lo] + (s[hi] - s[lo]) * (idx - lo)


def timing_summary(logs: Sequence[EpisodeLog]) -> dict:
    pre = [log.timings.get("preprocess_ms") for log in logs
           if isinstance(log.timings, dict) and log.timings.get("preprocess_ms") is not None]
    steps: List[float] = []
    overhead: List[float] = []
    for log in logs:
        if not isinstance(log.timings, dict):
            continue
        totals = log.timings.get("step_total_ms") or []
        backends = log.timings.get("step_backend_ms") or [0.0] * len(totals)
        steps.extend(totals)
        overhead.extend(t - b for t, b in zip(totals, backends))
    return {
        "preprocess_ms": {"p50": _percentile(pre, 0.5), "p95": _percentile(pre, 0.95),
                          "count": len(pre)},
        "step_ms": {"p50": _percentile(steps, 0.5), "p95": _percentile(steps, 0.95),
                    "count": len(steps)},
        "step_overhead_ms": {"p50": _percentile(overhead, 0.5),
                             "p95": _percentile(overhead, 0.95), "count": len(overhead)},
    }


def build_report(logs: Sequence[EpisodeLog], by: Sequence[str] = ("setting", "category", "variant"),
                 half_counts_as_failure: bool = False) -> dict:
    """All report content as plain data: score table, failure mix, timings."""
    agg = aggregate(logs)
    rows = []
    for (variant, setting, category), cell in sorted(agg.items(),
                                                     key=lambda kv: (kv[0][1], str(kv[0][2]), kv[0][0])):
        rows.append({
            "setting": setting,
            "category": category if category is not None else "",
            "variant": variant,
            "runs": cell["runs"],
            "points": cell["points"],
            "percent": round_half_away(cell["percent"]),
        })
    dist = failure_distribution(logs, half_counts_as_failure)
    n_failed = sum(dist.values())
    dist_pct = {mode: (round_half_away(100.0 * n / n_failed) if n_failed else 0)
                for mode, n in dist.items()}
    run_counts = {}
    for log in logs:
        run_counts[log.setting] = run_counts.get(log.setting, 0) + 1
    return {
        "group_by": list(by),
        "rows": rows,
        "totals": {"runs": len(logs), "failed": n_failed, "runs_by_setting": run_counts},
        "failure_modes": {"counts": dist, "percent": dist_pct},
        "timings": timing_summary(logs),
    }


REPORT_COLUMNS = ("setting", "category", "variant", "runs", "points", "percent")


def write_report(report: dict, out_dir, basename: str = "report") -> Tuple[Path, Path]:
    """Emit report.csv + report.json; raises IoError on an unwritable target."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{basename}.csv"
        json_path = out / f"{basename}.json"
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for row in report["rows"]:
            writer.writerow({k: row[k] for k in REPORT_COLUMNS})
        csv_path.write_text(buf.getvalue())
        json_path.write_text(json.dumps(report, indent=2, sort_keys=True))
    except OSError as exc:
        raise IoError(f"cannot write report to {out}: {exc}") from exc
    return csv_path, json_path


def read_logs(path) -> List[EpisodeLog]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            out.append(EpisodeLog.from_json(line))
    return out


def write_logs(logs: Iterable[EpisodeLog], path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w") as fh:
        for log in logs:
            fh.write(log.to_json() + "\n")
    return p
