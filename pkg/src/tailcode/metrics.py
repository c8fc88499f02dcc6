"""Average precision, Full/Rare/Non-Rare mAP reports and footprint totals."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


def average_precision(scores, positives, row_ids=None) -> float:
    """Non-interpolated AP: mean precision at the rank of each positive.

    Rows are ranked by descending score, ties broken by ascending row id
    (the position in the input when ``row_ids`` is not given).
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    pos = np.asarray(positives).ravel().astype(bool)
    if s.size != pos.size:
        raise ValueError(f"{s.size} scores but {pos.size} labels")
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise ValueError("average precision needs at least one positive")
    ids = np.arange(s.size) if row_ids is None else np.asarray(row_ids)
    order = np.lexsort((ids, -s))
    hits = pos[order]
    ranks = np.flatnonzero(hits) + 1
    precision = np.arange(1, n_pos + 1) / ranks
    # running sum in rank order, so the value does not depend on numpy's pairwise summation
    return float(np.cumsum(precision)[-1] / n_pos)


@dataclass
class MetricsReport:
    per_relation_ap: dict  # relation id -> AP in [0, 1]
    rare_relations: list
    excluded: list  # relations with no positive among the scored rows
    map_full: float
    map_rare: Optional[float]
    map_nonrare: Optional[float]
    param_count: int = 0
    ops_per_query: int = 0
    runtime_seconds: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self, include_runtime: bool = False) -> dict:
        d = {
            "map_full": self.map_full,
            "map_rare": self.map_rare,
            "map_nonrare": self.map_nonrare,
            "param_count": self.param_count,
            "ops_per_query": self.ops_per_query,
            "num_relations_scored": len(self.per_relation_ap),
            "rare_relations": sorted(int(r) for r in self.rare_relations),
            "excluded_relations": sorted(int(r) for r in self.excluded),
            "per_relation_ap": {str(k): v for k, v in sorted(self.per_relation_ap.items())},
        }
        if include_runtime:
            d["runtime_seconds"] = self.runtime_seconds
        d.update(self.extra)
        return d

    def to_json(self, include_runtime: bool = False) -> str:
        return json.dumps(self.to_dict(include_runtime), indent=2, sort_keys=True) + "\n"

    def to_text(self, title: str = "model") -> str:
        return format_table([report_row(title, self)],
                            ["method", "full", "rare", "non_rare", "params", "ops/query"])


def _fmt(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.2f}"
    return str(v)


def report_row(name: str, rep: MetricsReport) -> list:
    return [name, rep.map_full, rep.map_rare, rep.map_nonrare, rep.param_count, rep.ops_per_query]


def format_table(rows: list, header: list) -> str:
    """Aligned-column text table; floats to two decimals, missing as n/a."""
    cells = [header] + [[_fmt(v) for v in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = []
    for k, r in enumerate(cells):
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))))
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _mean_pct(values) -> Optional[float]:
    return 100.0 * float(np.mean(values)) if len(values) else None


def build_report(score_table, labels, rare_set, footprint=(0, 0), row_ids=None) -> MetricsReport:
    """One-vs-rest AP per relation (columns of ``score_table``) over the rows.

    Relations with no positive row are excluded from every mAP cut.
    ``footprint`` is ``(param_count, ops_per_query)`` of the scored model.
    """
    scores = np.asarray(score_table, dtype=np.float64)
    y = np.asarray(labels).ravel()
    if scores.ndim != 2 or scores.shape[0] != y.size:
        raise ValueError("score_table must have one row per label")
    rare = {int(r) for r in rare_set}
    per_ap, excluded = {}, []
    for rel in range(scores.shape[1]):
        pos = y == rel
        if not pos.any():
            excluded.append(rel)
            continue
        per_ap[rel] = average_precision(scores[:, rel], pos, row_ids)
    rare_aps = [ap for r, ap in per_ap.items() if r in rare]
    non_aps = [ap for r, ap in per_ap.items() if r not in rare]
    return MetricsReport(
        per_relation_ap=per_ap,
        rare_relations=sorted(r for r in rare if r in per_ap),
        excluded=excluded,
        map_full=_mean_pct(list(per_ap.values())) or 0.0,
        map_rare=_mean_pct(rare_aps),
        map_nonrare=_mean_pct(non_aps),
        param_count=int(footprint[0]),
        ops_per_query=int(footprint[1]),
    )


def mean_ap(score_table, labels) -> float:
    """mAP in [0, 1] over the relations that have a positive row."""
    scores = np.asarray(score_table, dtype=np.float64)
    y = np.asarray(labels).ravel()
    aps = [average_precision(scores[:, r], y == r) for r in range(scores.shape[1]) if np.any(y == r)]
    return float(np.mean(aps)) if aps else 0.0
