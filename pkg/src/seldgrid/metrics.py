"""Location-dependent SELD metrics (ER, F, LE_CD, LR_CD and the SELD score).

Events are grouped into segments of ``segment_frames`` label frames.
Inside each (segment, class) group references and predictions are paired
one-to-one by minimum total angular distance.  Counts are summed over
classes per segment for the error-rate decomposition and over everything
for the final ratios (micro averaging).
"""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ClassMapMismatch, EmptyReference, RangeViolation
from .label_codec import ClassMap, EventRecord
from .sphere_grid import angular_distance_deg

WORST_LE_DEG = 180.0


@dataclass(frozen=True)
class MetricConfig:
    threshold_deg: float = 20.0
    segment_frames: int = 10
    greedy: bool = False

    def __post_init__(self):
        if not self.threshold_deg > 0:
            raise ValueError("threshold_deg must be positive")
        if self.segment_frames < 1:
            raise ValueError("segment_frames must be >= 1")


@dataclass
class SegmentMatch:
    segment: int
    class_id: int
    n_ref: int
    n_pred: int
    pairs: list[tuple[int, int, float]] = field(default_factory=list)
    """(index into ref list, index into pred list, distance in degrees)"""

    @property
    def unmatched_ref(self) -> int:
        return self.n_ref - len(self.pairs)

    @property
    def unmatched_pred(self) -> int:
        return self.n_pred - len(self.pairs)


@dataclass
class MatchResult:
    groups: list[SegmentMatch]

    @property
    def pairs(self) -> list[tuple[int, int, float]]:
        return [p for grp in self.groups for p in grp.pairs]

    @property
    def unmatched_ref(self) -> int:
        return sum(g.unmatched_ref for g in self.groups)

    @property
    def unmatched_pred(self) -> int:
        return sum(g.unmatched_pred for g in self.groups)


@dataclass
class MetricsReport:
    er20: float
    f20: float
    le_cd_deg: float
    lr_cd: float
    seld_score: float
    tp: int = 0
    fp: int = 0
    fn: int = 0
    n_ref: int = 0
    n_pred: int = 0
    matched_pairs: int = 0
    threshold_deg: float = 20.0
    segment_frames: int = 10
    averaging: str = "micro"

    def to_dict(self) -> dict:
        return asdict(self)


def distance_matrix(ref: Sequence[EventRecord], pred: Sequence[EventRecord]) -> np.ndarray:
    ra = np.array([e.azimuth for e in ref])[:, None]
    re = np.array([e.elevation for e in ref])[:, None]
    pa = np.array([e.azimuth for e in pred])[None, :]
    pe = np.array([e.elevation for e in pred])[None, :]
    return np.atleast_2d(angular_distance_deg(ra, re, pa, pe))


def _greedy_assignment(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = [], []
    order = np.argsort(cost, axis=None, kind="stable")
    used_r, used_c = set(), set()
    for flat in order:
        r, c = divmod(int(flat), cost.shape[1])
        if r in used_r or c in used_c:
            continue
        used_r.add(r)
        used_c.add(c)
        rows.append(r)
        cols.append(c)
        if len(rows) == min(cost.shape):
            break
    return np.array(rows, dtype=int), np.array(cols, dtype=int)


def _check_classes(events: Sequence[EventRecord], classes: ClassMap | None, which: str) -> None:
    if classes is None:
        return
    for ev in events:
        if not 0 <= ev.class_id < classes.background_index:
            raise ClassMapMismatch(f"{which} class {ev.class_id} not in class map")


def match_events(
    ref: Sequence[EventRecord],
    pred: Sequence[EventRecord],
    cfg: MetricConfig = MetricConfig(),
    classes: ClassMap | None = None,
) -> MatchResult:
    """Class-dependent one-to-one pairing inside every segment."""
    _check_classes(ref, classes, "reference")
    _check_classes(pred, classes, "prediction")
    buckets: dict[tuple[int, int], tuple[list[int], list[int]]] = defaultdict(lambda: ([], []))
    for i, ev in enumerate(ref):
        buckets[(ev.frame // cfg.segment_frames, ev.class_id)][0].append(i)
    for j, ev in enumerate(pred):
        buckets[(ev.frame // cfg.segment_frames, ev.class_id)][1].append(j)

    groups = []
    for (seg, cls), (ri, pj) in sorted(buckets.items()):
        grp = SegmentMatch(seg, cls, len(ri), len(pj))
        if ri and pj:
            cost = distance_matrix([ref[i] for i in ri], [pred[j] for j in pj])
            if cfg.greedy:
                rows, cols = _greedy_assignment(cost)
            else:
                rows, cols = linear_sum_assignment(cost)
            grp.pairs = sorted((ri[r], pj[c], float(cost[r, c])) for r, c in zip(rows, cols))
        groups.append(grp)
    return MatchResult(groups)


def seld_score(er: float, f: float, le_deg: float, lr: float) -> float:
    """Mean of ER, 1 - F, LE / 180 deg and 1 - LR."""
    if not (er >= 0 and 0 <= f <= 1 and 0 <= le_deg <= 180 and 0 <= lr <= 1):
        raise RangeViolation(f"metric inputs out of range: er={er}, f={f}, le={le_deg}, lr={lr}")
    return (er + (1.0 - f) + le_deg / 180.0 + (1.0 - lr)) / 4.0


def segment_breakdown(result: MatchResult, cfg: MetricConfig) -> list[dict]:
    """Per-segment counts behind the error rate, sorted by segment."""
    per_seg: dict[int, dict] = {}
    for grp in result.groups:
        row = per_seg.setdefault(grp.segment, dict(
            segment=grp.segment, n_ref=0, n_pred=0, tp=0, fp=0, fn=0, matched=0, dist_sum=0.0))
        far = sum(1 for _, _, d in grp.pairs if d >= cfg.threshold_deg)
        row["n_ref"] += grp.n_ref
        row["n_pred"] += grp.n_pred
        row["tp"] += len(grp.pairs) - far
        row["fn"] += grp.unmatched_ref + far
        row["fp"] += grp.unmatched_pred + far
        row["matched"] += len(grp.pairs)
        row["dist_sum"] += sum(d for _, _, d in grp.pairs)
    rows = []
    for seg in sorted(per_seg):
        row = per_seg[seg]
        fn, fp = row["fn"], row["fp"]
        row.update(S=min(fn, fp), D=max(0, fn - fp), I=max(0, fp - fn))
        rows.append(row)
    return rows


def compute_metrics(
    ref: Sequence[EventRecord],
    pred: Sequence[EventRecord],
    cfg: MetricConfig = MetricConfig(),
    classes: ClassMap | None = None,
) -> MetricsReport:
    if not ref:
        raise EmptyReference("no reference events to evaluate against")
    rows = segment_breakdown(match_events(ref, pred, cfg, classes), cfg)
    tot = {k: sum(r[k] for r in rows) for k in ("n_ref", "n_pred", "tp", "fp", "fn", "matched", "dist_sum", "S", "D", "I")}

    er = (tot["S"] + tot["D"] + tot["I"]) / tot["n_ref"]
    f_den = 2 * tot["tp"] + tot["fp"] + tot["fn"]
    f = 2 * tot["tp"] / f_den if f_den else 1.0
    le = tot["dist_sum"] / tot["matched"] if tot["matched"] else WORST_LE_DEG
    lr = tot["matched"] / tot["n_ref"]
    return MetricsReport(
        er20=er, f20=f, le_cd_deg=le, lr_cd=lr,
        seld_score=seld_score(er, f, min(le, WORST_LE_DEG), lr),
        tp=tot["tp"], fp=tot["fp"], fn=tot["fn"],
        n_ref=tot["n_ref"], n_pred=tot["n_pred"], matched_pairs=tot["matched"],
        threshold_deg=cfg.threshold_deg, segment_frames=cfg.segment_frames,
    )


def write_breakdown_csv(path, rows: list[dict]) -> None:
    cols = ["segment", "n_ref", "n_pred", "tp", "fp", "fn", "S", "D", "I", "matched", "dist_sum"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in cols})
