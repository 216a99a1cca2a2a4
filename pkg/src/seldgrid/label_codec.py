"""Event lists <-> one-hot grid tensors.

Each label frame is a (G, M) one-hot matrix: the cell holding an event
carries that event's class, every other cell carries the appended
'Background' class (always the last index).
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ClassOutOfRange,
    ElevationOutOfRange,
    FrameOutOfRange,
    MalformedRow,
    ShapeMismatch,
)
from .sphere_grid import CellIndex, Direction, GridSpec, directions_to_cells

BACKGROUND = "Background"
SIMPLEX_TOL = 1e-6

# STARSS23 event classes, in metadata index order
STARSS23_CLASSES = (
    "Female speech, woman speaking",
    "Male speech, man speaking",
    "Clapping",
    "Telephone",
    "Laughter",
    "Domestic sounds",
    "Walk, footsteps",
    "Door, open or close",
    "Music",
    "Musical instrument",
    "Water tap, faucet",
    "Bell",
    "Knock",
)


@dataclass(frozen=True)
class ClassMap:
    """Ordered event classes plus the trailing background class."""

    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        if len(set(names)) != len(names):
            raise ValueError("class names must be unique")
        if BACKGROUND in names:
            raise ValueError(f"{BACKGROUND!r} is appended automatically")
        object.__setattr__(self, "names", names)

    @classmethod
    def with_count(cls, n_event_classes: int) -> "ClassMap":
        return cls(tuple(f"class{k}" for k in range(n_event_classes)))

    @classmethod
    def starss23(cls) -> "ClassMap":
        return cls(STARSS23_CLASSES)

    @property
    def background_index(self) -> int:
        return len(self.names)

    @property
    def M(self) -> int:
        return len(self.names) + 1

    @property
    def all_names(self) -> tuple[str, ...]:
        return self.names + (BACKGROUND,)


@dataclass(frozen=True)
class EventRecord:
    frame: int
    class_id: int
    source_id: int
    direction: Direction

    @property
    def azimuth(self) -> float:
        return self.direction.azimuth_deg

    @property
    def elevation(self) -> float:
        return self.direction.elevation_deg

    def to_dict(self) -> dict:
        return {
            "frame": self.frame,
            "class": self.class_id,
            "source": self.source_id,
            "azimuth": self.azimuth,
            "elevation": self.elevation,
        }


def make_event(frame: int, class_id: int, source_id: int, azimuth: float, elevation: float) -> EventRecord:
    return EventRecord(int(frame), int(class_id), int(source_id), Direction(azimuth, elevation))


@dataclass
class LabelTensor:
    """One-hot targets, ``data`` has shape (T', G, M)."""

    data: np.ndarray
    spec: GridSpec
    classes: ClassMap

    def __post_init__(self):
        _check_dims(self.data, self.spec, self.classes)
        sums = self.data.sum(axis=-1)
        if not (np.all((self.data == 0) | (self.data == 1)) and np.all(sums == 1)):
            raise ShapeMismatch("label tensor cells must be exactly one-hot")

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    def nonbackground_mask(self) -> np.ndarray:
        """(T', G) binary indicator of event-carrying cells."""
        return 1.0 - self.data[..., self.classes.background_index]


@dataclass
class PredictionGrid:
    """Per-cell class distributions, ``data`` has shape (T', G, M)."""

    data: np.ndarray
    spec: GridSpec
    classes: ClassMap

    def __post_init__(self):
        _check_dims(self.data, self.spec, self.classes)
        if np.any(self.data < -SIMPLEX_TOL) or np.any(
            np.abs(self.data.sum(axis=-1) - 1.0) > SIMPLEX_TOL
        ):
            raise ShapeMismatch("prediction cells must lie on the probability simplex")

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @classmethod
    def from_logits(cls, logits: np.ndarray, spec: GridSpec, classes: ClassMap) -> "PredictionGrid":
        from .losses import softmax

        return cls(softmax(logits), spec, classes)


@dataclass
class CollisionReport:
    entries: list[tuple[int, int, int, int]] = field(default_factory=list)
    """(frame, winning class, dropped class, flat cell index)"""

    @property
    def count(self) -> int:
        return len(self.entries)


def _check_dims(data: np.ndarray, spec: GridSpec, classes: ClassMap) -> None:
    if data.ndim != 3 or data.shape[1] != spec.n_cells or data.shape[2] != classes.M:
        raise ShapeMismatch(
            f"expected (T, {spec.n_cells}, {classes.M}), got {tuple(data.shape)}"
        )


def _parse_int(text: str, lineno: int) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise MalformedRow(f"line {lineno}: {text!r} is not an integer") from None


def read_metadata_csv(path, classes: ClassMap) -> list[EventRecord]:
    """Read DCASE-style ``frame,class,source,azimuth,elevation`` rows."""
    events = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 5:
                raise MalformedRow(f"line {lineno}: expected 5 fields, got {len(row)}")
            frame, cls, src, az, el = (_parse_int(v, lineno) for v in row)
            if frame < 0:
                raise MalformedRow(f"line {lineno}: negative frame {frame}")
            if not 0 <= cls < classes.background_index:
                raise ClassOutOfRange(f"line {lineno}: class {cls} outside [0, {classes.background_index})")
            try:
                direction = Direction(az, el)
            except ElevationOutOfRange as exc:
                raise ElevationOutOfRange(f"line {lineno}: {exc}") from None
            events.append(EventRecord(frame, cls, src, direction))
    return events


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def write_metadata_csv(path, events: Iterable[EventRecord]) -> None:
    """Write events in the integer metadata layout (directions rounded)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for ev in sorted(events, key=_event_sort_key):
            az = _round_half_up(ev.azimuth)
            if az >= 180:
                az -= 360
            writer.writerow([ev.frame, ev.class_id, ev.source_id, az, _round_half_up(ev.elevation)])


def write_events_json(path, events: Iterable[EventRecord]) -> None:
    payload = [ev.to_dict() for ev in sorted(events, key=_event_sort_key)]
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")


def read_events_json(path, classes: ClassMap) -> list[EventRecord]:
    out = []
    for item in json.loads(Path(path).read_text()):
        if not 0 <= int(item["class"]) < classes.background_index:
            raise ClassOutOfRange(f"class {item['class']} out of range")
        out.append(make_event(item["frame"], item["class"], item["source"], item["azimuth"], item["elevation"]))
    return out


def _event_sort_key(ev: EventRecord):
    return ev.frame, ev.class_id, ev.source_id, ev.azimuth, ev.elevation


def encode_frames(
    events: Sequence[EventRecord], frames: int, spec: GridSpec, classes: ClassMap
) -> tuple[LabelTensor, CollisionReport]:
    """One-hot encode an event list onto the grid.

    When several events fall in the same cell and frame, the lowest class
    index wins and every displaced event is logged in the returned report.
    """
    bg = classes.background_index
    data = np.zeros((frames, spec.n_cells, classes.M))
    data[..., bg] = 1.0
    report = CollisionReport()
    if not events:
        return LabelTensor(data, spec, classes), report

    for ev in events:
        if not 0 <= ev.frame < frames:
            raise FrameOutOfRange(f"event frame {ev.frame} outside [0, {frames})")
        if not 0 <= ev.class_id < bg:
            raise ClassOutOfRange(f"class {ev.class_id} outside [0, {bg})")

    az = np.array([ev.azimuth for ev in events])
    el = np.array([ev.elevation for ev in events])
    rows, cols = directions_to_cells(spec, az, el)
    flat = rows * spec.cols + cols

    occupants: dict[tuple[int, int], list[int]] = defaultdict(list)
    for ev, g in zip(events, flat):
        occupants[(ev.frame, int(g))].append(ev.class_id)

    for (t, g), cls_list in sorted(occupants.items()):
        cls_list.sort()
        winner = cls_list[0]
        data[t, g, bg] = 0.0
        data[t, g, winner] = 1.0
        for dropped in cls_list[1:]:
            report.entries.append((t, winner, dropped, g))
    return LabelTensor(data, spec, classes), report


def decode_predictions(
    pred: PredictionGrid | np.ndarray,
    spec: GridSpec,
    classes: ClassMap,
    min_probability: float | None = None,
) -> list[EventRecord]:
    """Emit one event per non-background argmax cell, at the cell midpoint.

    Exact ties go to background first, then to the lowest class index.
    ``min_probability`` optionally demotes weak winners to background.
    """
    data = pred.data if isinstance(pred, PredictionGrid) else np.asarray(pred)
    _check_dims(data, spec, classes)
    bg = classes.background_index
    # put background first so np.argmax's first-occurrence rule does the tie-break
    reordered = np.concatenate([data[..., bg:], data[..., :bg]], axis=-1)
    winner = np.argmax(reordered, axis=-1) - 1
    if min_probability is not None:
        weak = np.max(reordered, axis=-1) < min_probability
        winner[weak] = -1

    az_c, el_c = spec.centers
    events = []
    t_idx, g_idx = np.nonzero(winner >= 0)
    next_source: dict[tuple[int, int], int] = defaultdict(int)
    for t, g in zip(t_idx, g_idx):
        c = int(winner[t, g])
        key = (int(t), c)
        events.append(EventRecord(int(t), c, next_source[key], Direction(az_c[g], el_c[g])))
        next_source[key] += 1
    return events


def frame_cells(events: Sequence[EventRecord], spec: GridSpec) -> list[tuple[int, int, CellIndex]]:
    """(frame, class, cell) triples, handy for set comparisons in tests."""
    if not events:
        return []
    rows, cols = directions_to_cells(
        spec, [e.azimuth for e in events], [e.elevation for e in events]
    )
    return [(e.frame, e.class_id, CellIndex(int(r), int(c))) for e, r, c in zip(events, rows, cols)]
