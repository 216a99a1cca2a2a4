"""Seeded synthetic scenes: event lists, corrupted predictions, FOA renders.

All randomness comes from ``numpy.random.Generator(PCG64(seed))``; the
generator name is exported as :data:`PRNG_NAME` so file headers can record
it alongside the seed.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import InfeasibleSpec
from .features import EXPECTED_RATE, AudioBuffer
from .label_codec import ClassMap, EventRecord, PredictionGrid, encode_frames
from .losses import softmax
from .sphere_grid import (
    Direction,
    GridSpec,
    angular_distance_deg,
    direction_to_unit,
    unit_to_direction,
)

PRNG_NAME = f"numpy-{np.__version__.split('.')[0]}.PCG64"
_MAX_PLACEMENT_TRIES = 200


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class SceneSpec:
    duration_s: float = 5.0
    frame_period_s: float = 0.1
    n_classes: int = 13
    min_events: int = 3
    max_events: int = 8
    polyphony_max: int = 3
    same_class_overlap: bool = False
    moving: bool = False
    max_speed_deg_s: float = 20.0
    min_separation_deg: float = 30.0
    min_duration_s: float = 0.5
    max_duration_s: float = 2.0

    def __post_init__(self):
        if self.polyphony_max < 1:
            raise ValueError("polyphony_max must be >= 1")
        if self.min_separation_deg < 0:
            raise ValueError("min_separation_deg must be >= 0")
        if not 1 <= self.min_events <= self.max_events:
            raise ValueError("need 1 <= min_events <= max_events")

    @property
    def frames(self) -> int:
        return int(round(self.duration_s / self.frame_period_s))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CorruptionSpec:
    angular_jitter_deg: float = 0.0
    class_confusion_p: float = 0.0
    deletion_p: float = 0.0
    insertion_rate: float = 0.0
    temperature: float | None = None
    seed: int = 0

    def __post_init__(self):
        for name in ("class_confusion_p", "deletion_p"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.angular_jitter_deg < 0 or self.insertion_rate < 0:
            raise ValueError("jitter and insertion rate must be non-negative")


@dataclass(frozen=True)
class Trajectory:
    class_id: int
    source_id: int
    start: Direction
    velocity: tuple[float, float]  # (d azimuth/dt, d elevation/dt) in deg/s
    onset_frame: int
    offset_frame: int  # exclusive

    def __post_init__(self):
        if not self.onset_frame < self.offset_frame:
            raise ValueError("onset must precede offset")

    def direction_at(self, frame: int, frame_period_s: float) -> Direction:
        """Position sampled at the midpoint of ``frame``."""
        t = (frame - self.onset_frame + 0.5) * frame_period_s
        el = float(np.clip(self.start.elevation_deg + self.velocity[1] * t, -90.0, 90.0))
        return Direction(self.start.azimuth_deg + self.velocity[0] * t, el)

    def frames(self) -> range:
        return range(self.onset_frame, self.offset_frame)


def random_direction(rng: np.random.Generator) -> Direction:
    """Uniform on the sphere."""
    return Direction(rng.uniform(-180.0, 180.0), math.degrees(math.asin(rng.uniform(-1.0, 1.0))))


def _positions(track: Trajectory, period: float) -> dict[int, Direction]:
    return {f: track.direction_at(f, period) for f in track.frames()}


def _compatible(cand: dict[int, Direction], placed: list[dict[int, Direction]], spec: SceneSpec) -> bool:
    for f, d in cand.items():
        active = [p[f] for p in placed if f in p]
        if len(active) + 1 > spec.polyphony_max:
            return False
        for other in active:
            dist = angular_distance_deg(d.azimuth_deg, d.elevation_deg, other.azimuth_deg, other.elevation_deg)
            if dist < spec.min_separation_deg:
                return False
    return True


def _draw_track(rng, spec: SceneSpec, class_id: int, source_id: int,
                onset: int | None = None, offset: int | None = None) -> Trajectory:
    n = spec.frames
    if onset is None:
        lo = max(1, int(round(spec.min_duration_s / spec.frame_period_s)))
        hi = max(lo, int(round(spec.max_duration_s / spec.frame_period_s)))
        length = min(int(rng.integers(lo, hi + 1)), n)
        onset = int(rng.integers(0, n - length + 1))
        offset = onset + length
    velocity = (0.0, 0.0)
    if spec.moving:
        velocity = tuple(float(v) for v in rng.uniform(-spec.max_speed_deg_s, spec.max_speed_deg_s, 2))
    return Trajectory(class_id, source_id, random_direction(rng), velocity, onset, offset)


def generate_tracks(spec: SceneSpec, seed: int) -> list[Trajectory]:
    rng = make_rng(seed)
    n_events = int(rng.integers(spec.min_events, spec.max_events + 1))
    tracks: list[Trajectory] = []
    placed: list[dict[int, Direction]] = []

    def place(make) -> None:
        for _ in range(_MAX_PLACEMENT_TRIES):
            track = make()
            pos = _positions(track, spec.frame_period_s)
            if _compatible(pos, placed, spec):
                tracks.append(track)
                placed.append(pos)
                return
        raise InfeasibleSpec(
            f"could not place event {len(tracks)} under polyphony {spec.polyphony_max} "
            f"and separation {spec.min_separation_deg} deg"
        )

    if spec.same_class_overlap:
        if spec.polyphony_max < 2:
            raise InfeasibleSpec("same-class overlap needs polyphony_max >= 2")
        # a cluster of same-class sources sharing one active span
        cls = int(rng.integers(0, spec.n_classes))
        span = _draw_track(rng, spec, cls, 0)
        for _ in range(spec.polyphony_max):
            place(lambda: _draw_track(rng, spec, cls, len(tracks), span.onset_frame, span.offset_frame))

    while len(tracks) < n_events:
        cls = int(rng.integers(0, spec.n_classes))
        place(lambda: _draw_track(rng, spec, cls, len(tracks)))
    return tracks


def tracks_to_events(tracks: Sequence[Trajectory], frame_period_s: float = 0.1) -> list[EventRecord]:
    events = [
        EventRecord(f, tr.class_id, tr.source_id, tr.direction_at(f, frame_period_s))
        for tr in tracks
        for f in tr.frames()
    ]
    events.sort(key=lambda e: (e.frame, e.class_id, e.source_id))
    return events


def generate_scene(spec: SceneSpec, seed: int) -> list[EventRecord]:
    """Deterministic event list for ``(spec, seed)``; frames lie in [0, spec.frames)."""
    return tracks_to_events(generate_tracks(spec, seed), spec.frame_period_s)


def jitter_direction(d: Direction, sigma_deg: float, rng: np.random.Generator) -> Direction:
    """Rotate ``d`` by |N(0, sigma)| degrees towards a uniformly random heading."""
    if sigma_deg == 0:
        return d
    u = d.unit_vector()
    helper = np.array([0.0, 0.0, 1.0]) if abs(u[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(u, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(u, e1)
    heading = rng.uniform(0.0, 2.0 * math.pi)
    angle = math.radians(abs(rng.normal(0.0, sigma_deg)))
    v = math.cos(angle) * u + math.sin(angle) * (math.cos(heading) * e1 + math.sin(heading) * e2)
    az, el = unit_to_direction(v)
    return Direction(float(az), float(np.clip(el, -90.0, 90.0)))


def corrupt_events(events: Sequence[EventRecord], spec: CorruptionSpec, n_classes: int,
                   frames: int) -> list[EventRecord]:
    """Apply deletion, class confusion, jitter and insertions to an event list."""
    rng = make_rng(spec.seed)
    out = []
    for ev in events:
        if rng.random() < spec.deletion_p:
            continue
        cls = ev.class_id
        if n_classes > 1 and rng.random() < spec.class_confusion_p:
            cls = int((cls + rng.integers(1, n_classes)) % n_classes)
        out.append(EventRecord(ev.frame, cls, ev.source_id, jitter_direction(ev.direction, spec.angular_jitter_deg, rng)))
    if spec.insertion_rate > 0:
        counts = rng.poisson(spec.insertion_rate, size=frames)
        for t, k in enumerate(counts):
            for i in range(int(k)):
                out.append(EventRecord(t, int(rng.integers(0, n_classes)), 1000 + i, random_direction(rng)))
    return out


def corrupt(events: Sequence[EventRecord], spec: CorruptionSpec, grid: GridSpec,
            classes: ClassMap, frames: int | None = None) -> PredictionGrid:
    """Corrupt ``events`` and encode them as a prediction grid.

    With ``spec.temperature`` set, each one-hot cell becomes
    ``softmax(onehot / temperature)``, which keeps the argmax.
    """
    if frames is None:
        frames = max((e.frame for e in events), default=-1) + 1
    noisy = corrupt_events(events, spec, classes.background_index, frames)
    labels, _ = encode_frames(noisy, frames, grid, classes)
    probs = labels.data
    if spec.temperature is not None:
        probs = softmax(probs / spec.temperature)
    return PredictionGrid(probs, grid, classes)


def source_signal(kind: str, n: int, sample_rate: int, rng: np.random.Generator, freq_hz: float = 1000.0) -> np.ndarray:
    if kind == "tone":
        t = np.arange(n) / sample_rate
        return 0.5 * np.sin(2.0 * math.pi * freq_hz * t + rng.uniform(0, 2 * math.pi))
    if kind == "noise":
        return 0.25 * rng.standard_normal(n)
    raise ValueError(f"unknown source signal {kind!r}")


def foa_gains(azimuth_deg, elevation_deg) -> np.ndarray:
    """(..., 4) plane-wave encoding gains (1, x, y, z)."""
    u = direction_to_unit(azimuth_deg, elevation_deg)
    return np.concatenate([np.ones(u.shape[:-1] + (1,)), u], axis=-1)


def render_foa(
    events: Sequence[EventRecord],
    source: str = "noise",
    duration_s: float = 5.0,
    sample_rate: int = EXPECTED_RATE,
    frame_period_s: float = 0.1,
    seed: int = 0,
    snr_db: float | None = None,
) -> AudioBuffer:
    """Sum of plane waves, one independent signal per (class, source) track.

    Each label frame holds the track's direction constant over its 100 ms.
    """
    n = int(round(duration_s * sample_rate))
    hop = int(round(frame_period_s * sample_rate))
    rng = make_rng(seed)
    out = np.zeros((4, n))
    tracks: dict[tuple[int, int], list[EventRecord]] = {}
    for ev in sorted(events, key=lambda e: (e.class_id, e.source_id, e.frame)):
        tracks.setdefault((ev.class_id, ev.source_id), []).append(ev)
    for (cls, _src), evs in sorted(tracks.items()):
        sig = source_signal(source, n, sample_rate, rng, freq_hz=300.0 + 150.0 * cls)
        gains = np.zeros((4, n))
        for ev in evs:
            a, b = ev.frame * hop, min((ev.frame + 1) * hop, n)
            if a >= n:
                continue
            gains[:, a:b] = foa_gains(ev.azimuth, ev.elevation)[:, None]
        out += gains * sig
    if snr_db is not None:
        power = np.mean(out[0] ** 2)
        if power > 0:
            noise_power = power / (10.0 ** (snr_db / 10.0))
            out += rng.standard_normal(out.shape) * math.sqrt(noise_power)
    return AudioBuffer(sample_rate, out)


def jitter_expectation(sigma_deg: float) -> float:
    """Mean of |N(0, sigma)|."""
    return sigma_deg * math.sqrt(2.0 / math.pi)

