"""Gradient descent on free per-cell logits against the union loss.

There is no network here: the logits themselves are the parameters, which
isolates what the loss alone does to the predicted locations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DivergenceDetected, InfeasibleSpec
from .label_codec import (
    ClassMap,
    EventRecord,
    LabelTensor,
    PredictionGrid,
    decode_predictions,
    encode_frames,
)
from .losses import LossReport, loss_and_grad_logits, transform_targets
from .metrics import MetricConfig, MetricsReport, compute_metrics
from .scene_sim import make_rng, random_direction
from .sphere_grid import angular_distance_deg, build_grid

ABLATION_WEIGHTS = ((1.0, 0.0, 0.0), (1.0, 1.0, 0.0), (1.0, 1.0, 1.0))
_MAX_HALVINGS = 40


@dataclass(frozen=True)
class FitConfig:
    learning_rate: float = 0.05
    max_steps: int = 2000
    init: str = "uniform"  # or "gaussian"
    init_sigma: float = 0.1
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    eval_every: int = 10
    patience: int = 50  # unchanged snapshots before stopping
    backoff: bool = False  # halve the step when the loss goes up
    seed: int = 0
    metric: MetricConfig = MetricConfig()

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.init not in ("uniform", "gaussian"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class Snapshot:
    step: int
    loss: LossReport
    metrics: MetricsReport | None
    n_predicted: int
    learning_rate: float

    def to_dict(self) -> dict:
        loss = self.loss.to_dict()
        loss.pop("per_frame")
        return {
            "step": self.step,
            "loss": loss,
            "metrics": None if self.metrics is None else self.metrics.to_dict(),
            "n_predicted": self.n_predicted,
            "learning_rate": self.learning_rate,
        }


@dataclass
class FitTrace:
    snapshots: list[Snapshot]
    final: PredictionGrid
    logits: np.ndarray = field(repr=False)
    stopped_early: bool = False
    config: FitConfig | None = None

    def steps_to_f(self, threshold: float = 0.9) -> float:
        """First snapshot step with F >= threshold, or inf."""
        for snap in self.snapshots:
            if snap.metrics is not None and snap.metrics.f20 >= threshold:
                return snap.step
        return math.inf

    @property
    def last(self) -> Snapshot:
        return self.snapshots[-1]

    def to_dict(self) -> dict:
        return {
            "stopped_early": self.stopped_early,
            "final_step": self.last.step,
            "snapshots": [s.to_dict() for s in self.snapshots],
        }


def _signature(probs: np.ndarray, events: Sequence[EventRecord]):
    return np.argmax(probs, axis=-1).tobytes(), tuple(
        (e.frame, e.class_id, e.azimuth, e.elevation) for e in events
    )


def fit_logits(
    target: LabelTensor,
    cfg: FitConfig = FitConfig(),
    reference: Sequence[EventRecord] | None = None,
) -> FitTrace:
    """Plain gradient descent on logits, snapshotting every ``eval_every`` steps.

    ``reference`` is the event list the snapshots are scored against; by
    default the target is decoded back to cell-midpoint events.  Stops at
    ``max_steps`` or once the argmax map and decoded events have been
    unchanged for ``patience`` consecutive snapshots.
    """
    spec, classes = target.spec, target.classes
    if reference is None:
        reference = decode_predictions(target.data, spec, classes)
    rng = make_rng(cfg.seed)
    if cfg.init == "uniform":
        logits = np.zeros_like(target.data)
    else:
        logits = rng.normal(scale=cfg.init_sigma, size=target.data.shape)
    y_at = transform_targets(target).y_at
    weights = tuple(float(w) for w in cfg.loss_weights)
    lr = cfg.learning_rate

    snapshots: list[Snapshot] = []
    last_sig = None
    unchanged = 0
    stopped_early = False

    def evaluate(z: np.ndarray, step: int):
        if not np.all(np.isfinite(z)):
            raise DivergenceDetected(step, f"logits overflowed at step {step}")
        return loss_and_grad_logits(target, z, weights, y_at)

    report, grad, probs = evaluate(logits, 0)
    for step in range(cfg.max_steps + 1):
        if not math.isfinite(report.total):
            raise DivergenceDetected(step)
        if step % cfg.eval_every == 0 or step == cfg.max_steps:
            events = decode_predictions(probs, spec, classes)
            metrics = compute_metrics(reference, events, cfg.metric) if reference else None
            snapshots.append(Snapshot(step, report, metrics, len(events), lr))
            sig = _signature(probs, events)
            unchanged = unchanged + 1 if sig == last_sig else 0
            last_sig = sig
            if unchanged >= cfg.patience:
                stopped_early = True
                break
        if step == cfg.max_steps:
            break

        with np.errstate(over="ignore", invalid="ignore"):
            candidate = logits - lr * grad
        new = evaluate(candidate, step + 1)
        if cfg.backoff:
            halvings = 0
            while new[0].total > report.total and halvings < _MAX_HALVINGS:
                lr *= 0.5
                halvings += 1
                with np.errstate(over="ignore", invalid="ignore"):
                    candidate = logits - lr * grad
                new = evaluate(candidate, step + 1)
            if new[0].total > report.total:
                candidate, new = logits, (report, grad, probs)
        logits = candidate
        report, grad, probs = new

    return FitTrace(snapshots, PredictionGrid(probs, spec, classes), logits, stopped_early, cfg)


def ablate(
    target: LabelTensor,
    cfg: FitConfig = FitConfig(),
    reference: Sequence[EventRecord] | None = None,
    weight_sets=ABLATION_WEIGHTS,
) -> dict[tuple[float, float, float], FitTrace]:
    """One trace per loss-weight set, all with the same seed and budget."""
    out = {}
    for w in weight_sets:
        run_cfg = FitConfig(**{**cfg.__dict__, "loss_weights": tuple(w)})
        out[tuple(w)] = fit_logits(target, run_cfg, reference)
    return out


def make_fixture(
    n_sources: int,
    seed: int = 0,
    delta_deg: float = 15.0,
    n_classes: int = 13,
    same_class: bool = True,
    min_separation_deg: float = 45.0,
) -> tuple[LabelTensor, list[EventRecord]]:
    """Single-frame target with ``n_sources`` static events at distinct cells."""
    spec = build_grid(delta_deg)
    classes = ClassMap.with_count(n_classes)
    rng = make_rng(seed)
    cls0 = int(rng.integers(0, n_classes))
    events: list[EventRecord] = []
    tries = 0
    while len(events) < n_sources:
        tries += 1
        if tries > 10_000:
            raise InfeasibleSpec("could not separate fixture sources")
        d = random_direction(rng)
        if any(
            angular_distance_deg(d.azimuth_deg, d.elevation_deg, e.azimuth, e.elevation) < min_separation_deg
            for e in events
        ):
            continue
        cls = cls0 if same_class else int(rng.integers(0, n_classes))
        events.append(EventRecord(0, cls, len(events), d))
    labels, _ = encode_frames(events, 1, spec, classes)
    return labels, events
