"""Regression localization loss on the cell grid, with analytic gradients.

Three terms are combined:

* class-wise MSE between one-hot targets and predicted distributions,
* a soft intersection-over-union ("AIUR") between the target
  non-background mask and the predicted non-background probability,
* the converging term, a linear functional of the non-background
  probability weighted by an attractor field built from the targets.

Every term is computed per frame and averaged over frames.  All array
helpers are dtype preserving, so they also run in extended precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import IndexOutOfGrid, NonFiniteInput, ShapeMismatch
from .label_codec import LabelTensor, PredictionGrid
from .sphere_grid import GridSpec

DEFAULT_WEIGHTS = (1.0, 1.0, 1.0)


@dataclass
class TransformedTarget:
    y_prime: np.ndarray  # (T, G)
    y_at: np.ndarray  # (T, G)
    n_bac: np.ndarray  # (T,)
    n_non_bac: np.ndarray  # (T,)
    spec: GridSpec


@dataclass
class LossReport:
    class_mse: float
    aiur: float
    converging: float
    total: float
    weights: tuple[float, float, float] = DEFAULT_WEIGHTS
    per_frame: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "class_mse": self.class_mse,
            "aiur": self.aiur,
            "converging": self.converging,
            "total": self.total,
            "weights": list(self.weights),
            "per_frame": {k: [float(x) for x in v] for k, v in self.per_frame.items()},
        }


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def _pred_array(y: LabelTensor, pred) -> np.ndarray:
    data = pred.data if isinstance(pred, PredictionGrid) else np.asarray(pred)
    if data.shape != y.data.shape:
        raise ShapeMismatch(f"prediction shape {data.shape} != target shape {y.data.shape}")
    return data


# -- array-level kernels: y and p are (T, G, M), bg is the background index --


def nonbackground(p: np.ndarray, bg: int) -> np.ndarray:
    """1 - p(background); equals the summed event-class mass on the simplex."""
    return 1 - p[..., bg]


def frame_class_mse(y: np.ndarray, p: np.ndarray) -> np.ndarray:
    G, M = y.shape[-2:]
    return np.sum((y - p) ** 2, axis=(-2, -1)) / (G * M)


def frame_aiur(y: np.ndarray, p: np.ndarray, bg: int) -> np.ndarray:
    return _aiur_from_masks(nonbackground(y, bg), nonbackground(p, bg))


def _aiur_from_masks(yg: np.ndarray, pg: np.ndarray) -> np.ndarray:
    inter = np.sum(yg * pg, axis=-1)
    union = np.sum(yg + pg - yg * pg, axis=-1)
    has_target = np.sum(yg, axis=-1) > 0
    # frames without targets contribute 0; union >= #targets elsewhere
    safe_union = np.where(has_target, union, 1)
    return np.where(has_target, 1 - inter / safe_union, 0 * union)


def transformed_values(y: np.ndarray, bg: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-cell y' plus the background and non-background counts per frame."""
    yg = nonbackground(y, bg)
    n_non = np.sum(yg, axis=-1)
    G = y.shape[-2]
    n_bac = G - n_non
    ratio = np.where(n_non > 0, n_bac / np.where(n_non > 0, n_non, 1), 0)
    y_prime = np.where(yg > 0.5, -ratio[..., None], 1 + 0 * yg)
    return y_prime, n_bac, n_non


def attractor_field(y_prime: np.ndarray, spec: GridSpec) -> np.ndarray:
    """y' plus the mean of y' over each cell's present neighbors."""
    pad = np.zeros(y_prime.shape[:-1] + (1,), dtype=y_prime.dtype)
    ext = np.concatenate([y_prime, pad], axis=-1)
    nb_sum = np.sum(ext[..., spec.neighbor_table], axis=-1)
    return y_prime + nb_sum / spec.neighbor_counts


def frame_converging(y_at: np.ndarray, p: np.ndarray, bg: int) -> np.ndarray:
    return np.sum(nonbackground(p, bg) * y_at, axis=-1)


def _converging_from_mask(y_at: np.ndarray, pg: np.ndarray) -> np.ndarray:
    return np.sum(pg * y_at, axis=-1)


def frame_losses(
    y: np.ndarray, p: np.ndarray, spec: GridSpec, bg: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(class_mse, aiur, converging) per frame, no temporal reduction."""
    y_prime, _, _ = transformed_values(y, bg)
    y_at = attractor_field(y_prime, spec)
    pg = nonbackground(p, bg)
    return (
        frame_class_mse(y, p),
        _aiur_from_masks(nonbackground(y, bg), pg),
        _converging_from_mask(y_at, pg),
    )


def _grad_arrays(y: np.ndarray, p: np.ndarray, y_at: np.ndarray, bg: int, weights) -> np.ndarray:
    T, G, M = y.shape
    w_mse, w_aiur, w_cl = weights
    grad = (w_mse * 2.0 / (G * M)) * (p - y)

    yg = nonbackground(y, bg)
    pg = nonbackground(p, bg)
    inter = np.sum(yg * pg, axis=-1, keepdims=True)
    union = np.sum(yg + pg - yg * pg, axis=-1, keepdims=True)
    has_target = np.sum(yg, axis=-1, keepdims=True) > 0
    safe_union = np.where(has_target, union, 1.0)
    d_aiur = -(yg * safe_union - inter * (1 - yg)) / safe_union**2
    d_aiur = np.where(has_target, d_aiur, 0.0)

    # d(nonbackground)/d p_bg = -1
    grad[..., bg] -= w_aiur * d_aiur + w_cl * y_at
    return grad / T


# -- public API on LabelTensor / PredictionGrid --


def nonbackground_probability(pred: PredictionGrid, t: int, g: int) -> float:
    T, G, _ = pred.data.shape
    if not (0 <= t < T and 0 <= g < G):
        raise IndexOutOfGrid(f"(t={t}, g={g}) outside ({T}, {G})")
    return float(1.0 - pred.data[t, g, pred.classes.background_index])


def class_mse(y: LabelTensor, pred) -> float:
    return float(np.mean(frame_class_mse(y.data, _pred_array(y, pred))))


def aiur(y: LabelTensor, pred) -> float:
    return float(np.mean(frame_aiur(y.data, _pred_array(y, pred), y.classes.background_index)))


def transform_targets(y: LabelTensor) -> TransformedTarget:
    y_prime, n_bac, n_non = transformed_values(y.data, y.classes.background_index)
    return TransformedTarget(
        y_prime=y_prime,
        y_at=attractor_field(y_prime, y.spec),
        n_bac=n_bac,
        n_non_bac=n_non,
        spec=y.spec,
    )


def attractor_values(tt: TransformedTarget) -> np.ndarray:
    return attractor_field(tt.y_prime, tt.spec)


def converging_loss(y: LabelTensor, pred) -> float:
    p = _pred_array(y, pred)
    y_at = transform_targets(y).y_at
    return float(np.mean(frame_converging(y_at, p, y.classes.background_index)))


def total_loss(y: LabelTensor, pred, weights=DEFAULT_WEIGHTS) -> LossReport:
    p = _pred_array(y, pred)
    mse_f, aiur_f, cl_f = frame_losses(y.data, p, y.spec, y.classes.background_index)
    w = tuple(float(x) for x in weights)
    mse, ai, cl = float(np.mean(mse_f)), float(np.mean(aiur_f)), float(np.mean(cl_f))
    return LossReport(
        class_mse=mse,
        aiur=ai,
        converging=cl,
        total=w[0] * mse + w[1] * ai + w[2] * cl,
        weights=w,
        per_frame={"class_mse": mse_f, "aiur": aiur_f, "converging": cl_f},
    )


def grad_total(y: LabelTensor, pred, weights=DEFAULT_WEIGHTS) -> np.ndarray:
    """d total / d p for every (t, g, m), total averaged over frames."""
    p = _pred_array(y, pred)
    y_at = transform_targets(y).y_at
    return _grad_arrays(y.data, p, y_at, y.classes.background_index, weights)


def softmax_backward(p: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of the per-cell softmax."""
    return p * (upstream - np.sum(p * upstream, axis=-1, keepdims=True))


def grad_logits(y: LabelTensor, logits: np.ndarray, weights=DEFAULT_WEIGHTS) -> np.ndarray:
    """Gradient of the total loss with respect to per-cell logits."""
    logits = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(logits)):
        raise NonFiniteInput("logits contain NaN or inf")
    p = softmax(logits)
    return softmax_backward(p, grad_total(y, p, weights))


def loss_and_grad_logits(
    y: LabelTensor, logits: np.ndarray, weights=DEFAULT_WEIGHTS, y_at: np.ndarray | None = None
) -> tuple[LossReport, np.ndarray, np.ndarray]:
    """Single pass returning (report, d/dlogits, probabilities) for optimizers."""
    if not np.all(np.isfinite(logits)):
        raise NonFiniteInput("logits contain NaN or inf")
    bg = y.classes.background_index
    p = softmax(logits)
    if y_at is None:
        y_at = transform_targets(y).y_at
    mse_f = frame_class_mse(y.data, p)
    aiur_f = frame_aiur(y.data, p, bg)
    cl_f = frame_converging(y_at, p, bg)
    w = tuple(float(x) for x in weights)
    mse, ai, cl = float(np.mean(mse_f)), float(np.mean(aiur_f)), float(np.mean(cl_f))
    report = LossReport(
        mse, ai, cl, w[0] * mse + w[1] * ai + w[2] * cl, w,
        {"class_mse": mse_f, "aiur": aiur_f, "converging": cl_f},
    )
    grad = softmax_backward(p, _grad_arrays(y.data, p, y_at, bg, w))
    return report, grad, p

