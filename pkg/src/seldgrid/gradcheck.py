"""Central finite-difference oracle for the loss gradients.

Neither oracle touches the analytic gradient code.  :func:`fd_grad`
re-evaluates the loss kernels on whole perturbed frames; :func:`fd_grad_local`
rebuilds each perturbed loss from one modified cell and is what the bulk
checks use.  In the whole-frame oracle each perturbed copy is stacked along the frame
axis so one vectorized call evaluates a whole chunk of perturbations.  The
three terms are differenced separately (the total is their weighted sum)
so the large converging term does not drown the small MSE differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses
from .label_codec import ClassMap, LabelTensor, encode_frames, make_event
from .sphere_grid import GridSpec

FD_STEP = 1e-5
_CHUNK = 128


def _fd_frame(y_t, x_t, spec, bg, weights, h, cell_map, dtype):
    """FD gradient of one frame's weighted loss w.r.t. the (G, M) input x_t.

    ``cell_map`` turns per-cell inputs into per-cell probabilities (identity
    or softmax); only the perturbed cell of each copy is re-mapped.
    """
    G, M = x_t.shape
    n = G * M
    x_t = x_t.astype(dtype)
    y_t = y_t.astype(dtype)[None]
    base = cell_map(x_t)
    w = np.asarray(weights, dtype=dtype)
    out = np.empty(n, dtype=dtype)
    for start in range(0, n, _CHUNK):
        idx = np.arange(start, min(start + _CHUNK, n))
        k = len(idx)
        rows, cols = np.divmod(idx, M)
        diffs = np.zeros((3, k), dtype=dtype)
        for sign in (1, -1):
            cells = x_t[rows].copy()
            cells[np.arange(k), cols] += sign * h
            batch = np.broadcast_to(base, (k, G, M)).copy()
            batch[np.arange(k), rows] = cell_map(cells)
            # y_t stays (1, G, M) and broadcasts against the batch
            comps = losses.frame_losses(y_t, batch, spec, bg)
            for c in range(3):
                diffs[c] += sign * comps[c]
        out[idx] = (w @ diffs) / (2 * h)
    return out.reshape(G, M)


def fd_grad(y: LabelTensor, x: np.ndarray, weights=losses.DEFAULT_WEIGHTS, *, logits=False,
            h=FD_STEP, dtype=np.float64) -> np.ndarray:
    """Finite-difference gradient of the frame-averaged total loss.

    ``x`` is a probability tensor, or logits when ``logits=True``.
    """
    T = x.shape[0]
    cell_map = losses.softmax if logits else (lambda b: b)
    bg = y.classes.background_index
    grads = [
        _fd_frame(y.data[t], x[t], y.spec, bg, weights, h, cell_map, dtype) / T
        for t in range(T)
    ]
    return np.stack(grads).astype(np.float64)


def fd_grad_local(y: LabelTensor, x: np.ndarray, weights=losses.DEFAULT_WEIGHTS, *, logits=False,
                  h=FD_STEP) -> np.ndarray:
    """Central differences evaluated cell by cell from the loss definitions.

    A perturbation of one cell leaves every other cell's contribution to
    the per-frame sums unchanged, so each perturbed loss is rebuilt from
    the unperturbed sums plus the one modified cell.  Same function as
    :func:`fd_grad`, about a hundred times cheaper, and independent of
    the kernels in :mod:`seldgrid.losses`.
    """
    T, G, M = x.shape
    bg = y.classes.background_index
    y_at = losses.transform_targets(y).y_at
    w_mse, w_aiur, w_cl = (float(v) for v in weights)
    eye = np.eye(M)
    out = np.empty((T, G, M))
    for t in range(T):
        xt = np.asarray(x[t], dtype=np.float64)
        yt = y.data[t]
        p = losses.softmax(xt) if logits else xt
        yg = 1.0 - yt[:, bg]
        pg = 1.0 - p[:, bg]
        inter_rest = np.sum(yg * pg) - yg * pg  # (G,) sums without cell g
        union_rest = np.sum(yg + pg - yg * pg) - (yg + pg - yg * pg)
        has_target = yg.sum() > 0

        diff = np.zeros((G, M))
        for sign in (1.0, -1.0):
            # q[g, m] is cell g's distribution after nudging its entry m
            shifted = xt[:, None, :] + sign * h * eye[None]
            q = losses.softmax(shifted) if logits else shifted
            qg = 1.0 - q[..., bg]  # (G, M)
            mse = np.sum((yt[:, None, :] - q) ** 2, axis=-1) / (G * M)
            cl = y_at[t][:, None] * qg
            if has_target:
                inter = inter_rest[:, None] + yg[:, None] * qg
                union = union_rest[:, None] + yg[:, None] + qg - yg[:, None] * qg
                ai = 1.0 - inter / union
            else:
                ai = 0.0
            diff += sign * (w_mse * mse + w_aiur * ai + w_cl * cl)
        out[t] = diff / (2 * h) / T
    return out


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max_i |a_i - n_i| / max_j |n_j|.

    Entries are scaled by the largest gradient magnitude rather than their
    own: the O(h^2) truncation error of a 1e-5 step is ~1e-9 in absolute
    terms, which swamps entries sitting near a zero crossing.
    """
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    scale = max(float(np.max(np.abs(n))), float(np.max(np.abs(a))), np.finfo(float).tiny)
    return float(np.max(np.abs(a - n)) / scale)


def random_instance(rng: np.random.Generator, spec: GridSpec, classes: ClassMap,
                    frames: int = 1, max_events: int = 4, logit_scale: float = 2.0):
    """Random one-hot target and random logits for gradient checks."""
    events = []
    for t in range(frames):
        for src in range(int(rng.integers(0, max_events + 1))):
            az = rng.uniform(-180, 180)
            el = np.degrees(np.arcsin(rng.uniform(-1, 1)))
            events.append(make_event(t, rng.integers(0, classes.background_index), src, az, el))
    y, _ = encode_frames(events, frames, spec, classes)
    logits = rng.normal(scale=logit_scale, size=y.data.shape)
    return y, logits


@dataclass
class GradCheckResult:
    trials: int
    max_rel_error_prob: float
    max_rel_error_logits: float

    @property
    def worst(self) -> float:
        return max(self.max_rel_error_prob, self.max_rel_error_logits)

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "max_rel_error_prob": self.max_rel_error_prob,
            "max_rel_error_logits": self.max_rel_error_logits,
            "fd_step": FD_STEP,
        }


def run_grad_check(spec: GridSpec, classes: ClassMap, trials: int, seed: int = 0,
                   weights=losses.DEFAULT_WEIGHTS) -> GradCheckResult:
    rng = np.random.default_rng(seed)
    worst_p = worst_z = 0.0
    for _ in range(trials):
        y, z = random_instance(rng, spec, classes)
        p = losses.softmax(z)
        worst_p = max(worst_p, max_relative_error(
            losses.grad_total(y, p, weights), fd_grad_local(y, p, weights)))
        worst_z = max(worst_z, max_relative_error(
            losses.grad_logits(y, z, weights), fd_grad_local(y, z, weights, logits=True)))
    return GradCheckResult(trials, worst_p, worst_z)
