"""
The union loss on a single isolated event
=========================================

The loss adds a class-wise MSE, a soft intersection-over-union term and a
converging term.  The converging term weights each cell's non-background
probability by an attractor value: very negative on the event, mildly
negative next to it, positive elsewhere.
"""

import numpy as np

from seldgrid import (
    ClassMap,
    build_grid,
    encode_frames,
    fd_grad_local,
    grad_logits,
    make_event,
    max_relative_error,
    total_loss,
    transform_targets,
)

spec, classes = build_grid(15), ClassMap.with_count(13)
target, _ = encode_frames([make_event(0, 2, 0, 0, 0)], 1, spec, classes)

# The attractor field around the event, as a 5 x 5 window of the grid.
y_at = transform_targets(target).y_at[0].reshape(spec.rows, spec.cols)
print("attractor values around the event (rows 4..8, cols 10..14):")
print(y_at[4:9, 10:15])

# A perfect prediction zeroes the first two terms and collects -286.
print("perfect:", total_loss(target, target.data).to_dict() | {"per_frame": "..."})


def mass_at(g):
    p = np.zeros_like(target.data)
    p[..., -1] = 1.0
    p[0, g, -1], p[0, g, 2] = 0.0, 1.0
    return p


# Moving the mass one cell off target costs a lot, two cells off even more.
for label, g in [("on target", 156), ("one cell off", 157), ("two cells off", 158)]:
    print(f"{label:>14s}: converging {total_loss(target, mass_at(g)).converging:8.1f}")

# Gradients are hand-derived; compare them with central differences.
logits = np.random.default_rng(0).normal(size=target.data.shape)
err = max_relative_error(grad_logits(target, logits), fd_grad_local(target, logits, logits=True))
print(f"logit gradient vs finite differences: max relative error {err:.1e}")
