"""
From directions to grid cells and back
======================================

Sound-event directions are quantized onto an equirectangular grid: rows
step through elevation from the south pole, columns through azimuth from
-180 degrees.  Each label frame becomes a (cells, classes) one-hot matrix.
"""

import numpy as np

from seldgrid import (
    ClassMap,
    Direction,
    build_grid,
    cell_neighbors,
    decode_predictions,
    direction_to_cell,
    encode_frames,
    make_event,
    roundtrip_bound,
)

# The 15 degree grid has 12 rows and 24 columns.
spec = build_grid(15)
print(f"grid {spec.delta_deg} deg: {spec.rows} x {spec.cols} = {spec.n_cells} cells")

# Straight ahead lands in row 6, column 12.  The north pole is folded into
# the top row and +180 azimuth is the same column as -180.
for az, el in [(0, 0), (180, 90), (-180, -90)]:
    print((az, el), "->", direction_to_cell(spec, Direction(az, el)))

# Neighborhoods wrap around in azimuth but stop at the poles.
print("neighbors of (6, 0):", [(c.row, c.col) for c in cell_neighbors(spec, direction_to_cell(spec, Direction(-179, 1)))])

# Worst-case quantization error: cell center to its farthest corner.
for delta in (10, 15, 20):
    print(f"roundtrip bound at {delta} deg: {roundtrip_bound(build_grid(delta)):.2f} deg")

# Encode a frame with three events.  Two of them share a cell, so only the
# lower class index survives and the collision report says so.
classes = ClassMap.starss23()
events = [
    make_event(0, 8, 0, 32, 5),   # music
    make_event(0, 3, 0, 40, 10),  # telephone, same cell as the music
    make_event(0, 0, 0, -120, -30),
]
labels, collisions = encode_frames(events, 1, spec, classes)
print("non-background cells:", int(labels.nonbackground_mask().sum()), "collisions:", collisions.entries)

# Decoding puts each detection at its cell's midpoint.
for ev in decode_predictions(labels.data, spec, classes):
    print(f"  {classes.names[ev.class_id]:<30s} az {ev.azimuth:7.1f}  el {ev.elevation:6.1f}")

# Any soft prediction decodes by per-cell argmax; exact ties fall to background.
soft = np.full(labels.data.shape, 0.5 / 13)
soft[..., -1] = 0.5
print("background-dominant frame decodes to", decode_predictions(soft, spec, classes))
