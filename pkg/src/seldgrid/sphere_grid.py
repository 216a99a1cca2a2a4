"""Equirectangular segmentation of the direction sphere.

Rows index elevation from the south pole (row 0 starts at -90 deg) and
columns index azimuth from -180 deg.  Flat cell indices are row-major,
``g = row * cols + col``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ElevationOutOfRange, IndexOutOfGrid, NonDivisibleGridSize

_INT_TOL = 1e-9


def wrap_azimuth(azimuth_deg):
    """Map azimuth(s) into [-180, 180)."""
    wrapped = np.mod(np.asarray(azimuth_deg, dtype=float) + 180.0, 360.0) - 180.0
    # np.mod can return exactly 360 for tiny negative inputs
    wrapped = np.where(wrapped >= 180.0, wrapped - 360.0, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class Direction:
    """A point on the sphere; azimuth is normalized on construction."""

    azimuth_deg: float
    elevation_deg: float

    def __post_init__(self):
        el = float(self.elevation_deg)
        if not math.isfinite(el) or el < -90.0 or el > 90.0:
            raise ElevationOutOfRange(f"elevation {self.elevation_deg} outside [-90, 90]")
        az = float(self.azimuth_deg)
        if not math.isfinite(az):
            raise ValueError(f"azimuth {self.azimuth_deg} is not finite")
        object.__setattr__(self, "azimuth_deg", wrap_azimuth(az))
        object.__setattr__(self, "elevation_deg", el)

    def unit_vector(self) -> np.ndarray:
        return direction_to_unit(self.azimuth_deg, self.elevation_deg)


@dataclass(frozen=True, order=True)
class CellIndex:
    row: int
    col: int


@dataclass(frozen=True)
class GridSpec:
    """An I x J grid with square cells of ``delta_deg`` degrees."""

    delta_deg: float
    rows: int
    cols: int

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def check(self, cell: CellIndex) -> None:
        if not (0 <= cell.row < self.rows and 0 <= cell.col < self.cols):
            raise IndexOutOfGrid(f"{cell} outside {self.rows}x{self.cols} grid")

    def flat_index(self, cell: CellIndex) -> int:
        self.check(cell)
        return cell.row * self.cols + cell.col

    def cell_at(self, g: int) -> CellIndex:
        if not 0 <= g < self.n_cells:
            raise IndexOutOfGrid(f"flat index {g} outside grid of {self.n_cells} cells")
        return CellIndex(*divmod(int(g), self.cols))

    @cached_property
    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """(azimuth, elevation) midpoints of every cell, flat order."""
        g = np.arange(self.n_cells)
        row, col = np.divmod(g, self.cols)
        az = -180.0 + (col + 0.5) * self.delta_deg
        el = -90.0 + (row + 0.5) * self.delta_deg
        return az, el

    @cached_property
    def neighbor_table(self) -> np.ndarray:
        """(G, 8) flat neighbor indices, padded with G where a neighbor is absent."""
        table = np.full((self.n_cells, 8), self.n_cells, dtype=np.intp)
        for g in range(self.n_cells):
            nbs = cell_neighbors(self, self.cell_at(g))
            table[g, : len(nbs)] = [nb.row * self.cols + nb.col for nb in nbs]
        return table

    @cached_property
    def neighbor_counts(self) -> np.ndarray:
        return np.sum(self.neighbor_table < self.n_cells, axis=1)


def build_grid(delta_deg: float) -> GridSpec:
    """Build the grid for an angular cell size that divides 180 and 360."""
    if not delta_deg > 0:
        raise NonDivisibleGridSize(f"grid size must be positive, got {delta_deg}")
    rows_f = 180.0 / delta_deg
    cols_f = 360.0 / delta_deg
    rows, cols = round(rows_f), round(cols_f)
    if abs(rows_f - rows) > _INT_TOL or abs(cols_f - cols) > _INT_TOL:
        raise NonDivisibleGridSize(f"{delta_deg} deg does not divide both 180 and 360")
    return GridSpec(delta_deg=float(delta_deg), rows=rows, cols=cols)


def directions_to_cells(spec: GridSpec, azimuth_deg, elevation_deg) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized direction -> (row, col) mapping."""
    az = wrap_azimuth(np.asarray(azimuth_deg, dtype=float))
    el = np.asarray(elevation_deg, dtype=float)
    if np.any(~np.isfinite(el)) or np.any(np.abs(el) > 90.0):
        raise ElevationOutOfRange("elevation outside [-90, 90]")
    row = np.floor((el + 90.0) / spec.delta_deg).astype(int)
    col = np.floor((az + 180.0) / spec.delta_deg).astype(int)
    # theta = +90 lands on row I; float rounding can also push col to J
    row = np.clip(row, 0, spec.rows - 1)
    col = np.clip(col, 0, spec.cols - 1)
    return row, col


def direction_to_cell(spec: GridSpec, d: Direction) -> CellIndex:
    row, col = directions_to_cells(spec, d.azimuth_deg, d.elevation_deg)
    return CellIndex(int(row), int(col))


def cell_to_direction(spec: GridSpec, c: CellIndex) -> Direction:
    """Midpoint of the cell's azimuth and elevation ranges."""
    spec.check(c)
    return Direction(
        -180.0 + (c.col + 0.5) * spec.delta_deg,
        -90.0 + (c.row + 0.5) * spec.delta_deg,
    )


def cell_neighbors(spec: GridSpec, c: CellIndex) -> list[CellIndex]:
    """Distinct cells of the 3x3 window around ``c``, center excluded.

    Columns wrap modulo J.  Rows beyond the poles are dropped, so pole-row
    cells have 5 neighbors on an ordinary grid.
    """
    spec.check(c)
    out: list[CellIndex] = []
    seen = {c}
    for di in (-1, 0, 1):
        i = c.row + di
        if not 0 <= i < spec.rows:
            continue
        for dj in (-1, 0, 1):
            nb = CellIndex(i, (c.col + dj) % spec.cols)
            if nb not in seen:
                seen.add(nb)
                out.append(nb)
    return out


def direction_to_unit(azimuth_deg, elevation_deg) -> np.ndarray:
    """Cartesian unit vector(s), last axis (x, y, z)."""
    az = np.radians(azimuth_deg)
    el = np.radians(elevation_deg)
    return np.stack(
        [np.cos(az) * np.cos(el), np.sin(az) * np.cos(el), np.sin(el)], axis=-1
    )


def unit_to_direction(vec) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`direction_to_unit` for arbitrary nonzero vectors."""
    v = np.asarray(vec, dtype=float)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    az = np.degrees(np.arctan2(y, x))
    el = np.degrees(np.arctan2(z, np.hypot(x, y)))
    return wrap_azimuth(az), el


def angular_distance_deg(az_a, el_a, az_b, el_b):
    """Great-circle distance in degrees; broadcasts over arrays."""
    ta, tb = np.radians(el_a), np.radians(el_b)
    dphi = np.radians(np.asarray(az_a, dtype=float) - np.asarray(az_b, dtype=float))
    # atan2 form stays accurate near 0 and 180 degrees, unlike arccos
    cross = np.hypot(
        np.cos(tb) * np.sin(dphi),
        np.cos(ta) * np.sin(tb) - np.sin(ta) * np.cos(tb) * np.cos(dphi),
    )
    dot = np.sin(ta) * np.sin(tb) + np.cos(ta) * np.cos(tb) * np.cos(dphi)
    d = np.degrees(np.arctan2(cross, dot))
    if np.ndim(d) == 0:
        return float(d)
    return d


def angular_distance(a: Direction, b: Direction) -> float:
    return angular_distance_deg(a.azimuth_deg, a.elevation_deg, b.azimuth_deg, b.elevation_deg)


def roundtrip_bound(spec: GridSpec) -> float:
    """Largest center-to-corner great-circle distance over all cells."""
    az_c, el_c = spec.centers
    half = spec.delta_deg / 2.0
    worst = 0.0
    for daz in (-half, half):
        for del_ in (-half, half):
            d = angular_distance_deg(az_c, el_c, az_c + daz, el_c + del_)
            worst = max(worst, float(np.max(d)))
    return worst
