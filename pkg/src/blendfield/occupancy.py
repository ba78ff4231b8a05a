"""Expression-aware occupancy grid for empty-space skipping.

The grid stores an exponential moving maximum of per-cell density probes,
evaluated under the per-basis coefficient envelope so that every expression
the training set can produce is covered. Occupancy bits are the thresholded
densities; a coarse OR-reduction accelerates marching through empty space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError, ShapeError
from .validation import check_box


def coeff_envelope(coeff_rows) -> np.ndarray:
    """Componentwise maximum of training coefficients (one row per frame)."""
    rows = np.asarray(coeff_rows, dtype=np.float32)
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise ConfigError("coeff_envelope needs at least one frame of coefficients")
    return rows.max(axis=0)


def default_tau(box, resolution: int = 128, alpha_miss: float = 1e-3) -> float:
    """Density threshold sized so a skipped cell's weight stays small.

    A cell crossing of length up to cell_diag with density tau contributes
    alpha of roughly tau * cell_diag; keeping that a factor 4 under
    alpha_miss leaves margin for model-vs-scene mismatch at blob edges.
    """
    box = check_box(box)
    cell_diag = float(np.linalg.norm(box[1] - box[0])) / resolution
    return 0.25 * alpha_miss / cell_diag


@dataclass
class OccupancyGrid:
    """Dense density EMA plus occupancy bits over the bounding box."""

    box: np.ndarray
    resolution: int = 128
    tau: float = 0.01
    ema_decay: float = 0.95
    densities: np.ndarray = None
    bits: np.ndarray = None
    warm_up: bool = True
    update_count: int = 0
    coarse_factor: int = field(default=0, repr=False)
    coarse_bits: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.box = check_box(self.box)
        n = self.resolution**3
        if self.densities is None:
            self.densities = np.zeros(n, dtype=np.float32)
        if self.densities.shape != (n,):
            raise ShapeError(f"densities must be flat ({n},)")
        if self.coarse_factor == 0:
            self.coarse_factor = 8 if self.resolution % 8 == 0 else 1
        if self.bits is None:
            self.bits = np.ones(n, dtype=np.uint8)
        self._refresh_coarse()

    @property
    def cell_size(self) -> np.ndarray:
        return (self.box[1] - self.box[0]) / self.resolution

    def cell_indices(self, points) -> np.ndarray:
        """Flat cell index per point; points outside clamp to border cells."""
        pts = np.asarray(points, dtype=np.float64)
        rel = (pts - self.box[0]) / (self.box[1] - self.box[0])
        ijk = np.clip(
            (rel * self.resolution).astype(np.int64), 0, self.resolution - 1
        )
        return (ijk[:, 0] * self.resolution + ijk[:, 1]) * self.resolution + ijk[:, 2]

    def query(self, points) -> np.ndarray:
        """Occupied flag per point; anything outside the box is unoccupied."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        inside = np.all((pts >= self.box[0]) & (pts <= self.box[1]), axis=1)
        out = np.zeros(pts.shape[0], dtype=bool)
        if inside.any():
            idx = self.cell_indices(pts[inside])
            out[inside] = self.bits[idx] != 0
        return out

    def occupancy_fraction(self) -> float:
        return float(self.bits.mean())

    def _refresh_bits(self):
        if self.warm_up:
            self.bits.fill(1)
        else:
            np.greater_equal(self.densities, np.float32(self.tau), out=self.bits.view(bool))
        self._refresh_coarse()

    def _refresh_coarse(self):
        f = self.coarse_factor
        r = self.resolution
        if f == 1:
            self.coarse_bits = self.bits
            return
        c = r // f
        blocks = self.bits.reshape(c, f, c, f, c, f)
        self.coarse_bits = np.ascontiguousarray(
            blocks.any(axis=(1, 3, 5)).astype(np.uint8).reshape(-1)
        )

    def end_warm_up(self):
        self.warm_up = False

    def serialize_state(self) -> dict:
        return {
            "tau": self.tau,
            "densities": self.densities,
            "bits": np.packbits(self.bits.astype(bool)),
        }


def probe_coefficients(envelope: np.ndarray) -> list:
    """Coefficient vectors probed per update: neutral plus each scaled basis."""
    k = envelope.shape[0]
    probes = [np.zeros(k, dtype=np.float32)]
    for i in range(k):
        w = np.zeros(k, dtype=np.float32)
        w[i] = envelope[i]
        probes.append(w)
    return probes


def _dilate_max(field: np.ndarray) -> np.ndarray:
    """Max over the 6 face neighbors, folded into a copy of the field."""
    out = field.copy()
    np.maximum(out[1:], field[:-1], out=out[1:])
    np.maximum(out[:-1], field[1:], out=out[:-1])
    np.maximum(out[:, 1:], field[:, :-1], out=out[:, 1:])
    np.maximum(out[:, :-1], field[:, 1:], out=out[:, :-1])
    np.maximum(out[:, :, 1:], field[:, :, :-1], out=out[:, :, 1:])
    np.maximum(out[:, :, :-1], field[:, :, 1:], out=out[:, :, :-1])
    return out


def update_grid(
    grid: OccupancyGrid,
    density_fn,
    envelope: np.ndarray,
    seed: int = 0,
    n_slabs: int = 1,
    full: bool = False,
    rebuild: bool = False,
    margin: int = 2,
) -> OccupancyGrid:
    """One grid update round.

    density_fn(points, w) must return the model's density at world points
    for coefficient vector w. Cells are probed at one jittered interior
    point; the fresh value is the max over the neutral field and each
    envelope-scaled basis field. A probe testifies for its cell and every
    cell within L1 distance `margin`: a conservative halo, since faint
    boundary features sit below what 8-bit supervision can teach the model
    and pruning them would drop real (if tiny) ray weight. The result is
    folded into the EMA store as a moving max (probed cells decay first;
    halo writes only raise neighbors). With n_slabs > 1, each round covers
    a deterministic interleaved subset and consecutive rounds sweep the
    whole grid. rebuild=True overwrites stored densities instead of
    max-folding (used once after warm-up, when the moving max would take
    thousands of steps to forget the unconverged initial density).
    """
    res = grid.resolution
    n_cells = res**3
    round_idx = grid.update_count
    if full or n_slabs <= 1:
        cells = np.arange(n_cells, dtype=np.int64)
    else:
        cells = np.arange(round_idx % n_slabs, n_cells, n_slabs, dtype=np.int64)
    rng = np.random.default_rng((seed, round_idx))
    jitter = rng.random((cells.shape[0], 3))
    ijk = np.stack(
        [cells // (res * res), (cells // res) % res, cells % res], axis=1
    ).astype(np.float64)
    pts = grid.box[0] + (ijk + jitter) * grid.cell_size
    fresh = None
    for w in probe_coefficients(envelope):
        sigma = np.asarray(density_fn(pts, w), dtype=np.float32)
        fresh = sigma if fresh is None else np.maximum(fresh, sigma)
    field = np.zeros(n_cells, dtype=np.float32)
    field[cells] = fresh
    field = field.reshape(res, res, res)
    for _ in range(margin):
        field = _dilate_max(field)
    field = field.reshape(-1)
    if rebuild:
        np.copyto(grid.densities, field)
    else:
        grid.densities[cells] *= np.float32(grid.ema_decay)
        np.maximum(grid.densities, field, out=grid.densities)
    grid.update_count += 1
    grid._refresh_bits()
    return grid
