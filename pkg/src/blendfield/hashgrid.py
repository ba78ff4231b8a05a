"""Expression bases stored as multi-level hash tables.

A bank holds a mean table plus K displacement tables. An expression
coefficient vector blends them entrywise into a single table, which is then
queried by trilinear interpolation of spatially hashed grid corners.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError, DomainError, ShapeError
from .validation import check_box, check_coefficients

# Fixed corner-hash constants (XOR of coordinate-wise products, first
# constant 1). Never change: stored checkpoints index with them.
HASH_CONSTANTS = (1, 2654435761, 805459861)


@dataclass(frozen=True)
class BankConfig:
    """Geometry and initialization of a basis bank.

    levels: resolution levels per table.
    table_size: entries per level, power of two.
    feat_dim: features per entry.
    coarsest_res / finest_res: cells per axis at the first / last level.
    num_bases: number of displacement tables K.
    bounding_box: ((xmin, ymin, zmin), (xmax, ymax, zmax)) world box.
    """

    levels: int = 16
    table_size: int = 2**14
    feat_dim: int = 4
    coarsest_res: int = 16
    finest_res: int = 1024
    num_bases: int = 4
    init_low: float = -1e-4
    init_high: float = 1e-4
    bounding_box: tuple = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))

    def __post_init__(self):
        if self.levels < 1:
            raise ConfigError("levels must be >= 1")
        t = self.table_size
        if t < 1 or (t & (t - 1)) != 0:
            raise ConfigError(f"table_size must be a power of two, got {t}")
        if self.feat_dim < 1:
            raise ConfigError("feat_dim must be >= 1")
        if self.coarsest_res > self.finest_res:
            raise ConfigError("coarsest_res must be <= finest_res")
        if self.coarsest_res < 1:
            raise ConfigError("coarsest_res must be >= 1")
        if self.num_bases < 1:
            raise ConfigError("num_bases must be >= 1")
        if not self.init_low < self.init_high:
            raise ConfigError("init_low must be < init_high")
        box = np.asarray(self.bounding_box, dtype=np.float64).reshape(2, 3)
        if not np.all(box[1] > box[0]):
            raise ConfigError("bounding_box must have positive volume")
        # quantize to f32: checkpoints store the box at that precision, and
        # keeping runtime == serialized keeps round-trip renders bit-exact
        box32 = box.astype(np.float32).astype(np.float64)
        object.__setattr__(
            self, "bounding_box", (tuple(box32[0]), tuple(box32[1]))
        )

    @property
    def feat_total(self) -> int:
        return self.levels * self.feat_dim

    @property
    def box(self) -> np.ndarray:
        return check_box(self.bounding_box)

    @property
    def growth_factor(self) -> float:
        """Per-level geometric growth b with N_0 = coarsest, N_{L-1} = finest."""
        if self.levels == 1:
            return 1.0
        return float(
            np.exp(
                (np.log(self.finest_res) - np.log(self.coarsest_res))
                / (self.levels - 1)
            )
        )

    def level_resolution(self, level: int) -> int:
        if not 0 <= level < self.levels:
            raise IndexError(f"level {level} out of range [0, {self.levels})")
        if level == self.levels - 1:
            return self.finest_res
        return int(np.floor(self.coarsest_res * self.growth_factor**level))

    def level_resolutions(self) -> np.ndarray:
        return np.array(
            [self.level_resolution(l) for l in range(self.levels)],
            dtype=np.int64,
        )

    def dense_levels(self) -> np.ndarray:
        """Levels whose full corner lattice fits in the table (collision-free)."""
        res = self.level_resolutions()
        return ((res + 1) ** 3 <= self.table_size).astype(np.uint8)


@dataclass
class BlendedTable:
    """A materialized table h0 + sum_i w_i h_i with its provenance."""

    entries: np.ndarray  # (levels * table_size, feat_dim)
    coefficients: np.ndarray
    config: BankConfig


@dataclass
class BasisBank:
    """Mean table plus K displacement tables, all (L*T, F) float32."""

    config: BankConfig
    h0: np.ndarray
    bases: list = field(default_factory=list)

    @property
    def num_bases(self) -> int:
        return len(self.bases)

    def parameter_arrays(self) -> list:
        return [self.h0] + list(self.bases)

    def stacked(self) -> np.ndarray:
        """(K+1, L*T, F) view-free stack: row 0 is h0."""
        return np.stack([self.h0] + list(self.bases), axis=0)


def new_bank(config: BankConfig, seed: int) -> BasisBank:
    """Initialize all tables i.i.d. uniform on [init_low, init_high]."""
    rng = np.random.default_rng(seed)
    shape = (config.levels * config.table_size, config.feat_dim)
    lo, hi = config.init_low, config.init_high
    h0 = rng.uniform(lo, hi, size=shape).astype(np.float32)
    bases = [
        rng.uniform(lo, hi, size=shape).astype(np.float32)
        for _ in range(config.num_bases)
    ]
    return BasisBank(config=config, h0=h0, bases=bases)


def blend(bank: BasisBank, w) -> BlendedTable:
    """Materialize h0 + sum_i w_i h_i entrywise (in the bank's dtype)."""
    w = check_coefficients(w, bank.num_bases)
    entries = bank.h0.copy()
    for wi, hi in zip(w, bank.bases):
        if wi != 0.0:
            entries += entries.dtype.type(wi) * hi
    return BlendedTable(entries=entries, coefficients=w, config=bank.config)


def _normalize_points(points: np.ndarray, config: BankConfig) -> np.ndarray:
    box = config.box
    span = box[1] - box[0]
    u = (points - box[0]) / span
    if np.any(u < 0.0) or np.any(u > 1.0):
        raise DomainError("point outside the bounding box")
    return u


def encode_points(points, table: BlendedTable) -> np.ndarray:
    """Concatenated per-level trilinear features for (M, 3) world points."""
    config = table.config
    pts = np.ascontiguousarray(points, dtype=table.entries.dtype)
    if pts.ndim == 1:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ShapeError(f"points must be (M, 3), got {pts.shape}")
    u = _normalize_points(pts, config).astype(table.entries.dtype)
    out = np.empty((pts.shape[0], config.feat_total), dtype=table.entries.dtype)
    _kernels.encode_points(
        u,
        table.entries,
        config.level_resolutions(),
        config.dense_levels(),
        config.table_size,
        config.feat_dim,
        out,
    )
    return out


def encode_point(x, table: BlendedTable) -> np.ndarray:
    """Feature vector (length L*F) for a single world point."""
    return encode_points(np.asarray(x, dtype=np.float64)[None, :], table)[0]


def scatter_feature_gradients(
    points, dfeat, config: BankConfig, grad_table: np.ndarray
) -> np.ndarray:
    """Accumulate dL/d(entry) of a single table for encode_points at points."""
    pts = np.ascontiguousarray(points, dtype=grad_table.dtype)
    if pts.ndim == 1:
        pts = pts[None, :]
    df = np.ascontiguousarray(dfeat, dtype=grad_table.dtype)
    if df.ndim == 1:
        df = df[None, :]
    if df.shape != (pts.shape[0], config.feat_total):
        raise ShapeError(
            f"dfeat must be ({pts.shape[0]}, {config.feat_total}), got {df.shape}"
        )
    if grad_table.shape != (config.levels * config.table_size, config.feat_dim):
        raise ShapeError("gradient buffer shape does not match the bank config")
    u = _normalize_points(pts, config).astype(grad_table.dtype)
    _kernels.encode_scatter(
        u,
        df,
        grad_table,
        config.level_resolutions(),
        config.dense_levels(),
        config.table_size,
        config.feat_dim,
    )
    return grad_table


def scatter_gradients(x, dfeat, w, config: BankConfig, grad_h0, grad_bases) -> None:
    """Backward of blend + encode for query points.

    Each touched entry of h0 receives weight * dfeat; the same entry of
    basis i receives w_i * weight * dfeat. Accumulation is additive, so
    repeated calls sum.
    """
    w = check_coefficients(w, len(grad_bases))
    expected = (config.levels * config.table_size, config.feat_dim)
    for name, buf in [("grad_h0", grad_h0)] + [
        (f"grad_bases[{i}]", b) for i, b in enumerate(grad_bases)
    ]:
        if buf.shape != expected:
            raise ShapeError(f"{name} must have shape {expected}, got {buf.shape}")
    # One scatter into a scratch buffer, then weighted accumulation: the
    # sums are identical to scattering each table separately.
    scratch = np.zeros_like(grad_h0)
    scatter_feature_gradients(x, dfeat, config, scratch)
    grad_h0 += scratch
    for wi, gb in zip(w, grad_bases):
        if wi != 0.0:
            gb += scratch.dtype.type(wi) * scratch
