"""The trainable avatar model: tables + decoder + occupancy grid.

Two architectures share this container. In blend mode a bank of K
displacement tables is combined linearly by the expression coefficients
before lookup. In concat mode a single table's features are concatenated
with a learned embedding of the coefficients and decoded by a wider,
deeper network; it exists as the comparison baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import net as fieldnet
from .camera import Camera, all_pixels, generate_rays
from .errors import ConfigError
from .hashgrid import BankConfig, BasisBank, BlendedTable, blend, new_bank
from .occupancy import OccupancyGrid, default_tau
from .render import (
    FieldEvaluator,
    RenderOptions,
    default_step,
    render_rays,
    render_rays_fast,
)
from .validation import check_coefficients

MODES = ("blend", "concat")
CONCAT_WIDTH = 128
CONCAT_HIDDEN = 6  # plus the density output layer: 7 weight layers to sigma
EMBED_WIDTH = 64


@dataclass
class AvatarModel:
    """Everything needed to render, plus training-range metadata."""

    mode: str
    k: int
    bank_config: BankConfig
    net_params: fieldnet.FieldNetParams
    grid: OccupancyGrid
    bank: BasisBank | None = None
    table: np.ndarray | None = None
    embed_params: fieldnet.CoeffEmbedParams | None = None
    render_step: float = 0.0
    train_width: int = 0
    train_height: int = 0
    coeff_min: np.ndarray = field(default=None)
    coeff_max: np.ndarray = field(default=None)
    default_camera: Camera | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.render_step <= 0.0:
            self.render_step = default_step(self.bank_config.bounding_box)
        if self.coeff_min is None:
            self.coeff_min = np.zeros(self.k, dtype=np.float32)
        if self.coeff_max is None:
            self.coeff_max = np.ones(self.k, dtype=np.float32)

    @property
    def box(self) -> np.ndarray:
        return self.bank_config.box

    def table_arrays(self) -> list:
        """All learnable tables, h0 first."""
        if self.mode == "blend":
            return self.bank.parameter_arrays()
        return [self.table]

    def table_for(self, w) -> BlendedTable:
        w = check_coefficients(w, self.k)
        if self.mode == "blend":
            return blend(self.bank, w)
        return BlendedTable(entries=self.table, coefficients=w, config=self.bank_config)

    def evaluator_for(self, w, dtype=None) -> FieldEvaluator:
        """A FieldEvaluator bound to coefficients w (and its embedding)."""
        w = check_coefficients(w, self.k)
        table = self.table_for(w)
        params = self.net_params
        emb_row = None
        emb_cache = None
        if self.mode == "concat":
            emb, emb_cache = fieldnet.embed_forward(
                w[None, :].astype(np.float32), self.embed_params
            )
            emb_row = emb[0]
        if dtype is not None:
            if table.entries.dtype != dtype:
                table = BlendedTable(
                    entries=table.entries.astype(dtype),
                    coefficients=table.coefficients,
                    config=table.config,
                )
            if params.sigma_w.dtype != dtype:
                params = params.astype(dtype)
            if emb_row is not None and emb_row.dtype != dtype:
                emb_row = emb_row.astype(dtype)
        ev = FieldEvaluator(table, params, emb_row)
        ev.emb_cache = emb_cache
        return ev

    def density_fn(self, points, w) -> np.ndarray:
        """Model density at world points for coefficients w (for the grid)."""
        ev = self.evaluator_for(w)
        box = self.box
        dtype = ev.table.entries.dtype
        upos = ((np.asarray(points) - box[0]) / (box[1] - box[0])).astype(dtype)
        np.clip(upos, 0.0, 1.0, out=upos)
        return ev.density(np.ascontiguousarray(upos))

    def render_options(self, **overrides) -> RenderOptions:
        base = dict(step=self.render_step, max_samples=1024, early_term=1e-4,
                    jitter=False, seed=0, block=4, check=False)
        base.update(overrides)
        return RenderOptions(**base)

    def render_image(self, w, camera: Camera, background=(0.0, 0.0, 0.0),
                     options: RenderOptions | None = None, chunk: int = 65536):
        """Full-frame render; returns (rgb (H, W, 3), mask (H, W)) float32."""
        if options is None:
            options = self.render_options()
        ev = self.evaluator_for(w)
        h, wd = camera.height, camera.width
        pixels = all_pixels(wd, h)
        rgb = np.empty((h * wd, 3), dtype=np.float32)
        mask = np.empty(h * wd, dtype=np.float32)
        bg = np.asarray(background, dtype=np.float32)
        for s in range(0, pixels.shape[0], chunk):
            e = min(s + chunk, pixels.shape[0])
            origins, dirs, t_near, t_far, hit = generate_rays(
                camera, pixels[s:e], self.box
            )
            res = render_rays_fast(
                ev, origins, dirs, t_near, t_far, self.grid, options,
                background=np.broadcast_to(bg, (e - s, 3)),
                ray_uid=np.arange(s, e, dtype=np.int64),
            )
            rgb[s:e] = res.final_color
            mask[s:e] = res.mask
        return rgb.reshape(h, wd, 3), mask.reshape(h, wd)


def new_model(
    mode: str,
    bank_config: BankConfig,
    seed: int = 0,
    width: int = 64,
    n_hidden: int = 3,
    sigma_bias: float | None = None,
    grid_resolution: int = 128,
    tau: float | None = None,
) -> AvatarModel:
    """Fresh model with seeded tables, decoder, and an all-occupied grid."""
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    k = bank_config.num_bases
    feat = bank_config.feat_total
    if mode == "blend":
        bank = new_bank(bank_config, seed)
        table = None
        embed = None
        net_cfg = fieldnet.FieldNetConfig(feat_in=feat, width=width, n_hidden=n_hidden)
    else:
        bank = None
        rng = np.random.default_rng(seed)
        table = rng.uniform(
            bank_config.init_low, bank_config.init_high,
            size=(bank_config.levels * bank_config.table_size, bank_config.feat_dim),
        ).astype(np.float32)
        embed = fieldnet.init_embed(
            fieldnet.CoeffEmbedConfig(k=k, width=EMBED_WIDTH), seed + 1
        )
        net_cfg = fieldnet.FieldNetConfig(
            feat_in=feat + EMBED_WIDTH, width=CONCAT_WIDTH, n_hidden=CONCAT_HIDDEN
        )
    params = fieldnet.init_params(net_cfg, seed + 2)
    if sigma_bias is not None:
        params.sigma_b[0] = np.float32(sigma_bias)
    box = bank_config.box
    grid = OccupancyGrid(
        box=box,
        resolution=grid_resolution,
        tau=default_tau(box, grid_resolution) if tau is None else tau,
    )
    return AvatarModel(
        mode=mode, k=k, bank_config=bank_config, net_params=params,
        grid=grid, bank=bank, table=table, embed_params=embed,
    )
