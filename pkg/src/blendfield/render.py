"""Occupancy-gated ray marching and differentiable compositing.

The render core marches a uniform comb of samples per ray (empty cells
skipped), evaluates the field in blocks so saturated rays stop early, and
composites color and mask. With caching enabled the whole chain is
reversible: render_backward pushes pixel gradients back to the decoder
parameters and a dense per-table gradient buffer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels, net as fieldnet
from .errors import NumericError, ShapeError, StateError
from .hashgrid import BankConfig, BlendedTable
from .occupancy import OccupancyGrid


@dataclass(frozen=True)
class RenderOptions:
    """Knobs for one render call; defaults favor inference."""

    step: float
    max_samples: int = 1024
    early_term: float = 1e-4
    jitter: bool = False
    seed: int = 0
    block: int = 16
    check: bool = False


def default_step(box, divisor: int = 1024) -> float:
    box = np.asarray(box, dtype=np.float64).reshape(2, 3)
    return float(np.linalg.norm(box[1] - box[0])) / divisor


def march(origins, dirs, t_near, t_far, grid: OccupancyGrid, options: RenderOptions,
          ray_uid=None):
    """March all rays; returns flat sample arrays plus per-ray offsets."""
    dtype = np.float32 if origins.dtype != np.float64 else np.float64
    origins = np.ascontiguousarray(origins, dtype=dtype)
    dirs = np.ascontiguousarray(dirs, dtype=dtype)
    t_near = np.ascontiguousarray(t_near, dtype=dtype)
    t_far = np.ascontiguousarray(t_far, dtype=dtype)
    n = origins.shape[0]
    if ray_uid is None:
        ray_uid = np.arange(n, dtype=np.int64)
    else:
        ray_uid = np.ascontiguousarray(ray_uid, dtype=np.int64)
    counts = np.empty(n, dtype=np.int64)
    bmin = np.ascontiguousarray(grid.box[0], dtype=dtype)
    bmax = np.ascontiguousarray(grid.box[1], dtype=dtype)
    empty_pos = np.empty((0, 3), dtype=dtype)
    empty_t = np.empty(0, dtype=dtype)
    empty_ray = np.empty(0, dtype=np.int64)
    args = (
        origins, dirs, t_near, t_far, ray_uid,
        grid.bits, grid.coarse_bits, grid.coarse_factor,
        bmin, bmax, grid.resolution,
        dtype(options.step), options.max_samples,
        options.jitter, np.uint64(options.seed),
        counts,
    )
    _kernels.march_rays(*args, False, empty_ray, empty_pos, empty_t, empty_ray)
    offsets = np.zeros(n, dtype=np.int64)
    np.cumsum(counts[:-1], out=offsets[1:])
    total = int(counts.sum())
    pos = np.empty((total, 3), dtype=dtype)
    t_vals = np.empty(total, dtype=dtype)
    ray_index = np.empty(total, dtype=np.int64)
    _kernels.march_rays(*args, True, offsets, pos, t_vals, ray_index)
    return pos, t_vals, ray_index, offsets, counts


def composite(sigma, color, dt, early_term: float = 1e-4):
    """Composite one ray's samples; returns (color, mask, cache).

    Discrete quadrature of the emission-absorption transport: per sample,
    alpha = 1 - exp(-sigma * dt) and weight = transmittance * alpha.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    color = np.asarray(color, dtype=np.float64)
    dt = np.asarray(dt, dtype=np.float64)
    if sigma.ndim != 1 or color.shape != (sigma.shape[0], 3) or dt.shape != sigma.shape:
        raise ShapeError("composite expects sigma (n,), color (n, 3), dt (n,)")
    if np.any(dt <= 0):
        raise ShapeError("dt must be positive")
    if not (np.all(np.isfinite(sigma)) and np.all(np.isfinite(color))):
        bad = int(np.flatnonzero(~(np.isfinite(sigma) & np.isfinite(color).all(axis=1)))[0])
        raise NumericError(f"non-finite sample at index {bad}")
    n = sigma.shape[0]
    offsets = np.zeros(1, dtype=np.int64)
    counts = np.array([n], dtype=np.int64)
    out_color = np.zeros((1, 3), dtype=np.float64)
    out_mask = np.zeros(1, dtype=np.float64)
    trans = np.zeros(n, dtype=np.float64)
    alpha = np.zeros(n, dtype=np.float64)
    n_contrib = np.zeros(1, dtype=np.int64)
    _kernels.composite_forward(
        sigma, color, dt, offsets, counts, early_term,
        out_color, out_mask, trans, alpha, n_contrib,
    )
    cache = {
        "sigma": sigma, "color": color, "dt": dt, "offsets": offsets,
        "n_contrib": n_contrib, "trans": trans, "alpha": alpha,
    }
    return out_color[0], float(out_mask[0]), cache


def composite_grad(cache, dL_dcolor, dL_dmask):
    """Per-sample (d_sigma, d_color) for a single composited ray."""
    n = cache["sigma"].shape[0]
    d_sigma = np.zeros(n, dtype=np.float64)
    d_color = np.zeros((n, 3), dtype=np.float64)
    _kernels.composite_backward(
        np.asarray(dL_dcolor, dtype=np.float64)[None, :],
        np.asarray([dL_dmask], dtype=np.float64),
        cache["sigma"], cache["color"], cache["dt"], cache["offsets"],
        cache["n_contrib"], cache["trans"], cache["alpha"], d_sigma, d_color,
    )
    return d_sigma, d_color


class FieldEvaluator:
    """Radiance evaluation against one blended table.

    Bundles the table, decoder parameters, and (for the concat baseline)
    the coefficient embedding row shared by all samples of a frame.
    """

    def __init__(self, table: BlendedTable, params: fieldnet.FieldNetParams,
                 emb_row: np.ndarray | None = None):
        self.table = table
        self.params = params
        self.emb_row = emb_row
        self.config: BankConfig = table.config

    def _features(self, upos: np.ndarray) -> np.ndarray:
        cfg = self.config
        feats = np.empty((upos.shape[0], cfg.feat_total), dtype=upos.dtype)
        _kernels.encode_points(
            upos, self.table.entries, cfg.level_resolutions(),
            cfg.dense_levels(), cfg.table_size, cfg.feat_dim, feats,
        )
        if self.emb_row is None:
            return feats
        emb = np.broadcast_to(
            self.emb_row.astype(upos.dtype), (upos.shape[0], self.emb_row.shape[0])
        )
        return np.concatenate([feats, emb], axis=1)

    def density(self, upos: np.ndarray) -> np.ndarray:
        feats = self._features(upos)
        return fieldnet.forward_sigma(feats, self.params)

    def radiance(self, upos, sh_rows, want_cache=False, check=False):
        feats = self._features(upos)
        sigma, color, cache = fieldnet.forward(
            feats, sh_rows, self.params, want_cache=want_cache, check=check
        )
        return sigma, color, feats, cache


@dataclass
class RayRenderResult:
    """Per-ray composited outputs plus everything backward needs."""

    color: np.ndarray          # raw composited color, (R, 3)
    mask: np.ndarray           # accumulated weight, (R,)
    final_color: np.ndarray    # color over background, (R, 3)
    cache: dict | None = None


def render_rays(
    evaluator: FieldEvaluator,
    origins, dirs, t_near, t_far,
    grid: OccupancyGrid,
    options: RenderOptions,
    background=None,
    ray_uid=None,
    want_cache: bool = False,
) -> RayRenderResult:
    """Render a batch of rays sharing one expression (one blended table).

    background: (R, 3) per-ray colors composited behind the field, or None
    to return raw colors only.
    """
    dtype = evaluator.table.entries.dtype
    n_rays = origins.shape[0]
    origins = np.ascontiguousarray(origins, dtype=dtype)
    dirs = np.ascontiguousarray(dirs, dtype=dtype)
    t_near = np.ascontiguousarray(t_near, dtype=dtype)
    t_far = np.ascontiguousarray(t_far, dtype=dtype)
    pos, t_vals, ray_index, offsets, counts = march(
        origins, dirs, t_near, t_far, grid, options, ray_uid
    )
    m = pos.shape[0]
    box = evaluator.config.box
    span = (box[1] - box[0]).astype(dtype)
    bmin = box[0].astype(dtype)
    upos_all = (pos - bmin) / span
    np.clip(upos_all, 0.0, 1.0, out=upos_all)
    dirs_d = np.ascontiguousarray(dirs, dtype=dtype)
    sh_rays = fieldnet.sh_encode_batch(dirs_d)

    sigma_all = np.empty(m, dtype=dtype)
    color_all = np.empty((m, 3), dtype=dtype)
    trans = np.empty(m, dtype=dtype)
    alpha = np.empty(m, dtype=dtype)
    acc_color = np.zeros((n_rays, 3), dtype=dtype)
    acc_mask = np.zeros(n_rays, dtype=dtype)
    n_contrib = np.zeros(n_rays, dtype=np.int64)
    cursors = np.zeros(n_rays, dtype=np.int64)
    t_run = np.ones(n_rays, dtype=dtype)
    alive = np.flatnonzero(counts > 0).astype(np.int64)
    alive_out = np.empty(n_rays, dtype=np.int64)
    idx_buf = np.empty(n_rays * options.block, dtype=np.int64)
    eval_chunks = []
    net_caches = [] if want_cache else None
    step = dtype.type(options.step)
    early = dtype.type(options.early_term)

    while alive.shape[0] > 0:
        n_idx = _kernels.build_block_index(
            alive, alive.shape[0], cursors, counts, offsets, options.block, idx_buf
        )
        idx = idx_buf[:n_idx].copy()
        sigma_b, color_b, feats_b, cache_b = evaluator.radiance(
            np.ascontiguousarray(upos_all[idx]),
            np.ascontiguousarray(sh_rays[ray_index[idx]]),
            want_cache=want_cache,
            check=options.check,
        )
        sigma_all[idx] = sigma_b
        color_all[idx] = color_b
        if want_cache:
            eval_chunks.append(idx)
            net_caches.append(cache_b)
        n_alive = _kernels.composite_block(
            alive, alive.shape[0], cursors, counts, offsets, options.block,
            sigma_b, color_b, step, early,
            t_run, acc_color, acc_mask, trans, alpha, n_contrib, alive_out,
        )
        alive, alive_out = alive_out[:n_alive].copy(), alive

    if background is not None:
        bg = np.asarray(background, dtype=dtype)
        final = acc_color + (1.0 - acc_mask[:, None]) * bg
    else:
        bg = None
        final = acc_color
    cache = None
    if want_cache:
        cache = {
            "pos": pos, "upos": upos_all, "t": t_vals, "ray_index": ray_index,
            "offsets": offsets, "counts": counts, "n_contrib": n_contrib,
            "sigma": sigma_all, "color": color_all, "trans": trans,
            "alpha": alpha, "eval_chunks": eval_chunks, "net_caches": net_caches,
            "background": bg, "step": step, "evaluator": evaluator,
            "sh_rays": sh_rays,
        }
    return RayRenderResult(color=acc_color, mask=acc_mask, final_color=final, cache=cache)


def render_rays_fast(
    evaluator: FieldEvaluator,
    origins, dirs, t_near, t_far,
    grid: OccupancyGrid,
    options: RenderOptions,
    background=None,
    ray_uid=None,
) -> RayRenderResult:
    """Inference-only renderer: marching is resumed block by block, so rays
    stop marching as soon as their transmittance saturates. Sample set and
    compositing rule are identical to render_rays; no backward cache.
    """
    dtype = evaluator.table.entries.dtype
    n_rays = origins.shape[0]
    origins = np.ascontiguousarray(origins, dtype=dtype)
    dirs = np.ascontiguousarray(dirs, dtype=dtype)
    t_near = np.ascontiguousarray(t_near, dtype=dtype)
    t_far = np.ascontiguousarray(t_far, dtype=dtype)
    if ray_uid is None:
        ray_uid = np.arange(n_rays, dtype=np.int64)
    else:
        ray_uid = np.ascontiguousarray(ray_uid, dtype=np.int64)
    box = evaluator.config.box
    bmin = np.ascontiguousarray(box[0], dtype=dtype)
    bmax = np.ascontiguousarray(box[1], dtype=dtype)
    span = (box[1] - box[0]).astype(dtype)
    sh_rays = fieldnet.sh_encode_batch(dirs)

    k_state = np.zeros(n_rays, dtype=np.int64)
    emitted = np.zeros(n_rays, dtype=np.int64)
    done = np.zeros(n_rays, dtype=np.uint8)
    t_run = np.ones(n_rays, dtype=dtype)
    acc_color = np.zeros((n_rays, 3), dtype=dtype)
    acc_mask = np.zeros(n_rays, dtype=dtype)
    alive = np.flatnonzero(t_near < t_far).astype(np.int64)
    alive_out = np.empty(n_rays, dtype=np.int64)
    block = options.block
    cap = n_rays * block
    pos_buf = np.empty((cap, 3), dtype=dtype)
    t_buf = np.empty(cap, dtype=dtype)
    take = np.empty(n_rays, dtype=np.int64)
    step = dtype.type(options.step)
    early = dtype.type(options.early_term)

    while alive.shape[0] > 0:
        n = _kernels.march_block(
            alive, alive.shape[0], k_state, emitted, done,
            origins, dirs, t_near, t_far, ray_uid,
            grid.bits, grid.coarse_bits, grid.coarse_factor,
            bmin, bmax, grid.resolution,
            step, options.max_samples, options.jitter,
            np.uint64(options.seed), block,
            pos_buf, t_buf, take,
        )
        if n == 0:
            break
        upos = (pos_buf[:n] - bmin) / span
        np.clip(upos, 0.0, 1.0, out=upos)
        ray_of_sample = np.repeat(alive, take[: alive.shape[0]])
        sigma_b, color_b, _, _ = evaluator.radiance(
            np.ascontiguousarray(upos),
            np.ascontiguousarray(sh_rays[ray_of_sample]),
            check=options.check,
        )
        n_alive = _kernels.composite_block_lazy(
            alive, alive.shape[0], take, done, sigma_b, color_b,
            step, early, t_run, acc_color, acc_mask, alive_out,
        )
        alive, alive_out = alive_out[:n_alive].copy(), alive

    if background is not None:
        bg = np.asarray(background, dtype=dtype)
        final = acc_color + (1.0 - acc_mask[:, None]) * bg
    else:
        final = acc_color
    return RayRenderResult(color=acc_color, mask=acc_mask, final_color=final)


def render_rays_fused(
    evaluator: FieldEvaluator,
    origins, dirs, t_near, t_far,
    grid: OccupancyGrid,
    options: RenderOptions,
    background=None,
    ray_uid=None,
) -> RayRenderResult:
    """Single-kernel inference renderer.

    Marches, encodes, decodes, and composites each ray in one numba pass
    with per-sample early termination. Matches render_rays up to float
    accumulation order; used for interactive rendering.
    """
    dtype = evaluator.table.entries.dtype
    params = evaluator.params
    cfg = evaluator.config
    n_rays = origins.shape[0]
    origins = np.ascontiguousarray(origins, dtype=dtype)
    dirs = np.ascontiguousarray(dirs, dtype=dtype)
    t_near = np.ascontiguousarray(t_near, dtype=dtype)
    t_far = np.ascontiguousarray(t_far, dtype=dtype)
    if ray_uid is None:
        ray_uid = np.arange(n_rays, dtype=np.int64)
    else:
        ray_uid = np.ascontiguousarray(ray_uid, dtype=np.int64)
    box = cfg.box
    bmin = np.ascontiguousarray(box[0], dtype=dtype)
    bmax = np.ascontiguousarray(box[1], dtype=dtype)
    sh_rays = np.ascontiguousarray(fieldnet.sh_encode_batch(dirs))
    emb_row = (
        np.empty(0, dtype=dtype)
        if evaluator.emb_row is None
        else np.ascontiguousarray(evaluator.emb_row, dtype=dtype)
    )
    w0t = np.ascontiguousarray(params.trunk_w[0].T)
    b0 = params.trunk_b[0]
    width = params.config.width
    n_rest = params.config.n_hidden - 1
    wht = np.empty((n_rest, width, width), dtype=dtype)
    bh = np.empty((n_rest, width), dtype=dtype)
    for i in range(n_rest):
        wht[i] = params.trunk_w[i + 1].T
        bh[i] = params.trunk_b[i + 1]
    swt = np.ascontiguousarray(params.sigma_w[:, 0])
    cwt = np.ascontiguousarray(params.color_w.T)
    out_color = np.empty((n_rays, 3), dtype=dtype)
    out_mask = np.empty(n_rays, dtype=dtype)
    _kernels.render_fused(
        origins, dirs, t_near, t_far, ray_uid,
        grid.bits, grid.coarse_bits, grid.coarse_factor, grid.resolution,
        bmin, bmax,
        dtype.type(options.step), options.max_samples, options.jitter,
        np.uint64(options.seed), dtype.type(options.early_term),
        evaluator.table.entries,
        cfg.level_resolutions(), cfg.dense_levels(),
        cfg.table_size, cfg.feat_dim,
        emb_row, w0t, b0, wht, bh, swt, params.sigma_b, cwt, params.color_b,
        sh_rays, out_color, out_mask,
    )
    if background is not None:
        bg = np.asarray(background, dtype=dtype)
        final = out_color + (1.0 - out_mask[:, None]) * bg
    else:
        final = out_color
    return RayRenderResult(color=out_color, mask=out_mask, final_color=final)


def render_backward(result: RayRenderResult, dL_dfinal, dL_dmask):
    """Reverse the full render chain for one ray batch.

    Returns (grad_table, net_grads, demb_sum):
      grad_table: dense dL/d(blended table entries), same shape as the table;
      net_grads: FieldNetParams-shaped gradients;
      demb_sum: summed gradient for the shared embedding row (concat mode)
      or None.
    Gradients for rays follow from dL/dfinal (color over background) and
    dL/dmask (raw accumulated weight).
    """
    cache = result.cache
    if cache is None:
        raise StateError("render_rays must be called with want_cache=True")
    evaluator: FieldEvaluator = cache["evaluator"]
    dtype = cache["sigma"].dtype
    dL_dfinal = np.asarray(dL_dfinal, dtype=dtype)
    dL_dmask = np.asarray(dL_dmask, dtype=dtype).copy()
    if cache["background"] is not None:
        # final = color + (1 - mask) * bg
        dL_dmask -= np.einsum("rc,rc->r", dL_dfinal, cache["background"])
    m = cache["sigma"].shape[0]
    d_sigma = np.zeros(m, dtype=dtype)
    d_color = np.zeros((m, 3), dtype=dtype)
    dt = np.full(m, cache["step"], dtype=dtype)
    _kernels.composite_backward(
        dL_dfinal, dL_dmask, cache["sigma"], cache["color"], dt,
        cache["offsets"], cache["n_contrib"], cache["trans"], cache["alpha"],
        d_sigma, d_color,
    )
    cfg = evaluator.config
    grad_table = np.zeros_like(evaluator.table.entries)
    net_grads = evaluator.params.zeros_like()
    demb_sum = None
    if evaluator.emb_row is not None:
        demb_sum = np.zeros(evaluator.emb_row.shape[0], dtype=dtype)
    for idx, ncache in zip(cache["eval_chunks"], cache["net_caches"]):
        dfeat, grads = fieldnet.backward(
            ncache, evaluator.params, d_sigma[idx], d_color[idx]
        )
        for acc, g in zip(net_grads.flat(), grads.flat()):
            acc += g
        if demb_sum is not None:
            table_feat = cfg.feat_total
            demb_sum += dfeat[:, table_feat:].sum(axis=0)
            dfeat = dfeat[:, :table_feat]
        _kernels.encode_scatter(
            np.ascontiguousarray(cache["upos"][idx]),
            np.ascontiguousarray(dfeat),
            grad_table,
            cfg.level_resolutions(), cfg.dense_levels(),
            cfg.table_size, cfg.feat_dim,
        )
    return grad_table, net_grads, demb_sum
