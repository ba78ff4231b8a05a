"""Three-stage training: losses, sampling, and the optimization loop.

Stage 1 supervises color and mask (mask first stabilizes the density
distribution), stage 2 is photometric only, stage 3 mixes random rays with
patch sampling and the structural patch term. Expression coefficients are
frozen throughout; only tables and decoder weights learn.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import net as fieldnet
from .camera import generate_rays
from .data import Dataset
from .errors import ConfigError, NumericError
from .hashgrid import BankConfig
from .losses import StructuralPatchLoss, loss_color, loss_mask
from .model import AvatarModel, new_model
from .occupancy import coeff_envelope, update_grid
from .render import RenderOptions, default_step, render_backward, render_rays


@dataclass(frozen=True)
class StageSpec:
    """Loss weights and sampling mode for one epoch."""

    lambda_color: float
    lambda_mask: float
    lambda_patch: float
    sampling: str  # "rays" | "mixed"
    lambda_color_patch: float = 0.0


def schedule_stage(epoch: int, stage1_epochs: int = 2, stage2_epochs: int = 5) -> StageSpec:
    """Stage for an epoch: (1,1,0) rays, then (1,0,0) rays, then mixed."""
    if epoch < 0:
        raise ConfigError("epoch must be >= 0")
    if epoch < stage1_epochs:
        return StageSpec(1.0, 1.0, 0.0, "rays")
    if epoch < stage1_epochs + stage2_epochs:
        return StageSpec(1.0, 0.0, 0.0, "rays")
    return StageSpec(1.0, 0.0, 0.1, "mixed", lambda_color_patch=0.1)


def stage_index(epoch: int, stage1_epochs: int = 2, stage2_epochs: int = 5) -> int:
    if epoch < stage1_epochs:
        return 1
    if epoch < stage1_epochs + stage2_epochs:
        return 2
    return 3


@dataclass(frozen=True)
class PatchSpec:
    """One sampled patch: frame, top-left pixel, side, and region tag."""

    frame_index: int
    top: int
    left: int
    size: int
    tag: str  # "mouth-roi" | "global"


def sample_patches(height: int, width: int, roi, count: int, size: int,
                   rng: np.random.Generator, frame_index: int = 0) -> list:
    """Sample patch positions: half inside the roi when present.

    Each patch independently lands with probability 1/2 centered uniformly
    in the roi (clamped so the patch stays inside the image) and otherwise
    uniformly over the image. Without a roi all patches are global.
    """
    if size > height or size > width:
        raise ConfigError(f"patch size {size} exceeds image {height}x{width}")
    specs = []
    for _ in range(count):
        use_roi = roi is not None and rng.random() < 0.5
        if use_roi:
            r0, c0, r1, c1 = roi
            cr = rng.integers(r0, max(r1, r0 + 1))
            cc = rng.integers(c0, max(c1, c0 + 1))
            top = int(np.clip(cr - size // 2, 0, height - size))
            left = int(np.clip(cc - size // 2, 0, width - size))
            tag = "mouth-roi"
        else:
            top = int(rng.integers(0, height - size + 1))
            left = int(rng.integers(0, width - size + 1))
            tag = "global"
        specs.append(PatchSpec(frame_index, top, left, size, tag))
    return specs


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run needs; all values land in the manifest."""

    mode: str = "blend"
    # bank geometry
    levels: int = 16
    table_size: int = 2**14
    feat_dim: int = 4
    coarsest_res: int = 16
    finest_res: int = 1024
    # decoder
    width: int = 64
    n_hidden: int = 3
    sigma_bias: float = -3.0
    # optimization
    lr_tables: float = 1e-2
    lr_net: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    adam_eps_tables: float = 1e-15
    adam_eps_net: float = 1e-8
    weight_decay_net: float = 1e-6
    batch_frames: int = 4
    rays_per_frame: int = 4096
    patch_size: int = 32
    steps_per_epoch: int = 2048
    stage1_epochs: int = 2
    stage2_epochs: int = 5
    # sampling geometry
    step_divisor: int = 1024
    max_samples: int = 1024
    early_term: float = 1e-4
    # training-time background behind rays: "gt" composites the ground-truth
    # pixel (no penalty for unexplained background), "solid" composites the
    # dataset background color (keeps object opacity honest without a mask
    # term; on synthetic captures both agree for true background rays)
    train_background: str = "gt"
    # optional exponential learning-rate decay to lr * lr_decay_factor at
    # lr_decay_steps, flat afterwards; 0 steps disables
    lr_decay_steps: int = 0
    lr_decay_factor: float = 0.1
    # occupancy
    grid_resolution: int = 128
    grid_update_interval: int = 16
    grid_warmup_steps: int = 256
    grid_slabs: int = 16
    grid_ema: float = 0.95
    grid_margin: int = 2
    tau: float | None = None
    seed: int = 0
    log_every: int = 50

    def __post_init__(self):
        if self.batch_frames < 1 or self.patch_size < 1:
            raise ConfigError("batch_frames and patch_size must be >= 1")
        if self.stage1_epochs < 0 or self.stage2_epochs < 0:
            raise ConfigError("stage epoch counts must be >= 0")

    def manifest(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


class Adam:
    """Adaptive-moment optimizer over a list of arrays."""

    def __init__(self, arrays, lr, beta1, beta2, eps, weight_decay=0.0,
                 decay_mask=None):
        self.arrays = arrays
        self.lr = lr
        self.b1 = beta1
        self.b2 = beta2
        self.eps = eps
        self.wd = weight_decay
        self.decay_mask = decay_mask or [w.ndim > 1 for w in arrays]
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1t = 1.0 - self.b1**self.t
        b2t = 1.0 - self.b2**self.t
        for a, g, m, v, decay in zip(
            self.arrays, grads, self.m, self.v, self.decay_mask
        ):
            if self.wd and decay:
                g = g + a.dtype.type(self.wd) * a
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            mh = m / b1t
            vh = v / b2t
            a -= self.lr * mh / (np.sqrt(vh) + self.eps)


@dataclass
class StepMetrics:
    step: int
    stage: int
    loss_color: float
    loss_mask: float
    loss_patch: float
    loss_total: float
    rays: int
    seconds: float


class Trainer:
    """Owns the model, optimizer state, dataset, and the metrics log."""

    def __init__(self, dataset: Dataset, config: TrainConfig,
                 model: AvatarModel | None = None, start_step: int = 0):
        self.dataset = dataset
        self.config = config
        box = dataset.bounding_box
        if model is None:
            bank_cfg = BankConfig(
                levels=config.levels, table_size=config.table_size,
                feat_dim=config.feat_dim, coarsest_res=config.coarsest_res,
                finest_res=config.finest_res, num_bases=dataset.k,
                bounding_box=(tuple(box[0]), tuple(box[1])),
            )
            model = new_model(
                config.mode, bank_cfg, seed=config.seed, width=config.width,
                n_hidden=config.n_hidden, sigma_bias=config.sigma_bias,
                grid_resolution=config.grid_resolution, tau=config.tau,
            )
            model.grid.ema_decay = config.grid_ema
        self.model = model
        self.model.render_step = default_step(box, config.step_divisor)
        self.model.train_width = dataset.width
        self.model.train_height = dataset.height
        if self.model.default_camera is None and dataset.frames:
            self.model.default_camera = dataset.frames[0].camera
        train_coeffs = dataset.coeff_rows(dataset.train_indices)
        self.envelope = coeff_envelope(train_coeffs)
        self.model.coeff_min = train_coeffs.min(axis=0)
        self.model.coeff_max = train_coeffs.max(axis=0)
        self.step_count = start_step
        self.rng = np.random.default_rng((config.seed, start_step, 0xB11D))
        self.patch_loss = StructuralPatchLoss()
        self._init_optimizers()
        self.metrics_rows: list[StepMetrics] = []
        self._grid_was_full = False

    def _init_optimizers(self):
        cfg = self.config
        self.opt_tables = Adam(
            self.model.table_arrays(), cfg.lr_tables, cfg.adam_beta1,
            cfg.adam_beta2, cfg.adam_eps_tables,
            decay_mask=[False] * len(self.model.table_arrays()),
        )
        net_arrays = self.model.net_params.flat()
        if self.model.embed_params is not None:
            net_arrays = net_arrays + self.model.embed_params.flat()
        self.opt_net = Adam(
            net_arrays, cfg.lr_net, cfg.adam_beta1, cfg.adam_beta2,
            cfg.adam_eps_net, weight_decay=cfg.weight_decay_net,
        )

    # -- sampling -------------------------------------------------------------

    def _epoch(self) -> int:
        return self.step_count // self.config.steps_per_epoch

    def stage_spec(self) -> StageSpec:
        return schedule_stage(
            self._epoch(), self.config.stage1_epochs, self.config.stage2_epochs
        )

    def _pick_frames(self) -> list:
        idx = self.dataset.train_indices
        chosen = self.rng.choice(
            len(idx), size=self.config.batch_frames,
            replace=len(idx) < self.config.batch_frames,
        )
        return [idx[int(i)] for i in chosen]

    def _render_options(self) -> RenderOptions:
        cfg = self.config
        return RenderOptions(
            step=self.model.render_step, max_samples=cfg.max_samples,
            early_term=cfg.early_term, jitter=True,
            seed=cfg.seed, block=16, check=False,
        )

    # -- the optimizer step ---------------------------------------------------

    def train_step(self) -> StepMetrics:
        t0 = time.perf_counter()
        cfg = self.config
        spec = self.stage_spec()
        self._reset_gradients()
        self._maybe_update_grid()
        frame_ids = self._pick_frames()
        h, w_img = self.dataset.height, self.dataset.width
        options = self._render_options()

        per_frame = []
        uid_base = np.int64(self.step_count) << np.int64(24)
        for slot, fi in enumerate(frame_ids):
            fr = self.dataset.frames[fi]
            n_random = cfg.rays_per_frame
            patches = []
            if spec.sampling == "mixed":
                n_random = cfg.patch_size**2
                patches = sample_patches(
                    h, w_img, fr.roi, 1, cfg.patch_size, self.rng, fi
                )
            rows = self.rng.integers(0, h, n_random)
            cols = self.rng.integers(0, w_img, n_random)
            pixels = np.stack([rows, cols], axis=1)
            n_ray_pixels = pixels.shape[0]
            for p in patches:
                pr, pc = np.mgrid[p.top : p.top + p.size, p.left : p.left + p.size]
                pixels = np.concatenate(
                    [pixels, np.stack([pr.ravel(), pc.ravel()], axis=1)]
                )
            origins, dirs, t_near, t_far, _ = generate_rays(
                fr.camera, pixels, self.model.box
            )
            uids = uid_base + np.int64(slot << 20) + np.arange(
                pixels.shape[0], dtype=np.int64
            )
            gt_rgb = fr.image[pixels[:, 0], pixels[:, 1]]
            gt_mask = fr.mask[pixels[:, 0], pixels[:, 1]]
            if cfg.train_background == "solid":
                bg = np.broadcast_to(
                    self.dataset.background, gt_rgb.shape
                ).astype(np.float32)
            else:
                bg = gt_rgb
            evaluator = self.model.evaluator_for(fr.coeffs)
            result = render_rays(
                evaluator, origins, dirs, t_near, t_far, self.model.grid,
                options, background=bg, ray_uid=uids, want_cache=True,
            )
            per_frame.append({
                "frame": fr, "coeffs": fr.coeffs, "result": result,
                "gt_rgb": gt_rgb, "gt_mask": gt_mask,
                "n_ray_pixels": n_ray_pixels, "patches": patches,
                "evaluator": evaluator,
            })

        # Losses over the concatenated ray set (means, per Design note).
        ray_pred = np.concatenate(
            [f["result"].final_color[: f["n_ray_pixels"]] for f in per_frame]
        )
        ray_gt = np.concatenate([f["gt_rgb"][: f["n_ray_pixels"]] for f in per_frame])
        mask_pred = np.concatenate(
            [f["result"].mask[: f["n_ray_pixels"]] for f in per_frame]
        )
        mask_gt = np.concatenate([f["gt_mask"][: f["n_ray_pixels"]] for f in per_frame])
        lc, dlc = loss_color(ray_pred, ray_gt)
        lm, dlm = loss_mask(mask_pred, mask_gt)

        patch_values = []
        patch_color_values = []
        patch_grads = []  # aligned with per_frame
        n_patches = sum(len(f["patches"]) for f in per_frame)
        for f in per_frame:
            grads_here = []
            for j, p in enumerate(f["patches"]):
                s = f["n_ray_pixels"] + j * p.size**2
                pred_patch = f["result"].final_color[s : s + p.size**2].reshape(
                    p.size, p.size, 3
                )
                gt_patch = f["gt_rgb"][s : s + p.size**2].reshape(p.size, p.size, 3)
                value, cache = self.patch_loss.forward(pred_patch, gt_patch)
                patch_values.append(value)
                pcv, pcg = loss_color(pred_patch, gt_patch)
                patch_color_values.append(pcv)
                grads_here.append((s, p, cache, pcg))
            patch_grads.append(grads_here)
        lp = float(np.mean(patch_values)) if patch_values else 0.0
        lpc = float(np.mean(patch_color_values)) if patch_color_values else 0.0
        total = (
            spec.lambda_color * lc
            + spec.lambda_mask * lm
            + spec.lambda_patch * lp
            + spec.lambda_color_patch * lpc
        )
        if not np.isfinite(total):
            self._dump_nan_diagnostic(per_frame)
            raise NumericError(f"non-finite loss at step {self.step_count}")

        # Per-ray gradients, sliced back per frame.
        offset = 0
        for f, grads_here in zip(per_frame, patch_grads):
            n_rp = f["n_ray_pixels"]
            n_all = f["result"].final_color.shape[0]
            dfinal = np.zeros((n_all, 3), dtype=np.float32)
            dmask = np.zeros(n_all, dtype=np.float32)
            dfinal[:n_rp] = spec.lambda_color * dlc[offset : offset + n_rp]
            dmask[:n_rp] = spec.lambda_mask * dlm[offset : offset + n_rp]
            offset += n_rp
            for s, p, cache, pcg in grads_here:
                g_patch = self.patch_loss.backward(cache) / max(n_patches, 1)
                g = (
                    spec.lambda_patch * g_patch
                    + spec.lambda_color_patch * pcg / max(n_patches, 1)
                )
                dfinal[s : s + p.size**2] += g.reshape(-1, 3).astype(np.float32)
            self._accumulate_frame_gradients(f, dfinal, dmask)

        self._apply_gradients()
        dt_s = time.perf_counter() - t0
        n_rays = int(ray_pred.shape[0] + sum(
            len(f["patches"]) * cfg.patch_size**2 for f in per_frame
        ))
        metrics = StepMetrics(
            step=self.step_count,
            stage=stage_index(self._epoch(), cfg.stage1_epochs, cfg.stage2_epochs),
            loss_color=lc, loss_mask=lm, loss_patch=lp, loss_total=total,
            rays=n_rays, seconds=dt_s,
        )
        self.step_count += 1
        return metrics

    def _accumulate_frame_gradients(self, f, dfinal, dmask):
        grad_table, net_grads, demb = render_backward(
            f["result"], dfinal, dmask
        )
        model = self.model
        if model.mode == "blend":
            self._grad_tables[0] += grad_table
            w = f["coeffs"]
            for i in range(model.k):
                wi = np.float32(w[i])
                if wi != 0.0:
                    self._grad_tables[i + 1] += wi * grad_table
        else:
            self._grad_tables[0] += grad_table
            emb_grads = fieldnet.embed_backward(
                f["evaluator"].emb_cache, model.embed_params, demb[None, :]
            )
            for acc, g in zip(self._grad_embed, emb_grads.flat()):
                acc += g
        for acc, g in zip(self._grad_net, net_grads.flat()):
            acc += g

    def _lr_scale(self) -> float:
        cfg = self.config
        if cfg.lr_decay_steps <= 0:
            return 1.0
        frac = min(self.step_count / cfg.lr_decay_steps, 1.0)
        return float(cfg.lr_decay_factor**frac)

    def _apply_gradients(self):
        scale = self._lr_scale()
        self.opt_tables.lr = self.config.lr_tables * scale
        self.opt_net.lr = self.config.lr_net * scale
        self.opt_tables.step(self._grad_tables)
        grads = self._grad_net
        if self.model.embed_params is not None:
            grads = grads + self._grad_embed
        self.opt_net.step(grads)

    def _reset_gradients(self):
        self._grad_tables = [np.zeros_like(a) for a in self.model.table_arrays()]
        self._grad_net = [np.zeros_like(a) for a in self.model.net_params.flat()]
        self._grad_embed = (
            [np.zeros_like(a) for a in self.model.embed_params.flat()]
            if self.model.embed_params is not None
            else None
        )

    def _maybe_update_grid(self):
        cfg = self.config
        step = self.step_count
        grid = self.model.grid
        if step < cfg.grid_warmup_steps:
            return
        if grid.warm_up:
            grid.end_warm_up()
            update_grid(
                grid, self.model.density_fn, self.envelope,
                seed=cfg.seed, n_slabs=1, full=True, rebuild=True,
                margin=cfg.grid_margin,
            )
            return
        if cfg.grid_update_interval > 0 and step % cfg.grid_update_interval == 0:
            update_grid(
                grid, self.model.density_fn, self.envelope,
                seed=cfg.seed, n_slabs=cfg.grid_slabs,
                margin=cfg.grid_margin,
            )

    def _dump_nan_diagnostic(self, per_frame):
        import sys

        for f in per_frame:
            bad = ~np.isfinite(f["result"].final_color).all(axis=1)
            if bad.any():
                r = int(np.flatnonzero(bad)[0])
                print(
                    f"[blendfield] non-finite ray: frame coeffs={f['coeffs']}, "
                    f"ray {r}, mask={f['result'].mask[r]}",
                    file=sys.stderr,
                )

    # -- the outer loop -------------------------------------------------------

    def run(self, max_steps=None, time_budget=None, csv_path=None,
            probe_fn=None, on_log=None):
        """Train until max_steps or time_budget; returns metrics rows.

        probe_fn(model) -> float is called at log points for the held-out
        PSNR column. CSV rows: deterministic columns first, wall-clock last.
        """
        cfg = self.config
        t_start = time.perf_counter()
        csv_file = None
        if csv_path is not None:
            csv_file = open(csv_path, "w", encoding="utf-8")
            csv_file.write(
                "step,stage,loss_color,loss_mask,loss_patch,loss_total,"
                "psnr_probe,wall_clock\n"
            )
        try:
            while True:
                if max_steps is not None and self.step_count >= max_steps:
                    break
                if (
                    time_budget is not None
                    and time.perf_counter() - t_start > time_budget
                ):
                    break
                m = self.train_step()
                self.metrics_rows.append(m)
                if m.step % cfg.log_every == 0:
                    psnr_val = probe_fn(self.model) if probe_fn else float("nan")
                    wall = time.perf_counter() - t_start
                    if csv_file:
                        csv_file.write(
                            f"{m.step},{m.stage},{m.loss_color!r},"
                            f"{m.loss_mask!r},{m.loss_patch!r},"
                            f"{m.loss_total!r},{psnr_val!r},{wall:.3f}\n"
                        )
                        csv_file.flush()
                    if on_log:
                        on_log(m, psnr_val)
        finally:
            if csv_file:
                csv_file.close()
        return self.metrics_rows
