"""Acceptance suite: one test per criterion, one pass/fail line each.

Heavy criteria train on the shared synthetic scene (K=4, 200 train / 40
test frames, 64x64). Budgets and the interactive-render threshold can be
tuned per machine class through environment variables:

    BLENDFIELD_ACCEPT_FIT_SECONDS    wall-clock for the synthetic fit (420)
    BLENDFIELD_ACCEPT_TREND_SECONDS  per-arm budget for blend vs concat (300)
    BLENDFIELD_INTERACTIVE_MS        interactive render threshold (100)
"""

import os
import time

import numpy as np
import pytest

from blendfield import (
    BankConfig,
    BlendedTable,
    Camera,
    RenderOptions,
    TrainConfig,
    Trainer,
    blend,
    composite,
    encode_points,
    generate_rays,
    load_checkpoint,
    new_bank,
    orbit_pose,
    save_checkpoint,
    synth_scene,
)
from blendfield.camera import all_pixels
from blendfield.model import new_model
from blendfield.metrics import psnr
from blendfield.render import render_backward, render_rays

FIT_SECONDS = float(os.environ.get("BLENDFIELD_ACCEPT_FIT_SECONDS", "420"))
TREND_SECONDS = float(os.environ.get("BLENDFIELD_ACCEPT_TREND_SECONDS", "300"))
INTERACTIVE_MS = float(os.environ.get("BLENDFIELD_INTERACTIVE_MS", "100"))

BOX = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))


def report(name, ok, detail):
    print(f"\n[ACCEPT] {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------------------
# shared synthetic scene and training runs
# ---------------------------------------------------------------------------

ACCEPT_TRAIN = dict(
    levels=5, table_size=2**14, feat_dim=4, coarsest_res=16, finest_res=128,
    width=32, n_hidden=2, sigma_bias=-6.0,
    lr_tables=1e-2, lr_net=1e-3,
    batch_frames=4, rays_per_frame=512, patch_size=32,
    steps_per_epoch=300, stage1_epochs=2, stage2_epochs=5,
    step_divisor=96, max_samples=32,
    grid_resolution=128, grid_update_interval=64, grid_warmup_steps=512,
    grid_slabs=8, tau=0.02, seed=4, log_every=50,
    train_background="solid", lr_decay_steps=4000, lr_decay_factor=0.1,
)


@pytest.fixture(scope="session")
def scene_and_dataset():
    return synth_scene(k=4, seed=77, resolution=64, n_train=200, n_test=40)


def _train(dataset, mode, budget, seed=4):
    cfg = TrainConfig(mode=mode, **{**ACCEPT_TRAIN, "seed": seed})
    trainer = Trainer(dataset, cfg)
    trainer.run(time_budget=budget)
    return trainer


@pytest.fixture(scope="session")
def fitted(scene_and_dataset, tmp_path_factory):
    dataset, _ = scene_and_dataset
    t0 = time.perf_counter()
    trainer = _train(dataset, "blend", FIT_SECONDS)
    wall = time.perf_counter() - t0
    path = tmp_path_factory.mktemp("accept") / "blend.bfld"
    save_checkpoint(path, trainer.model)
    return trainer, wall, path


def _test_psnrs(model, dataset, indices):
    vals = []
    for idx in indices:
        fr = dataset.frames[idx]
        rgb, _ = model.render_image(
            fr.coeffs, fr.camera, background=dataset.background
        )
        vals.append(psnr(rgb, fr.image))
    return np.array(vals)


# ---------------------------------------------------------------------------
# criterion 1: gradient suite
# ---------------------------------------------------------------------------

def test_gradient_suite():
    t0 = time.perf_counter()
    cfg = BankConfig(
        levels=3, table_size=2**10, feat_dim=2, coarsest_res=4, finest_res=16,
        num_bases=2, bounding_box=BOX, init_low=-0.5, init_high=0.5,
    )
    model = new_model("blend", cfg, seed=5, width=16, n_hidden=2,
                      grid_resolution=8)
    model.bank.h0 = model.bank.h0.astype(np.float64)
    model.bank.bases = [b.astype(np.float64) for b in model.bank.bases]
    model.net_params = model.net_params.astype(np.float64)
    cam = Camera.from_fov(40.0, 4, 4, orbit_pose(30.0, 10.0, 2.4))
    pixels = all_pixels(4, 4)
    origins, dirs, t_near, t_far, _ = generate_rays(cam, pixels, model.box)
    rng = np.random.default_rng(3)
    gcol = rng.standard_normal((16, 3))
    gmask = rng.standard_normal(16)
    bg = rng.uniform(0, 1, (16, 3))
    w = np.array([0.5, 0.8])
    options = RenderOptions(step=0.04, max_samples=300, early_term=0.0)

    def forward(want_cache=False):
        ev = model.evaluator_for(w, dtype=np.float64)
        return render_rays(
            ev, origins, dirs, t_near, t_far, model.grid, options,
            background=bg, want_cache=want_cache,
        )

    def loss():
        res = forward()
        return float(np.sum(res.final_color * gcol) + res.mask @ gmask)

    res = forward(want_cache=True)
    grad_table, net_grads, _ = render_backward(res, gcol, gmask)

    checked = 0
    worst = 0.0
    eps = 1e-6
    touched = np.argwhere(np.abs(grad_table) > 1e-9)
    rng.shuffle(touched)
    # table entries (h0 and one displacement basis share the scatter path)
    for row, col in touched[:12]:
        for arr, scale in ((model.bank.h0, 1.0), (model.bank.bases[1], w[1])):
            orig = arr[row, col]
            arr[row, col] = orig + eps
            up = loss()
            arr[row, col] = orig - eps
            down = loss()
            arr[row, col] = orig
            fd = (up - down) / (2 * eps)
            an = grad_table[row, col] * scale
            if abs(fd) < 1e-7:
                continue
            rel = abs(fd - an) / max(abs(fd), 1e-4)
            worst = max(worst, rel)
            checked += 1
    # decoder weights
    arrays = model.net_params.flat()
    grads = net_grads.flat()
    for ai in range(len(arrays)):
        arr, g = arrays[ai], grads[ai]
        for fi in np.random.default_rng(ai).integers(0, arr.size, 2):
            idx = np.unravel_index(int(fi), arr.shape)
            orig = arr[idx]
            arr[idx] = orig + eps
            up = loss()
            arr[idx] = orig - eps
            down = loss()
            arr[idx] = orig
            fd = (up - down) / (2 * eps)
            if abs(fd) < 1e-7:
                continue
            rel = abs(fd - g[idx]) / max(abs(fd), 1e-4)
            worst = max(worst, rel)
            checked += 1
    wall = time.perf_counter() - t0
    report(
        "gradient suite",
        checked >= 20 and worst < 1e-3 and wall < 60.0,
        f"{checked} parameters, worst rel err {worst:.2e}, {wall:.1f}s",
    )


# ---------------------------------------------------------------------------
# criterion 2: encoding oracle
# ---------------------------------------------------------------------------

def test_encoding_oracle():
    cfg = BankConfig(levels=16, table_size=2**14, feat_dim=4, coarsest_res=16,
                     finest_res=1024, num_bases=1, bounding_box=BOX)
    bank = new_bank(cfg, seed=11)
    rng = np.random.default_rng(0)
    bank.h0 = rng.standard_normal(bank.h0.shape).astype(np.float32)
    table = blend(bank, np.zeros(1))
    table = BlendedTable(
        entries=table.entries.astype(np.float64),
        coefficients=table.coefficients, config=cfg,
    )
    box = cfg.box
    pts = box[0] + rng.random((10_000, 3)) * (box[1] - box[0])
    feats = encode_points(pts, table)
    res = cfg.level_resolutions()
    dense = cfg.dense_levels()
    assert dense.sum() >= 2  # levels 16 and 21 are collision-free
    worst = 0.0
    t, fdim = cfg.table_size, cfg.feat_dim
    for lev in np.flatnonzero(dense):
        n = int(res[lev])
        entries = table.entries[lev * t : (lev + 1) * t]
        u = (pts - box[0]) / (box[1] - box[0]) * n
        i = np.minimum(np.floor(u).astype(np.int64), n - 1)
        f = u - i
        ref = np.zeros((pts.shape[0], fdim))
        for dx in (0, 1):
            wx = f[:, 0] if dx else 1 - f[:, 0]
            for dy in (0, 1):
                wy = f[:, 1] if dy else 1 - f[:, 1]
                for dz in (0, 1):
                    wz = f[:, 2] if dz else 1 - f[:, 2]
                    rows = ((i[:, 0] + dx) * (n + 1) + (i[:, 1] + dy)) * (
                        n + 1
                    ) + (i[:, 2] + dz)
                    ref += (wx * wy * wz)[:, None] * entries[rows]
        diff = np.abs(feats[:, lev * fdim : (lev + 1) * fdim] - ref).max()
        worst = max(worst, float(diff))
    report(
        "encoding oracle",
        worst < 1e-6,
        f"{int(dense.sum())} collision-free levels, max abs diff {worst:.2e}",
    )


# ---------------------------------------------------------------------------
# criterion 3: blend linearity
# ---------------------------------------------------------------------------

def test_blend_linearity():
    cfg = BankConfig(levels=4, table_size=2**12, feat_dim=4, coarsest_res=8,
                     finest_res=64, num_bases=4, bounding_box=BOX)
    bank = new_bank(cfg, seed=21)
    rng = np.random.default_rng(1)
    bank.h0 = rng.standard_normal(bank.h0.shape)
    bank.bases = [rng.standard_normal(bank.h0.shape) for _ in range(4)]
    box = cfg.box
    h0_table = BlendedTable(entries=bank.h0, coefficients=np.zeros(4), config=cfg)
    basis_tables = [
        BlendedTable(entries=b, coefficients=np.zeros(4), config=cfg)
        for b in bank.bases
    ]
    worst = 0.0
    for trial in range(10):
        pts = box[0] + rng.random((100, 3)) * (box[1] - box[0])
        w = rng.uniform(0, 1, (100, 4))
        base = encode_points(pts, h0_table)
        basis_feats = [encode_points(pts, bt) for bt in basis_tables]
        for j in range(0, 100, 10):
            lhs = encode_points(pts[j], blend(bank, w[j]))
            rhs = base[j] + sum(w[j, i] * basis_feats[i][j] for i in range(4))
            worst = max(worst, float(np.abs(lhs - rhs).max()))
    report(
        "blend linearity",
        worst < 1e-6,
        f"1000 (x, w) pairs, max abs diff {worst:.2e}",
    )


# ---------------------------------------------------------------------------
# criterion 4: compositing oracle
# ---------------------------------------------------------------------------

def test_compositing_oracle():
    # closed form: one constant segment
    c, m, _ = composite(np.array([2.0]), np.array([[1.0, 0.0, 0.0]]),
                        np.array([1.0]))
    closed = 1.0 - np.exp(-2.0)
    closed_ok = abs(c[0] - closed) < 1e-6 and abs(m - closed) < 1e-6

    # smooth analytic field vs 64x finer quadrature over 1000 rays
    rng = np.random.default_rng(2)
    worst = 0.0
    step = 2.0 / 1024
    t = np.arange(0.0, 2.0, step)
    t_fine = np.arange(0.0, 2.0, step / 64)
    for _ in range(1000):
        a, b, ph = rng.uniform(0.5, 1.5), rng.uniform(1.0, 3.0), rng.uniform(0, 6)

        def sig(ts):
            return a * (1.1 + np.sin(b * ts + ph))

        def col(ts):
            return np.stack(
                [0.5 + 0.4 * np.sin(ts + ph), 0.5 + 0.3 * np.cos(b * ts),
                 np.full_like(ts, 0.4)], axis=1,
            )

        c1, m1, _ = composite(sig(t), col(t), np.full_like(t, step),
                              early_term=0.0)
        c2, m2, _ = composite(sig(t_fine), col(t_fine),
                              np.full_like(t_fine, step / 64), early_term=0.0)
        worst = max(worst, float(np.abs(c1 - c2).max()), abs(m1 - m2))
    report(
        "compositing oracle",
        closed_ok and worst < 1e-3,
        f"closed form ok={closed_ok}, 1000 rays max channel err {worst:.2e}",
    )


# ---------------------------------------------------------------------------
# criterion 5: occupancy soundness (needs the trained model)
# ---------------------------------------------------------------------------

def test_occupancy_soundness(fitted, scene_and_dataset):
    trainer, _, _ = fitted
    dataset, scene = scene_and_dataset
    model = trainer.model
    grid = model.grid
    res = grid.resolution
    weights = np.zeros(res**3, dtype=np.float64)
    for idx in dataset.train_indices[::2]:
        fr = dataset.frames[idx]
        scene.accumulate_cell_weights(
            fr.coeffs, fr.camera, res, weights,
            step=scene.diagonal / 512.0, pixel_stride=2,
        )
    hot = weights > 1e-3
    missed = int(np.count_nonzero(hot & (grid.bits == 0)))
    # skip-march vs full-march on the trained model
    full = grid.__class__(box=grid.box, resolution=grid.resolution)  # all set
    fr = dataset.frames[dataset.test_indices[0]]
    with_skip, _ = model.render_image(fr.coeffs, fr.camera,
                                      background=dataset.background)
    model_grid = model.grid
    model.grid = full
    no_skip, _ = model.render_image(fr.coeffs, fr.camera,
                                    background=dataset.background)
    model.grid = model_grid
    skip_diff = float(np.abs(with_skip - no_skip).max())
    report(
        "occupancy soundness",
        missed == 0 and skip_diff < 1e-2,
        f"{int(hot.sum())} hot cells, {missed} unoccupied; "
        f"skip vs full march max diff {skip_diff:.2e}",
    )


# ---------------------------------------------------------------------------
# criterion 6: synthetic fit
# ---------------------------------------------------------------------------

def test_synthetic_fit(fitted, scene_and_dataset):
    trainer, wall, _ = fitted
    dataset, _ = scene_and_dataset
    vals = _test_psnrs(trainer.model, dataset, dataset.test_indices)
    bg_masks = []
    for idx in dataset.test_indices:
        fr = dataset.frames[idx]
        _, mask = trainer.model.render_image(
            fr.coeffs, fr.camera, background=dataset.background
        )
        bg_masks.append(float(mask[fr.mask == 0].mean()))
    mean_psnr = float(vals.mean())
    mean_bg = float(np.mean(bg_masks))
    report(
        "synthetic fit",
        mean_psnr >= 30.0 and mean_bg < 0.05 and wall <= 15 * 60,
        f"held-out PSNR {mean_psnr:.2f} dB over 40 frames, "
        f"background mask {mean_bg:.4f}, {wall:.0f}s wall-clock",
    )


# ---------------------------------------------------------------------------
# criterion 7: blend vs concat trend
# ---------------------------------------------------------------------------

def test_blend_vs_concat_trend(scene_and_dataset):
    dataset, _ = scene_and_dataset
    blend_tr = _train(dataset, "blend", TREND_SECONDS)
    concat_tr = _train(dataset, "concat", TREND_SECONDS)
    blend_vals = _test_psnrs(blend_tr.model, dataset, dataset.test_indices)
    concat_vals = _test_psnrs(concat_tr.model, dataset, dataset.test_indices)
    gap = float(blend_vals.mean() - concat_vals.mean())
    norms = [
        np.abs(dataset.frames[i].coeffs).sum() for i in dataset.test_indices
    ]
    order = np.argsort(norms)[::-1]
    top = order[: max(1, len(order) // 10)]
    top_gap = float(blend_vals[top].mean() - concat_vals[top].mean())
    report(
        "blend vs concat trend",
        gap >= 2.0 and top_gap >= 3.0,
        f"identical {TREND_SECONDS:.0f}s budget: blend "
        f"{blend_vals.mean():.2f} dB vs concat {concat_vals.mean():.2f} dB "
        f"(gap {gap:.2f}); top-decile gap {top_gap:.2f} dB "
        f"({blend_tr.step_count} vs {concat_tr.step_count} steps)",
    )


# ---------------------------------------------------------------------------
# criterion 8: determinism and round-trips
# ---------------------------------------------------------------------------

def test_determinism_and_roundtrip(scene_and_dataset, tmp_path):
    dataset, _ = scene_and_dataset
    cfg = TrainConfig(
        mode="blend",
        **{**ACCEPT_TRAIN, "grid_warmup_steps": 20, "grid_update_interval": 10,
           "steps_per_epoch": 20, "rays_per_frame": 128, "log_every": 5},
    )

    def run(tag):
        trainer = Trainer(dataset, cfg)
        csv = tmp_path / f"{tag}.csv"
        trainer.run(max_steps=40, csv_path=str(csv),
                    probe_fn=lambda m: 0.0)
        return trainer, csv.read_text().splitlines()

    tr1, csv1 = run("a")
    tr2, csv2 = run("b")
    # compare all columns except the wall-clock one (the last)
    det = all(
        a.rsplit(",", 1)[0] == b.rsplit(",", 1)[0] for a, b in zip(csv1, csv2)
    ) and len(csv1) == len(csv2)
    # checkpoint save/load/render bit-identity
    path = tmp_path / "rt.bfld"
    save_checkpoint(path, tr1.model)
    loaded, _ = load_checkpoint(path)
    fr = dataset.frames[dataset.test_indices[0]]
    a_rgb, a_mask = tr1.model.render_image(fr.coeffs, fr.camera,
                                           background=dataset.background)
    b_rgb, b_mask = loaded.render_image(fr.coeffs, fr.camera,
                                        background=dataset.background)
    bit_identical = np.array_equal(a_rgb, b_rgb) and np.array_equal(
        a_mask, b_mask
    )
    report(
        "determinism & round-trips",
        det and bit_identical,
        f"metrics CSV deterministic={det} ({len(csv1)} lines), "
        f"checkpoint render bit-identical={bit_identical}",
    )


# ---------------------------------------------------------------------------
# criterion 9: interactive-rate render
# ---------------------------------------------------------------------------

def test_interactive_rate_render(fitted, scene_and_dataset):
    trainer, _, path = fitted
    dataset, _ = scene_and_dataset
    model, _ = load_checkpoint(path)
    cam = Camera.from_fov(36.0, 256, 256, orbit_pose(30.0, 10.0, 2.3))
    w = dataset.frames[0].coeffs
    times = []
    for _ in range(9):
        t0 = time.perf_counter()
        model.render_image(w, cam, background=dataset.background)
        times.append((time.perf_counter() - t0) * 1000.0)
    median = float(np.median(times))
    report(
        "interactive-rate render",
        median <= INTERACTIVE_MS,
        f"256x256 median {median:.1f} ms over {len(times)} renders "
        f"(threshold {INTERACTIVE_MS:.0f} ms, occupancy "
        f"{model.grid.occupancy_fraction():.3f})",
    )
