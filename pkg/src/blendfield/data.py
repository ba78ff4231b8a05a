"""Datasets on disk and the synthetic oracle scene.

A dataset is a manifest plus per-frame images, masks, coefficients, and
poses. The synthetic generator builds scenes from compact-support
polynomial density blobs whose line integrals have closed form, so ground
truth images come from an integrator with exact transmittance; that makes
desk-scale end-to-end verification possible without any capture pipeline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit
from PIL import Image

from .camera import Camera, all_pixels, generate_rays, orbit_pose
from .errors import DatasetError
from .validation import check_box

MANIFEST_NAME = "manifest.json"
FORMAT_TAG = "blendfield-dataset-v1"


@dataclass
class FrameRecord:
    """One training/test frame: assets plus tracking outputs."""

    coeffs: np.ndarray
    camera: Camera
    image: np.ndarray          # (H, W, 3) float32 in [0, 1]
    mask: np.ndarray           # (H, W) float32 in {0, 1}
    roi: tuple | None = None   # (row0, col0, row1, col1), half-open
    image_path: str | None = None
    mask_path: str | None = None


@dataclass
class Dataset:
    """Frames plus scene-level metadata shared by all of them."""

    k: int
    width: int
    height: int
    bounding_box: np.ndarray
    background: np.ndarray
    frames: list
    train_indices: list
    test_indices: list

    def __post_init__(self):
        self.bounding_box = check_box(self.bounding_box)
        self.background = np.asarray(self.background, dtype=np.float32)
        if set(self.train_indices) & set(self.test_indices):
            raise DatasetError("train/test splits overlap")

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def coeff_rows(self, indices=None) -> np.ndarray:
        idx = range(self.n_frames) if indices is None else indices
        return np.stack([self.frames[i].coeffs for i in idx]).astype(np.float32)

    def train_frames(self) -> list:
        return [self.frames[i] for i in self.train_indices]

    def test_frames(self) -> list:
        return [self.frames[i] for i in self.test_indices]


def default_split(n_frames: int) -> tuple:
    """Hold out the last 500 frames, or the last 10% for short captures."""
    n_test = 500 if n_frames > 5000 else max(1, n_frames // 10)
    n_test = min(n_test, n_frames - 1)
    return list(range(n_frames - n_test)), list(range(n_frames - n_test, n_frames))


def _quantize(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def save_png(path: Path, img: np.ndarray):
    arr = _quantize(img) if img.dtype != np.uint8 else img
    Image.fromarray(arr).save(path)


def _load_png(path: Path, name: str) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im, dtype=np.float32) / 255.0
    except Exception as exc:
        raise DatasetError(f"cannot read {name} at {path}: {exc}") from exc


def export_dataset(dataset: Dataset, directory) -> Path:
    """Write manifest + 8-bit PNG assets; returns the manifest path."""
    root = Path(directory)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    frames_meta = []
    for i, fr in enumerate(dataset.frames):
        img_rel = f"frames/{i:06d}.png"
        mask_rel = f"masks/{i:06d}.png"
        save_png(root / img_rel, fr.image)
        save_png(root / mask_rel, fr.mask)
        cam = fr.camera
        frames_meta.append({
            "image": img_rel,
            "mask": mask_rel,
            "pose": [float(v) for v in cam.pose.reshape(-1)],
            "coeffs": [float(v) for v in fr.coeffs],
            "roi": list(fr.roi) if fr.roi is not None else None,
        })
    cam0 = dataset.frames[0].camera
    manifest = {
        "format": FORMAT_TAG,
        "k": dataset.k,
        "width": dataset.width,
        "height": dataset.height,
        "intrinsics": {"fx": cam0.fx, "fy": cam0.fy, "cx": cam0.cx, "cy": cam0.cy},
        "bounding_box": [list(map(float, dataset.bounding_box[0])),
                         list(map(float, dataset.bounding_box[1]))],
        "background": [float(v) for v in dataset.background],
        "train_indices": list(dataset.train_indices),
        "test_indices": list(dataset.test_indices),
        "frames": frames_meta,
    }
    path = root / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=1))
    return path


def load_dataset(directory) -> Dataset:
    """Load and validate a dataset directory; errors name the file."""
    root = Path(directory)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise DatasetError(f"no {MANIFEST_NAME} in {root}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"malformed manifest {manifest_path}: {exc}") from exc
    if manifest.get("format") != FORMAT_TAG:
        raise DatasetError(f"{manifest_path}: unknown format tag")
    k = int(manifest["k"])
    width = int(manifest["width"])
    height = int(manifest["height"])
    intr = manifest["intrinsics"]
    frames = []
    for i, meta in enumerate(manifest["frames"]):
        coeffs = np.asarray(meta["coeffs"], dtype=np.float32)
        if coeffs.shape != (k,):
            raise DatasetError(
                f"frame {i}: expected {k} coefficients, got {coeffs.shape[0]}"
            )
        pose = np.asarray(meta["pose"], dtype=np.float64).reshape(4, 4)
        fintr = meta.get("intrinsics", intr)
        camera = Camera(
            fx=fintr["fx"], fy=fintr["fy"], cx=fintr["cx"], cy=fintr["cy"],
            width=width, height=height, pose=pose,
        )
        image = _load_png(root / meta["image"], f"frame {i} image")
        mask = _load_png(root / meta["mask"], f"frame {i} mask")
        if image.ndim != 3 or image.shape != (height, width, 3):
            raise DatasetError(
                f"frame {i}: image {meta['image']} has shape {image.shape}, "
                f"expected ({height}, {width}, 3)"
            )
        if mask.ndim == 3:
            mask = mask[..., 0]
        if mask.shape != (height, width):
            raise DatasetError(
                f"frame {i}: mask {meta['mask']} has shape {mask.shape}"
            )
        roi = meta.get("roi")
        frames.append(FrameRecord(
            coeffs=coeffs, camera=camera, image=image, mask=mask,
            roi=tuple(roi) if roi else None,
            image_path=meta["image"], mask_path=meta["mask"],
        ))
    if not frames:
        raise DatasetError(f"{manifest_path} lists no frames")
    train_idx = manifest.get("train_indices")
    test_idx = manifest.get("test_indices")
    if train_idx is None or test_idx is None:
        train_idx, test_idx = default_split(len(frames))
    return Dataset(
        k=k, width=width, height=height,
        bounding_box=np.asarray(manifest["bounding_box"], dtype=np.float64),
        background=np.asarray(manifest["background"], dtype=np.float32),
        frames=frames, train_indices=list(train_idx), test_indices=list(test_idx),
    )


# ---------------------------------------------------------------------------
# Synthetic oracle scene
# ---------------------------------------------------------------------------

@dataclass
class OracleScene:
    """Analytic blob scene, affine-linear in the expression coefficients.

    Densities are compact-support bumps A * (1 - (r/R)^2)^3. Blob 0 is the
    static body with unit weight; blob i (1..K) is scaled by w_i. Bump
    centers are spread so basis bumps never overlap each other, keeping
    blended colors inside [0, 1] for w in [0, 1]^K.
    """

    k: int
    bounding_box: np.ndarray
    background: np.ndarray
    centers: np.ndarray       # (K+1, 3)
    radii: np.ndarray         # (K+1,)
    peaks: np.ndarray         # (K+1,)
    color_base: np.ndarray    # (3,)
    color_freq: np.ndarray    # (3, 3) direction per channel
    color_phase: np.ndarray   # (3,)
    color_amp: float
    color_delta: np.ndarray   # (K+1, 3), delta of blob 0 unused

    @property
    def diagonal(self) -> float:
        b = self.bounding_box
        return float(np.linalg.norm(b[1] - b[0]))

    def blend_weights(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64).reshape(-1)
        if w.shape[0] != self.k:
            raise DatasetError(f"expected {self.k} coefficients, got {w.shape[0]}")
        return np.concatenate([[1.0], w])

    def _bump(self, points: np.ndarray) -> np.ndarray:
        """(N, K+1) bump profile values at points (no peak scaling)."""
        d2 = ((points[:, None, :] - self.centers[None, :, :]) ** 2).sum(axis=2)
        u = 1.0 - d2 / (self.radii[None, :] ** 2)
        return np.where(u > 0.0, u**3, 0.0)

    def sigma_points(self, points, w) -> np.ndarray:
        wb = self.blend_weights(w)
        bump = self._bump(np.asarray(points, dtype=np.float64))
        return bump @ (wb * self.peaks)

    def color_points(self, points, w) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        wb = self.blend_weights(w)
        phase = pts @ self.color_freq.T + self.color_phase[None, :]
        base = self.color_base[None, :] + self.color_amp * np.sin(phase)
        bump = self._bump(pts)
        delta = bump @ (wb[:, None] * self.color_delta)
        return np.clip(base + delta, 0.0, 1.0)

    # -- exact line integrals -------------------------------------------------

    def _ray_blob_geometry(self, origins, dirs):
        """Closest-approach parameters per (ray, blob)."""
        rel = self.centers[None, :, :] - origins[:, None, :]
        tc = np.einsum("rbk,rk->rb", rel, dirs)
        b2 = (rel**2).sum(axis=2) - tc**2
        return tc, b2

    def optical_depth(self, origins, dirs, w, t) -> np.ndarray:
        """Exact accumulated density along rays up to parameter t.

        t may be (R,) or (R, N); returns matching shape.
        """
        wb = self.blend_weights(w)
        tc, b2 = self._ray_blob_geometry(origins, dirs)
        t_arr = np.asarray(t, dtype=np.float64)
        squeeze = t_arr.ndim == 1
        if squeeze:
            t_arr = t_arr[:, None]
        depth = np.zeros(t_arr.shape, dtype=np.float64)
        r2 = self.radii**2
        for b in range(self.k + 1):
            amp = wb[b] * self.peaks[b]
            if amp == 0.0:
                continue
            q = 1.0 - b2[:, b] / r2[b]
            hit = q > 0.0
            if not hit.any():
                continue
            sq = np.sqrt(np.maximum(q, 0.0)) * self.radii[b]
            s = np.clip(t_arr - tc[:, b, None], -sq[:, None], sq[:, None])
            depth += amp * np.where(
                hit[:, None],
                _bump_antiderivative(s, q[:, None], r2[b])
                - _bump_antiderivative(-sq[:, None], q[:, None], r2[b]),
                0.0,
            )
        return depth[:, 0] if squeeze else depth

    def support_interval(self, origins, dirs):
        """Per-ray [t_lo, t_hi] covering every active blob, clamped to t>=0."""
        tc, b2 = self._ray_blob_geometry(origins, dirs)
        q = 1.0 - b2 / (self.radii[None, :] ** 2)
        half = np.sqrt(np.maximum(q, 0.0)) * self.radii[None, :]
        active = q > 0.0
        t_in = np.where(active, tc - half, np.inf)
        t_out = np.where(active, tc + half, -np.inf)
        t_lo = np.maximum(t_in.min(axis=1), 0.0)
        t_hi = np.maximum(t_out.max(axis=1), 0.0)
        return t_lo, t_hi

    def integrate_rays(self, origins, dirs, w, step=None, chunk=512):
        """Semi-analytic render of rays: exact transmittance per segment,
        midpoint color per segment. Returns (color (R,3), mask (R,))."""
        if step is None:
            step = self.diagonal / 2048.0
        origins = np.asarray(origins, dtype=np.float64)
        dirs = np.asarray(dirs, dtype=np.float64)
        n = origins.shape[0]
        color = np.zeros((n, 3), dtype=np.float64)
        mask = np.zeros(n, dtype=np.float64)
        for s in range(0, n, chunk):
            e = min(s + chunk, n)
            c, m = self._integrate_chunk(origins[s:e], dirs[s:e], w, step)
            color[s:e] = c
            mask[s:e] = m
        return color, mask

    def _segment_grid(self, origins, dirs, w, step):
        t_lo, t_hi = self.support_interval(origins, dirs)
        span = np.maximum(t_hi - t_lo, 0.0)
        n_seg = int(np.ceil(span.max() / step)) if span.max() > 0 else 0
        if n_seg == 0:
            return None
        edges = t_lo[:, None] + step * np.arange(n_seg + 1)[None, :]
        edges = np.minimum(edges, t_hi[:, None])
        depth = self.optical_depth(origins, dirs, w, edges)
        trans = np.exp(-depth[:, :-1])
        alpha = 1.0 - np.exp(-(depth[:, 1:] - depth[:, :-1]))
        mids = 0.5 * (edges[:, :-1] + edges[:, 1:])
        return edges, trans, alpha, mids, depth

    def _integrate_chunk(self, origins, dirs, w, step):
        grid = self._segment_grid(origins, dirs, w, step)
        n = origins.shape[0]
        if grid is None:
            return np.zeros((n, 3)), np.zeros(n)
        edges, trans, alpha, mids, depth = grid
        weights = trans * alpha
        color = np.zeros((n, 3), dtype=np.float64)
        # colors only matter where the segment weight does; past opacity
        # saturation nearly all segments contribute nothing
        ray_idx, seg_idx = np.nonzero(weights > 1e-9)
        if ray_idx.size:
            pts = (
                origins[ray_idx]
                + mids[ray_idx, seg_idx][:, None] * dirs[ray_idx]
            )
            cols = self.color_points(pts, w)
            contrib = weights[ray_idx, seg_idx][:, None] * cols
            np.add.at(color, ray_idx, contrib)
        mask = 1.0 - np.exp(-depth[:, -1])
        return color, mask

    def render(self, w, camera: Camera, step=None):
        """Ground-truth frame: (rgb over background, mask) as float arrays."""
        pixels = all_pixels(camera.width, camera.height)
        origins, dirs, _, _, _ = generate_rays(
            camera, pixels, self.bounding_box
        )
        color, mask = self.integrate_rays(origins, dirs, w, step=step)
        rgb = color + (1.0 - mask[:, None]) * self.background[None, :]
        h, wd = camera.height, camera.width
        return (
            rgb.reshape(h, wd, 3).astype(np.float32),
            mask.reshape(h, wd).astype(np.float32),
        )

    def accumulate_cell_weights(self, w, camera: Camera, grid_res: int,
                                buffer: np.ndarray, step=None, pixel_stride=1):
        """Fold per-cell max weight contribution under (w, camera) into buffer.

        buffer is flat (grid_res**3,) float64; each ray's contribution to a
        cell is the sum of its segment weights inside the cell, and buffer
        keeps the max over rays and calls. Used by occupancy soundness checks.
        """
        if step is None:
            step = self.diagonal / 512.0
        pixels = all_pixels(camera.width, camera.height)[::pixel_stride]
        origins, dirs, _, _, _ = generate_rays(camera, pixels, self.bounding_box)
        box = self.bounding_box
        for s in range(0, origins.shape[0], 512):
            e = min(s + 512, origins.shape[0])
            grid = self._segment_grid(origins[s:e], dirs[s:e], w, step)
            if grid is None:
                continue
            edges, trans, alpha, mids, _ = grid
            weights = trans * alpha
            valid = (edges[:, 1:] - edges[:, :-1]) > 1e-12
            pts = origins[s:e, None, :] + mids[:, :, None] * dirs[s:e, None, :]
            rel = (pts - box[0]) / (box[1] - box[0])
            ijk = np.clip((rel * grid_res).astype(np.int64), 0, grid_res - 1)
            cells = (ijk[..., 0] * grid_res + ijk[..., 1]) * grid_res + ijk[..., 2]
            _max_cell_weights(cells, weights, valid, buffer)


def _bump_antiderivative(s, q, r2):
    """Antiderivative of (q - s^2/R^2)^3 in s (valid inside the support)."""
    s2 = s * s
    return s * (
        q**3
        - q * q * s2 / r2
        + 0.6 * q * s2 * s2 / (r2 * r2)
        - s2 * s2 * s2 / (7.0 * r2 * r2 * r2)
    )


@njit(cache=True)
def _max_cell_weights(cells, weights, valid, buffer):
    n_rays, n_seg = cells.shape
    for r in range(n_rays):
        j = 0
        while j < n_seg:
            if not valid[r, j]:
                j += 1
                continue
            c = cells[r, j]
            acc = 0.0
            while j < n_seg and valid[r, j] and cells[r, j] == c:
                acc += weights[r, j]
                j += 1
            if acc > buffer[c]:
                buffer[c] = acc


def project_sphere_roi(camera: Camera, center, radius) -> tuple | None:
    """Image-space bounding box of a sphere, or None if behind the camera."""
    rel = np.asarray(center, dtype=np.float64) - camera.position
    cam_coords = camera.rotation.T @ rel
    depth = -cam_coords[2]
    if depth <= radius:
        return None
    col = camera.cx + camera.fx * cam_coords[0] / depth
    row = camera.cy - camera.fy * cam_coords[1] / depth
    pr = camera.fy * radius / depth
    pc = camera.fx * radius / depth
    r0 = int(np.clip(np.floor(row - pr), 0, camera.height - 1))
    r1 = int(np.clip(np.ceil(row + pr) + 1, 1, camera.height))
    c0 = int(np.clip(np.floor(col - pc), 0, camera.width - 1))
    c1 = int(np.clip(np.ceil(col + pc) + 1, 1, camera.width))
    if r1 <= r0 or c1 <= c0:
        return None
    return (r0, c0, r1, c1)


def make_oracle_scene(k: int, seed: int) -> OracleScene:
    """Deterministic blob scene with k basis bumps on a static body."""
    rng = np.random.default_rng(seed)
    box = np.array([[-0.8, -0.8, -0.8], [0.8, 0.8, 0.8]])
    body_radius = 0.48
    bump_radius = 0.21
    centers = [np.zeros(3)]
    # Spread basis bump centers on a sphere; jittered tetrahedral-style
    # directions keep pairwise gaps above 2 * bump_radius (no overlap).
    base_dirs = np.array([
        [1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0],
        [1.0, 1.0, -1.0], [-1.0, 1.0, 1.0], [1.0, -1.0, 1.0], [-1.0, -1.0, -1.0],
    ])
    shell = 0.40
    for i in range(k):
        d = base_dirs[i % len(base_dirs)] + rng.normal(0.0, 0.05, 3)
        d = d / np.linalg.norm(d)
        centers.append(shell * d)
    centers = np.asarray(centers)
    radii = np.array([body_radius] + [bump_radius] * k)
    peaks = np.array([600.0] + list(rng.uniform(350.0, 550.0, k)))
    color_delta = np.zeros((k + 1, 3))
    hues = np.array([
        [0.22, -0.12, -0.12], [-0.14, 0.20, -0.10],
        [-0.12, -0.12, 0.22], [0.18, 0.14, -0.16],
        [-0.16, 0.10, 0.18], [0.12, -0.18, 0.12],
    ])
    for i in range(k):
        color_delta[i + 1] = hues[i % len(hues)]
    freq = rng.normal(0.0, 1.0, (3, 3))
    freq = 5.0 * freq / np.linalg.norm(freq, axis=1, keepdims=True)
    return OracleScene(
        k=k,
        bounding_box=box,
        background=np.array([0.36, 0.39, 0.43], dtype=np.float32),
        centers=centers,
        radii=radii,
        peaks=peaks,
        color_base=np.array([0.50, 0.50, 0.50]),
        color_freq=freq,
        color_phase=rng.uniform(0.0, 2.0 * np.pi, 3),
        color_amp=0.26,
        color_delta=color_delta,
    )


def synth_scene(
    k: int,
    seed: int,
    resolution: int = 64,
    n_train: int = 200,
    n_test: int = 40,
    fov_deg: float = 36.0,
    oracle_step: float | None = None,
) -> tuple:
    """Generate (Dataset, OracleScene) with oracle-rendered frames.

    Images are quantized to 8-bit immediately so export/load round-trips
    are exact. Masks threshold the oracle opacity at 0.5. The mouth ROI is
    the projected box of the first basis bump.
    """
    scene = make_oracle_scene(k, seed)
    rng = np.random.default_rng(seed + 1)
    n_frames = n_train + n_test
    coeffs = rng.uniform(0.0, 1.0, (n_frames, k)).astype(np.float32)
    frames = []
    for j in range(n_frames):
        pose = orbit_pose(
            azimuth_deg=rng.uniform(0.0, 360.0),
            elevation_deg=rng.uniform(-20.0, 25.0),
            distance=2.3,
        )
        camera = Camera.from_fov(fov_deg, resolution, resolution, pose)
        rgb, mask = scene.render(coeffs[j], camera, step=oracle_step)
        rgb = _quantize(rgb).astype(np.float32) / 255.0
        mask_bin = (mask > 0.5).astype(np.float32)
        roi = project_sphere_roi(camera, scene.centers[1], scene.radii[1])
        frames.append(FrameRecord(
            coeffs=coeffs[j], camera=camera, image=rgb, mask=mask_bin, roi=roi,
        ))
    dataset = Dataset(
        k=k, width=resolution, height=resolution,
        bounding_box=scene.bounding_box,
        background=scene.background,
        frames=frames,
        train_indices=list(range(n_train)),
        test_indices=list(range(n_train, n_frames)),
    )
    return dataset, scene


def oracle_render(scene: OracleScene, w, camera: Camera, step=None):
    """Ground-truth render of the scene (module-level convenience)."""
    return scene.render(w, camera, step=step)
