"""sklearn-style estimator facade over the training and rendering stack.

fit() trains a model from a Dataset (or a dataset directory), predict()
renders frames from coefficient rows, score() reports held-out PSNR. The
constructor only stores hyperparameters, so get_params/set_params/clone
behave the way sklearn pipelines expect.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .camera import Camera
from .data import Dataset, load_dataset
from .errors import StateError
from .metrics import psnr
from .training import TrainConfig, Trainer
from .validation import check_coefficient_rows, check_coefficients


class BlendshapeAvatar(BaseEstimator):
    """Expression-blendable radiance field estimator.

    Parameters mirror TrainConfig; fit(X) accepts a Dataset or a dataset
    directory path. After fitting, model_ holds the trained AvatarModel.
    """

    def __init__(
        self,
        mode="blend",
        levels=16,
        table_size=2**14,
        feat_dim=4,
        coarsest_res=16,
        finest_res=1024,
        width=64,
        n_hidden=3,
        sigma_bias=-3.0,
        lr_tables=1e-2,
        lr_net=1e-3,
        batch_frames=4,
        rays_per_frame=4096,
        patch_size=32,
        steps_per_epoch=2048,
        stage1_epochs=2,
        stage2_epochs=5,
        step_divisor=1024,
        max_samples=1024,
        grid_resolution=128,
        grid_update_interval=16,
        grid_warmup_steps=256,
        grid_slabs=16,
        grid_margin=2,
        tau=None,
        train_background="gt",
        lr_decay_steps=0,
        lr_decay_factor=0.1,
        seed=0,
        max_steps=None,
        time_budget=None,
        log_every=50,
    ):
        self.mode = mode
        self.levels = levels
        self.table_size = table_size
        self.feat_dim = feat_dim
        self.coarsest_res = coarsest_res
        self.finest_res = finest_res
        self.width = width
        self.n_hidden = n_hidden
        self.sigma_bias = sigma_bias
        self.lr_tables = lr_tables
        self.lr_net = lr_net
        self.batch_frames = batch_frames
        self.rays_per_frame = rays_per_frame
        self.patch_size = patch_size
        self.steps_per_epoch = steps_per_epoch
        self.stage1_epochs = stage1_epochs
        self.stage2_epochs = stage2_epochs
        self.step_divisor = step_divisor
        self.max_samples = max_samples
        self.grid_resolution = grid_resolution
        self.grid_update_interval = grid_update_interval
        self.grid_warmup_steps = grid_warmup_steps
        self.grid_slabs = grid_slabs
        self.grid_margin = grid_margin
        self.tau = tau
        self.train_background = train_background
        self.lr_decay_steps = lr_decay_steps
        self.lr_decay_factor = lr_decay_factor
        self.seed = seed
        self.max_steps = max_steps
        self.time_budget = time_budget
        self.log_every = log_every

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            mode=self.mode, levels=self.levels, table_size=self.table_size,
            feat_dim=self.feat_dim, coarsest_res=self.coarsest_res,
            finest_res=self.finest_res, width=self.width,
            n_hidden=self.n_hidden, sigma_bias=self.sigma_bias,
            lr_tables=self.lr_tables, lr_net=self.lr_net,
            batch_frames=self.batch_frames, rays_per_frame=self.rays_per_frame,
            patch_size=self.patch_size, steps_per_epoch=self.steps_per_epoch,
            stage1_epochs=self.stage1_epochs, stage2_epochs=self.stage2_epochs,
            step_divisor=self.step_divisor, max_samples=self.max_samples,
            grid_resolution=self.grid_resolution,
            grid_update_interval=self.grid_update_interval,
            grid_warmup_steps=self.grid_warmup_steps,
            grid_slabs=self.grid_slabs, grid_margin=self.grid_margin,
            tau=self.tau, train_background=self.train_background,
            lr_decay_steps=self.lr_decay_steps,
            lr_decay_factor=self.lr_decay_factor, seed=self.seed,
            log_every=self.log_every,
        )

    @staticmethod
    def _as_dataset(X) -> Dataset:
        return X if isinstance(X, Dataset) else load_dataset(X)

    def fit(self, X, y=None, csv_path=None, probe_fn=None, on_log=None):
        """Train on the dataset's train split; returns self."""
        dataset = self._as_dataset(X)
        trainer = Trainer(dataset, self.train_config())
        trainer.run(
            max_steps=self.max_steps, time_budget=self.time_budget,
            csv_path=csv_path, probe_fn=probe_fn, on_log=on_log,
        )
        self.trainer_ = trainer
        self.model_ = trainer.model
        self.background_ = dataset.background
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise StateError("estimator is not fitted; call fit or load first")

    def render(self, w, camera: Camera | None = None, background=None):
        """One frame: (rgb (H, W, 3), mask (H, W)) float32 arrays."""
        self._require_fitted()
        model = self.model_
        w = check_coefficients(w, model.k)
        if camera is None:
            if model.default_camera is None:
                raise StateError("no camera given and no default stored")
            camera = model.default_camera
        if background is None:
            background = getattr(self, "background_", np.zeros(3, np.float32))
        return model.render_image(w, camera, background=background)

    def predict(self, W, cameras=None, background=None):
        """Render one frame per coefficient row; returns (N, H, W, 3)."""
        self._require_fitted()
        rows = check_coefficient_rows(W, self.model_.k)
        if cameras is None or isinstance(cameras, Camera):
            cameras = [cameras] * rows.shape[0]
        out = [
            self.render(w, camera=cam, background=background)[0]
            for w, cam in zip(rows, cameras)
        ]
        return np.stack(out)

    def score(self, X, y=None) -> float:
        """Mean held-out PSNR against the dataset's test split."""
        self._require_fitted()
        dataset = self._as_dataset(X)
        vals = []
        for fr in dataset.test_frames():
            rgb, _ = self.model_.render_image(
                fr.coeffs, fr.camera, background=dataset.background
            )
            vals.append(psnr(rgb, fr.image))
        return float(np.mean(vals))

    def save(self, path, manifest=None):
        self._require_fitted()
        from .checkpoint import save_checkpoint

        save_checkpoint(path, self.model_, manifest=manifest)
        return path

    @classmethod
    def load(cls, path) -> "BlendshapeAvatar":
        from .checkpoint import load_checkpoint

        model, meta = load_checkpoint(path)
        config = meta.get("train_config", {})
        known = set(cls().get_params())
        est = cls(**{k: v for k, v in config.items() if k in known})
        est.model_ = model
        est.meta_ = meta
        return est
