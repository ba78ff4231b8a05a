import numpy as np
import pytest
from sklearn.base import clone

from blendfield import BlendshapeAvatar, StateError, synth_scene


@pytest.fixture(scope="module")
def fitted():
    dataset, _ = synth_scene(k=2, seed=41, resolution=24, n_train=6, n_test=2)
    est = BlendshapeAvatar(
        levels=3, table_size=2**10, feat_dim=2, coarsest_res=4, finest_res=16,
        width=16, n_hidden=2, batch_frames=2, rays_per_frame=96,
        steps_per_epoch=8, patch_size=8, step_divisor=96, max_samples=96,
        grid_resolution=16, grid_warmup_steps=10, grid_update_interval=8,
        grid_slabs=2, seed=3, max_steps=30,
    )
    est.fit(dataset)
    return est, dataset


class TestSklearnProtocol:
    def test_get_set_params_round_trip(self):
        est = BlendshapeAvatar(levels=5, seed=9)
        params = est.get_params()
        assert params["levels"] == 5
        est.set_params(levels=7)
        assert est.get_params()["levels"] == 7

    def test_clone_preserves_params(self):
        est = BlendshapeAvatar(mode="concat", width=48, time_budget=1.5)
        dup = clone(est)
        assert dup.get_params() == est.get_params()

    def test_not_fitted_raises(self):
        with pytest.raises(StateError):
            BlendshapeAvatar().render(np.zeros(2))


class TestFitPredict:
    def test_fit_exposes_model(self, fitted):
        est, _ = fitted
        assert est.model_.k == 2
        assert est.trainer_.step_count == 30

    def test_render_default_camera(self, fitted):
        est, dataset = fitted
        rgb, mask = est.render(np.zeros(2))
        assert rgb.shape == (dataset.height, dataset.width, 3)
        assert mask.shape == (dataset.height, dataset.width)

    def test_predict_stacks_rows(self, fitted):
        est, dataset = fitted
        out = est.predict(np.zeros((3, 2)))
        assert out.shape == (3, dataset.height, dataset.width, 3)

    def test_coefficient_length_checked(self, fitted):
        est, _ = fitted
        from blendfield import ShapeError

        with pytest.raises(ShapeError):
            est.render(np.zeros(5))

    def test_score_returns_finite_psnr(self, fitted):
        est, dataset = fitted
        score = est.score(dataset)
        assert np.isfinite(score)
        assert 0 < score < 99

    def test_save_load_round_trip(self, fitted, tmp_path):
        est, dataset = fitted
        path = tmp_path / "est.bfld"
        est.save(path, manifest={"train_config": est.train_config().manifest()})
        loaded = BlendshapeAvatar.load(path)
        bg = np.zeros(3, dtype=np.float32)
        a, _ = est.render(np.array([0.2, 0.7]), background=bg)
        b, _ = loaded.render(np.array([0.2, 0.7]), background=bg)
        assert np.array_equal(a, b)
        assert loaded.get_params()["levels"] == 3
