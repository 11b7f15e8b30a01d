import numpy as np
import pytest
import torch

from triplane_inversion.camera import Intrinsics, orbit_pose
from triplane_inversion.editing import (
    EditDirection,
    apply_edit,
    attribute_scores,
    discover_direction,
    edit_features,
    edited_render,
    fit_direction,
    load_direction,
    quantile_labels,
    save_direction,
)
from triplane_inversion.errors import InvalidArgument

INTR = Intrinsics(2.0, 2.0)


def separable_cloud(n=200, d=16, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    x[:, 0] += np.where(x[:, 0] > 0, 1.0, -1.0)
    return x, (x[:, 0] > 0).astype(int)


class TestFitDirection:
    def test_recovers_axis(self):
        x, y = separable_cloud()
        d = fit_direction(x, y)
        assert abs(d.direction[0]) > 0.99
        assert d.stats["accuracy"] == 1.0

    def test_label_flip_flips_sign(self):
        x, y = separable_cloud()
        np.testing.assert_allclose(fit_direction(x, 1 - y).direction, -fit_direction(x, y).direction, atol=1e-6)

    def test_unit_norm(self):
        x, y = separable_cloud(seed=3)
        assert abs(np.linalg.norm(fit_direction(x, y).direction) - 1) < 1e-6

    @pytest.mark.parametrize("c", [1e-3, 7.0, 250.0])
    def test_scale_invariant(self, c):
        x, y = separable_cloud(seed=1)
        np.testing.assert_allclose(fit_direction(c * x, y).direction, fit_direction(x, y).direction, atol=1e-6)

    def test_deterministic(self):
        x, y = separable_cloud(seed=2)
        np.testing.assert_array_equal(fit_direction(x, y, seed=5).direction, fit_direction(x, y, seed=5).direction)

    def test_single_class(self):
        x, _ = separable_cloud()
        with pytest.raises(InvalidArgument):
            fit_direction(x, np.ones(len(x)))

    def test_too_few(self):
        x, y = separable_cloud(n=10)
        with pytest.raises(InvalidArgument):
            fit_direction(x, y)


class TestDirectionType:
    def test_normalizes(self):
        assert np.linalg.norm(EditDirection(np.array([3.0, 4.0]), "x").direction) == pytest.approx(1.0)

    def test_rejects_zero(self):
        with pytest.raises(InvalidArgument):
            EditDirection(np.zeros(3), "x")

    def test_file_round_trip(self, tmp_path):
        d = EditDirection(np.arange(1.0, 5.0), "hue", {"accuracy": 1.0})
        save_direction(tmp_path / "d.tpck", d)
        back = load_direction(tmp_path / "d.tpck")
        np.testing.assert_allclose(back.direction, d.direction, rtol=0, atol=1e-15)
        assert back.attribute == "hue" and back.stats == {"accuracy": 1.0}


class TestApplyEdit:
    def setup_method(self):
        self.wp = torch.randn(2, 5, 8, generator=torch.Generator().manual_seed(0), dtype=torch.float64)
        self.d = EditDirection(np.random.default_rng(0).normal(size=8), "x")

    def test_zero_strength(self):
        assert torch.equal(apply_edit(self.wp, self.d, 0.0), self.wp)

    def test_inverse(self):
        back = apply_edit(apply_edit(self.wp, self.d, 1.7), self.d, -1.7)
        np.testing.assert_allclose(back.numpy(), self.wp.numpy(), atol=1e-6)

    def test_additive(self):
        twice = apply_edit(apply_edit(self.wp, self.d, 0.4), self.d, 1.1)
        np.testing.assert_allclose(twice.numpy(), apply_edit(self.wp, self.d, 1.5).numpy(), atol=1e-6)

    def test_row_uniform(self):
        delta = apply_edit(self.wp, self.d, 2.0) - self.wp
        np.testing.assert_allclose(delta.numpy(), np.broadcast_to(2.0 * self.d.direction, delta.shape), atol=1e-12)

    def test_row_subset(self):
        delta = apply_edit(self.wp, self.d, 1.0, rows=[1, 3]) - self.wp
        assert torch.all(delta[:, [0, 2, 4]] == 0)
        assert torch.all(delta[:, [1, 3]].abs().sum(-1) > 0)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgument):
            apply_edit(self.wp, EditDirection(np.ones(3), "x"), 1.0)


class TestEditFeatures:
    def test_identity_edit(self, small_generator):
        wp = torch.randn(1, small_generator.num_ws, small_generator.cfg.w_dim)
        fstar = torch.randn_like(small_generator.synthesis(wp)[0].tapped)
        with torch.no_grad():
            assert torch.equal(edit_features(fstar, wp, wp.clone(), small_generator), fstar)

    def test_cancellation(self, small_generator):
        d = EditDirection(np.ones(small_generator.cfg.w_dim), "x")
        wp = torch.randn(1, small_generator.num_ws, small_generator.cfg.w_dim)
        wp_hat = apply_edit(wp, d, 0.5)
        with torch.no_grad():
            f_w = small_generator.synthesis(wp)[0].tapped
            expected = small_generator.synthesis(wp_hat)[0].tapped
            assert torch.equal(edit_features(f_w, wp, wp_hat, small_generator), expected)

    def test_second_difference_small(self, small_generator):
        d = EditDirection(np.random.default_rng(1).normal(size=small_generator.cfg.w_dim), "x")
        wp = torch.randn(1, small_generator.num_ws, small_generator.cfg.w_dim, dtype=torch.float64)
        gen = small_generator.double()
        with torch.no_grad():
            fstar = gen.synthesis(wp)[0].tapped + 0.1
            f = {s: edit_features(fstar, wp, apply_edit(wp, d, s), gen) for s in (0.0, 0.1, 0.2)}
        ratio = (f[0.2] - 2 * f[0.1] + f[0.0]).norm() / f[0.1].norm()
        small_generator.float()
        assert ratio < 1e-2

    def test_shape_mismatch(self, small_generator):
        wp = torch.randn(1, small_generator.num_ws, small_generator.cfg.w_dim)
        with pytest.raises(InvalidArgument):
            edit_features(torch.zeros(1, 2, 3, 3), wp, wp, small_generator)


class TestEditedRender:
    def test_strength_zero_matches_unedited(self, small_generator):
        gen = small_generator
        wp = torch.randn(1, gen.num_ws, gen.cfg.w_dim)
        d = EditDirection(np.ones(gen.cfg.w_dim), "x")
        with torch.no_grad():
            fs, tp_w = gen.synthesis(wp)
            fstar = fs.tapped * 1.1
            mask = (np.random.default_rng(0).random((3, gen.plane_res, gen.plane_res)) > 0.5).astype(np.uint8)
            from triplane_inversion.occlusion import mix_triplane

            planes = mix_triplane(gen.resume(fstar, wp), tp_w, mask)
            pose = orbit_pose(25.0)
            ref = gen.render(planes, pose, INTR, wp=wp, res=16)
            out = edited_render(gen, wp, fstar, d, 0.0, pose, INTR, mask, res=16)
        assert torch.equal(out.image, ref.image)
        assert torch.equal(out.depth, ref.depth)

    def test_three_poses(self, small_generator):
        gen = small_generator
        wp = torch.randn(1, gen.num_ws, gen.cfg.w_dim)
        d = EditDirection(np.ones(gen.cfg.w_dim), "x")
        mask = np.ones((3, gen.plane_res, gen.plane_res), np.uint8)
        with torch.no_grad():
            fstar = gen.synthesis(wp)[0].tapped
            for yaw in (-30.0, 0.0, 30.0):
                out = edited_render(gen, wp, fstar, d, 1.0, orbit_pose(yaw), INTR, mask, res=8)
                assert torch.isfinite(out.image).all()


class TestAttributes:
    def test_radius_is_area_fraction(self):
        op = np.zeros((2, 4, 4))
        op[1, :2] = 1.0
        np.testing.assert_allclose(attribute_scores(None, op, "radius"), [0.0, 0.5])

    def test_hue(self):
        img = np.zeros((1, 2, 2, 3))
        img[..., 1] = 1.0
        np.testing.assert_allclose(attribute_scores(img, np.ones((1, 2, 2)), "hue"), [1 / 3])

    def test_unknown_attribute(self):
        with pytest.raises(InvalidArgument):
            attribute_scores(None, np.ones((1, 2, 2)), "age")

    def test_quantile_labels(self):
        idx, labels = quantile_labels(np.arange(10.0), 0.2)
        np.testing.assert_array_equal(idx, [0, 1, 8, 9])
        np.testing.assert_array_equal(labels, [0, 0, 1, 1])
        with pytest.raises(InvalidArgument):
            quantile_labels(np.arange(10.0), 0.7)

    def test_discover_direction(self, cfg, small_generator):
        cfg.edit.samples = 100
        d, scores = discover_direction(small_generator, cfg, seed=0, res=8)
        assert scores.shape == (100,)
        assert d.direction.shape == (small_generator.cfg.w_dim,)
        assert d.stats["n"] == 2 * max(1, round(cfg.edit.quantile * 100))


@pytest.mark.slow
def test_size_edit_grows_silhouette_monotonically():
    """Radius direction on the trained toy generator, applied to inverted dataset front views."""
    from acceptance_pipeline import acceptance_config, cache_root, run_acceptance_pipeline
    from triplane_inversion.data import MultiViewDataset
    from triplane_inversion.generator_training import load_generator
    from triplane_inversion.pipeline import invert
    from triplane_inversion.training import load_encoder

    run_acceptance_pipeline()
    root, cfg = cache_root(), acceptance_config()
    cfg.edit.samples = 400
    gen = load_generator(root / "gen" / "generator.tpck")
    encoder = load_encoder(root / "enc_full_0" / "encoder.tpck", cfg, gen)
    direction, _ = discover_direction(gen, cfg, seed=0)
    data = MultiViewDataset(root / "data", scenes=list(range(6)))
    front = cfg.data.yaws.index(0.0)
    with torch.no_grad():
        for s in range(6):
            bundle = invert(data.images[s, front], data.labels[s, front].numpy(), gen, encoder, None, cfg)
            areas = [
                (edited_render(gen, bundle.wplus, bundle.fstar, direction, k, bundle.pose, bundle.intrinsics,
                               bundle.mask).opacity >= 0.5).float().mean().item()
                for k in (-2.0, -1.0, 0.0, 1.0, 2.0)
            ]
            assert np.all(np.diff(areas) > 0), areas
