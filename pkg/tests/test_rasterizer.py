import numpy as np
import pytest

from potr.fixture import random_scene
from potr.rasterizer import (compute_delta_mse, forward_stats, project_splats,
                             prune_difference, render_image,
                             render_with_records, render_targets)
from potr.scene import Camera, Splats
from potr.sh import SH_DC


def _flat_splat(position, opacity, color, scale):
    """Single view-independent splat."""
    sh = np.zeros((1, 3, 16))
    sh[0, :, 0] = np.asarray(color) / SH_DC
    return Splats(
        positions=np.array([position], dtype=np.float64),
        sh=sh,
        opacities=np.array([opacity], dtype=np.float64),
        scales=np.full((1, 3), scale, dtype=np.float64),
        rotations=np.array([[1.0, 0, 0, 0]], dtype=np.float64),
    )


def _stack(*splats_list):
    return Splats(
        positions=np.concatenate([s.positions for s in splats_list]),
        sh=np.concatenate([s.sh for s in splats_list]),
        opacities=np.concatenate([s.opacities for s in splats_list]),
        scales=np.concatenate([s.scales for s in splats_list]),
        rotations=np.concatenate([s.rotations for s in splats_list]),
    )


def _simple_camera(res=16, fx=100.0):
    return Camera(eye=np.zeros(3), rotation=np.eye(3), fx=fx, fy=fx,
                  cx=res / 2, cy=res / 2, width=res, height=res)


class TestProjection:
    def test_on_axis_splat(self):
        # depth 1, fx = fy = 100, isotropic scale 0.01: J Sigma J^T = I,
        # plus the 0.3 px^2 dilation on the diagonal
        splats = _flat_splat([0, 0, 1.0], 0.5, [1, 1, 1], 0.01)
        cam = _simple_camera()
        proj = project_splats(splats, cam)
        assert proj.valid[0]
        assert np.allclose(proj.mean2d[0], [8.0, 8.0], atol=1e-9)
        assert proj.cov2d[0, 0] == pytest.approx(1.3, abs=1e-9)
        assert proj.cov2d[0, 2] == pytest.approx(1.3, abs=1e-9)
        assert abs(proj.cov2d[0, 1]) < 1e-12

    def test_behind_camera_culled(self):
        splats = _flat_splat([0, 0, -1.0], 0.5, [1, 1, 1], 0.01)
        assert not project_splats(splats, _simple_camera()).valid[0]

    def test_near_clip(self):
        splats = _flat_splat([0, 0, 0.009], 0.5, [1, 1, 1], 0.01)
        assert not project_splats(splats, _simple_camera()).valid[0]

    def test_isotropic_rotation_invariance(self):
        splats = _flat_splat([0.1, -0.2, 1.5], 0.5, [1, 1, 1], 0.02)
        rotated = splats.copy()
        q = np.array([0.3, 0.5, -0.2, 0.7])
        rotated.rotations[0] = q / np.linalg.norm(q)
        cam = _simple_camera()
        a = project_splats(splats, cam)
        b = project_splats(rotated, cam)
        assert np.allclose(a.cov2d, b.cov2d, atol=1e-12)

    def test_far_off_screen_culled(self):
        splats = _flat_splat([50.0, 0, 1.0], 0.5, [1, 1, 1], 0.01)
        assert not project_splats(splats, _simple_camera()).valid[0]


class TestCompositing:
    def test_empty_pixel_black(self):
        splats = _flat_splat([0, 0, 1.0], 0.9, [1, 1, 1], 0.001)
        rec = render_with_records(splats, _simple_camera())
        assert np.all(rec.image[0, 0] == 0.0)
        assert rec.transmittance[0, 0] == 1.0

    def test_single_splat(self):
        splats = _flat_splat([0, 0, 1.0], 0.5, [1, 1, 1], 50.0)
        rec = render_with_records(splats, _simple_camera())
        assert rec.image[8, 8, 0] == pytest.approx(0.5, abs=1e-6)
        (sid, alpha, t), = rec.pixel_record(8, 8)
        assert sid == 0
        assert alpha == pytest.approx(0.5, abs=1e-6)
        assert t == 1.0

    def test_two_stacked_splats(self):
        front = _flat_splat([0, 0, 1.0], 0.5, [1, 1, 1], 50.0)
        back = _flat_splat([0, 0, 2.0], 0.5, [1, 1, 1], 100.0)
        rec = render_with_records(_stack(front, back), _simple_camera())
        # 0.5 + 0.5 * 0.5
        assert rec.image[8, 8, 0] == pytest.approx(0.75, abs=1e-6)

    def test_depth_sorting_not_input_order(self):
        front = _flat_splat([0, 0, 1.0], 0.5, [1, 0, 0], 50.0)
        back = _flat_splat([0, 0, 2.0], 0.5, [0, 1, 0], 100.0)
        a = render_with_records(_stack(front, back), _simple_camera())
        b = render_with_records(_stack(back, front), _simple_camera())
        assert np.allclose(a.image, b.image, atol=1e-14)

    def test_telescoping_transmittance(self):
        splats, cams = random_scene(0, num_splats=30)
        rec = render_with_records(splats, cams[0])
        h, w = rec.transmittance.shape
        t_prod = np.ones(h * w)
        np.multiply.at(t_prod, rec.pixels, 1.0 - rec.alphas)
        assert np.allclose(t_prod, rec.transmittance.reshape(-1), rtol=0, atol=1e-12)
        accum = np.zeros((h * w, 3))
        np.add.at(accum, rec.pixels,
                  rec.trans_at[:, None] * rec.alphas[:, None]
                  * rec.colors[rec.splat_ids])
        assert np.allclose(accum, rec.image.reshape(-1, 3), atol=1e-12)

    def test_negative_colors_clamped_at_compositing(self):
        splats = _flat_splat([0, 0, 1.0], 0.5, [1, 1, 1], 50.0)
        splats.sh[0, 2, 0] = -2.0 / SH_DC  # blue channel goes negative
        rec = render_with_records(splats, _simple_camera())
        assert rec.image[8, 8, 2] == 0.0
        assert rec.image[8, 8, 0] == pytest.approx(0.5, abs=1e-6)


class TestImportance:
    def test_invisible_splat_zero(self):
        visible = _flat_splat([0, 0, 1.0], 0.5, [1, 1, 1], 50.0)
        behind = _flat_splat([0, 0, -5.0], 0.9, [1, 1, 1], 1.0)
        stats = forward_stats(_stack(visible, behind), [_simple_camera()])
        assert stats.importance[1] == 0.0

    def test_full_cover_alpha_half(self):
        splats = _flat_splat([0, 0, 1.0], 0.5, [1, 1, 1], 500.0)
        stats = forward_stats(splats, [_simple_camera()])
        assert stats.importance[0] == pytest.approx(0.5, abs=1e-4)

    def test_importance_sums_below_one(self):
        splats, cams = random_scene(2)
        stats = forward_stats(splats, cams)
        sums = stats.camera_importance.sum(axis=1)
        assert np.all(sums >= 0.0)
        assert np.all(sums <= 1.0 + 1e-12)


class TestPruneDifference:
    def test_sole_contributor(self):
        splats = _flat_splat([0, 0, 1.0], 0.4, [0.8, 0.8, 0.8], 50.0)
        rec = render_with_records(splats, _simple_camera())
        pd = prune_difference(rec, 8, 8, 0)
        alpha = rec.pixel_record(8, 8)[0][1]
        assert np.allclose(pd, -alpha * 0.8, atol=1e-9)

    def test_two_splat_example(self):
        front = _flat_splat([0, 0, 1.0], 0.5, [1, 1, 1], 50.0)
        back = _flat_splat([0, 0, 2.0], 0.5, [1, 1, 1], 100.0)
        both = _stack(front, back)
        rec = render_with_records(both, _simple_camera())
        pd = prune_difference(rec, 8, 8, 0)
        assert np.allclose(pd, -0.25, atol=1e-6)
        # brute force: re-render without the front splat
        mask = np.array([False, True])
        wo = render_image(both.subset(mask), _simple_camera())
        assert np.allclose(wo[8, 8] - rec.image[8, 8], pd, atol=1e-9)

    def test_absent_splat_zero(self):
        splats = _flat_splat([0, 0, 1.0], 0.5, [1, 1, 1], 50.0)
        rec = render_with_records(splats, _simple_camera())
        assert np.all(prune_difference(rec, 0, 0, 99) == 0.0)

    def test_matches_vectorized_deltas(self):
        splats, cams = random_scene(4, num_splats=20)
        rec = render_with_records(splats, cams[0])
        pd = rec.prune_deltas()
        for i in range(0, len(rec.pixels), max(1, len(rec.pixels) // 17)):
            x = int(rec.pixels[i] % rec.width)
            y = int(rec.pixels[i] // rec.width)
            lit = prune_difference(rec, x, y, int(rec.splat_ids[i]))
            assert np.allclose(lit, pd[i], atol=1e-9)

    def test_oracle_equivalence_small_scene(self):
        splats, cams = random_scene(7, num_splats=25, num_cameras=2)
        for cam in cams:
            rec = render_with_records(splats, cam)
            assert rec.transmittance.min() >= 1e-4
            pd = rec.prune_deltas()
            for k in range(len(splats)):
                mask = np.ones(len(splats), dtype=bool)
                mask[k] = False
                diff = render_image(splats.subset(mask), cam) - rec.image
                pd_img = np.zeros_like(diff).reshape(-1, 3)
                sel = rec.splat_ids == k
                np.add.at(pd_img, rec.pixels[sel], pd[sel])
                assert np.abs(pd_img.reshape(diff.shape) - diff).max() <= 1e-5


class TestDeltaMse:
    def test_initial_dse_nonnegative(self):
        # with targets equal to the render, dSE = PD^2 >= 0
        splats, cams = random_scene(9, num_splats=15, num_cameras=2)
        targets = render_targets(splats, cams)
        stats = compute_delta_mse(splats, cams, targets)
        assert np.all(stats.delta_mse >= 0.0)
        assert stats.mse == 0.0

    def test_front_splat_example(self):
        front = _flat_splat([0, 0, 1.0], 0.5, [1, 1, 1], 50.0)
        back = _flat_splat([0, 0, 2.0], 0.5, [1, 1, 1], 100.0)
        both = _stack(front, back)
        cam = _simple_camera()
        targets = render_targets(both, [cam])
        stats = compute_delta_mse(both, [cam], targets)
        rec = render_with_records(both, cam)
        # every covered pixel contributes dSE = PD^2 = 0.0625 per channel
        covered = np.unique(rec.pixels[rec.splat_ids == 0])
        expected = 0.0625 * len(covered) / cam.pixel_count()
        assert stats.delta_mse[0] == pytest.approx(expected, rel=1e-3)

    def test_oracle_equivalence(self):
        splats, cams = random_scene(11, num_splats=20, num_cameras=2)
        targets = render_targets(splats, cams)
        stats = compute_delta_mse(splats, cams, targets)
        n = len(splats)
        brute = np.zeros(n)
        base = [render_image(splats, cam) for cam in cams]
        for k in range(n):
            mask = np.ones(n, dtype=bool)
            mask[k] = False
            for s, cam in enumerate(cams):
                wo = render_image(splats.subset(mask), cam)
                brute[k] += (np.mean((wo - targets[s]) ** 2)
                             - np.mean((base[s] - targets[s]) ** 2))
        brute /= len(cams)
        assert np.abs(brute - stats.delta_mse).max() <= 1e-9

    def test_target_shape_mismatch(self):
        splats, cams = random_scene(1, num_splats=5, num_cameras=1)
        with pytest.raises(ValueError, match="shape"):
            compute_delta_mse(splats, cams, [np.zeros((4, 4, 3))])


class TestDeterminism:
    def test_thread_count_invariance(self):
        splats, cams = random_scene(13, num_splats=40, num_cameras=4)
        targets = render_targets(splats, cams)
        runs = [compute_delta_mse(splats, cams, targets, threads=t)
                for t in (1, 4)]
        assert np.array_equal(runs[0].delta_mse, runs[1].delta_mse)
        assert np.array_equal(runs[0].importance, runs[1].importance)

    def test_repeat_run_bit_identical(self):
        splats, cams = random_scene(14, num_splats=30)
        a = render_image(splats, cams[0])
        b = render_image(splats, cams[0])
        assert np.array_equal(a, b)
