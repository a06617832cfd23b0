import math

import numpy as np
import pytest

from mwcalib.camera import CameraParams, OutOfFovError, project
from mwcalib.manhattan import KeypointLabel as L, count_unique_axes, direction_of
from mwcalib.metrics import psnr
from mwcalib.rotation import EulerPTR, euler_to_matrix
from mwcalib.synthesis import (
    GroundTruth,
    SampleConfig,
    bilinear_sample,
    direction_to_pano_xy,
    generate_sample,
    gt_keypoints,
    oracle_detect,
    pano_xy_to_direction,
    recover_image,
    render_face_from_panorama,
    render_fisheye,
    sample_params,
)

from conftest import make_panorama


class TestPanoramaGeometry:
    def test_axis_points_project_to_their_table_coordinates(self):
        # the four horizon rows of the label table are exact equirectangular
        # projections of their directions
        from mwcalib.manhattan import panorama_coord

        W, H = 512, 256
        for label in (L.FRONT, L.LEFT, L.RIGHT):
            x, y = direction_to_pano_xy(direction_of(label), W, H)
            assert (x, y) == pytest.approx(panorama_coord(label, W, H), abs=1e-9)
        x, _ = direction_to_pano_xy(direction_of(L.BACK), W, H)
        assert min(x, W - x) == pytest.approx(0.0, abs=1e-9)

    def test_xy_direction_round_trip(self, rng):
        W, H = 512, 256
        x = rng.uniform(0, W, size=300)
        y = rng.uniform(1.0, H - 1.0, size=300)
        dirs = pano_xy_to_direction(x, y, W, H)
        np.testing.assert_allclose(np.linalg.norm(dirs, axis=-1), 1.0, atol=1e-12)
        x2, y2 = direction_to_pano_xy(dirs, W, H)
        np.testing.assert_allclose(np.mod(x2 - x + W / 2, W) - W / 2, 0.0, atol=1e-9)
        np.testing.assert_allclose(y2, y, atol=1e-9)

    def test_bilinear_wraps_horizontally(self):
        img = np.zeros((4, 8, 3))
        img[:, 0] = 10.0
        img[:, 7] = 30.0
        val = bilinear_sample(img, np.array([7.5]), np.array([1.0]), wrap_x=True)
        np.testing.assert_allclose(val[0], [20.0, 20.0, 20.0])


class TestRenderFisheye:
    def test_constant_pano_gives_constant_disk(self, params_distorted):
        pano = np.full((128, 256, 3), 77, dtype=np.uint8)
        img = render_fisheye(pano, params_distorted, np.eye(3))
        from mwcalib.camera import backproject_grid

        _, valid = backproject_grid(params_distorted)
        assert np.all(img[valid] == 77)
        assert np.all(img[~valid] == 0)

    def test_front_pixel_color(self, panorama, params224):
        # the forward direction shows the panorama center under identity
        img = render_fisheye(panorama, params224, np.eye(3))
        h, w = panorama.shape[:2]
        expected = panorama[h // 2, w // 2]
        center = img[112, 112]
        assert np.max(np.abs(center.astype(int) - expected.astype(int))) <= 2

    def test_pan_shift_equivariance(self, params_distorted):
        pano = make_panorama(360)  # W = 720: a 10-degree pan is exactly 20 px
        shift = int(round(10.0 / 360.0 * 720))
        panned = render_fisheye(pano, params_distorted, EulerPTR(10.0, 0.0, 0.0))
        rolled = render_fisheye(
            np.roll(pano, shift, axis=1), params_distorted, EulerPTR(0.0, 0.0, 0.0)
        )
        diff = np.abs(panned.astype(float) - rolled.astype(float))
        assert diff.mean() < 2.0  # mean abs diff below 2/255


class TestGtKeypoints:
    def test_identity_front_at_center(self, params224):
        points, applied, _ = gt_keypoints(params224, np.eye(3))
        assert not applied
        front = next(p for p in points if p.label is L.FRONT)
        assert front.u == pytest.approx(112.0, abs=1e-9)
        assert front.v == pytest.approx(112.0, abs=1e-9)

    def test_no_back_in_output(self, params224, rng):
        for _ in range(50):
            euler = EulerPTR(rng.uniform(-180, 180), rng.uniform(-45, 45), rng.uniform(-45, 45))
            points, _, _ = gt_keypoints(params224, euler)
            assert all(p.label is not L.BACK for p in points)

    def test_pan_180_alignment_gives_front(self):
        params = CameraParams(f=5.0, k1=0.0, image_w=224, image_h=224)
        points, applied, rot = gt_keypoints(params, EulerPTR(180.0, 0.0, 0.0))
        assert applied
        labels = {p.label for p in points}
        assert L.FRONT in labels
        # the adjusted rotation keeps pan within the aligned range
        from mwcalib.rotation import matrix_to_euler

        euler = matrix_to_euler(rot)[0]
        assert abs(euler.pan) <= 90.0 + 1e-9

    def test_reprojection_invariant(self, rng):
        # keypoints remain exact projections of their labels under the
        # adjusted rotation, aligned or not
        cfg = SampleConfig()
        for _ in range(100):
            params, euler = sample_params(rng, cfg)
            points, _, rot = gt_keypoints(params, euler)
            for p in points:
                uv, vis = project(direction_of(p.label), params, rot)
                assert vis
                assert math.hypot(uv[0] - p.u, uv[1] - p.v) < 1e-6

    def test_axis_histogram(self, rng):
        counts = np.zeros(8, dtype=int)
        cfg = SampleConfig()
        for _ in range(1000):
            params, euler = sample_params(rng, cfg)
            points, _, _ = gt_keypoints(params, euler)
            counts[count_unique_axes(p.label for p in points)] += 1
        print("unique-axis histogram (0..7):", counts.tolist())
        assert counts[0] == 0
        assert counts.sum() == 1000


class TestSampleParams:
    def test_reproducible(self):
        a = sample_params(np.random.default_rng(7))
        b = sample_params(np.random.default_rng(7))
        assert a[0] == b[0]
        assert a[1] == b[1]

    def test_ranges(self, rng):
        cfg = SampleConfig()
        f_lo, f_hi = cfg.resolved_f_range()
        for _ in range(2000):
            params, euler = sample_params(rng, cfg)
            assert f_lo <= params.f <= f_hi
            assert -0.1 <= params.k1 <= 0.1
            assert -90.0 <= euler.pan <= 90.0
            assert -45.0 <= euler.tilt <= 45.0
            assert -45.0 <= euler.roll <= 45.0

    def test_default_f_range_rule(self):
        cfg = SampleConfig()
        f_lo, f_hi = cfg.resolved_f_range()
        assert f_lo == pytest.approx(0.5 * 12.0 / cfg.eta_cap)
        assert f_hi == pytest.approx(1.2 * 12.0 / cfg.eta_cap)

    def test_empty_range_errors(self, rng):
        cfg = SampleConfig(k1_range=(0.2, 0.1))
        with pytest.raises(ValueError):
            sample_params(rng, cfg)

    def test_two_axes_fraction(self, rng):
        cfg = SampleConfig()
        good = 0
        n = 10000
        for _ in range(n):
            gt = generate_sample(rng, cfg)
            if count_unique_axes(p.label for p in gt.keypoints) >= 2:
                good += 1
        frac = good / n
        print(f"fraction with >=2 unique axes: {frac:.4f}")
        assert frac >= 0.95


class TestOracleDetect:
    def test_noiseless_identity(self, rng):
        gt = generate_sample(rng, SampleConfig())
        dets = oracle_detect(gt, noise_sigma=0.0, dropout=0.0, rng=rng)
        assert [(d.label, d.u, d.v) for d in dets] == [
            (k.label, k.u, k.v) for k in gt.keypoints
        ]
        assert all(d.score == 1.0 for d in dets)

    def test_rayleigh_mean_distance(self, rng):
        gt = GroundTruth(
            params=CameraParams(f=12.0, k1=0.0, image_w=224, image_h=224),
            euler=EulerPTR(0.0, 0.0, 0.0),
            keypoints=[],
        )
        from mwcalib.manhattan import Detection

        gt.keypoints = [Detection(L.FRONT, 112.0, 112.0)] * 10000
        dets = oracle_detect(gt, noise_sigma=3.1, dropout=0.0, rng=rng)
        dists = [math.hypot(d.u - 112.0, d.v - 112.0) for d in dets]
        expected = 3.1 * math.sqrt(math.pi / 2.0)
        assert np.mean(dists) == pytest.approx(expected, rel=0.02)

    def test_full_dropout(self, rng):
        gt = generate_sample(rng, SampleConfig())
        assert oracle_detect(gt, noise_sigma=0.0, dropout=1.0, rng=rng) == []

    def test_dropout_rate(self, rng):
        gt = generate_sample(np.random.default_rng(3), SampleConfig())
        kept = sum(
            len(oracle_detect(gt, dropout=0.3, rng=rng)) for _ in range(2000)
        ) / (2000 * len(gt.keypoints))
        assert kept == pytest.approx(0.7, abs=0.03)

    def test_validation(self, rng):
        gt = generate_sample(rng, SampleConfig())
        with pytest.raises(ValueError):
            oracle_detect(gt, noise_sigma=-1.0)
        with pytest.raises(ValueError):
            oracle_detect(gt, dropout=1.5)


class TestRecoverImage:
    def test_front_face_matches_pinhole_oracle(self, panorama):
        params = CameraParams(f=7.0, k1=-0.03, image_w=224, image_h=224)
        euler = EulerPTR(20.0, -10.0, 15.0)
        fisheye = render_fisheye(panorama, params, euler)
        recovered = recover_image(fisheye, params, euler, face="front", out_fov_deg=80.0)
        oracle = render_face_from_panorama(panorama, face="front", out_fov_deg=80.0)
        diff = np.abs(recovered.astype(float) - oracle.astype(float))
        assert diff.mean() < 3.0
        assert psnr(recovered, oracle) >= 30.0

    def test_rotation_consistency_left_vs_panned_front(self, panorama):
        # one fisheye image: assuming a pan and asking for the front face
        # equals assuming identity and asking for the side face
        params = CameraParams(f=6.0, k1=0.02, image_w=224, image_h=224)
        fisheye = render_fisheye(panorama, params, np.eye(3))
        left_identity = recover_image(
            fisheye, params, EulerPTR(0.0, 0.0, 0.0), face="left", out_fov_deg=70.0
        )
        front_panned = recover_image(
            fisheye, params, EulerPTR(-90.0, 0.0, 0.0), face="front", out_fov_deg=70.0
        )
        np.testing.assert_allclose(
            left_identity.astype(float), front_panned.astype(float), atol=1.0
        )

    def test_face_out_of_fov(self, panorama):
        params = CameraParams(f=7.0, k1=0.0, image_w=224, image_h=224)
        fisheye = render_fisheye(panorama, params, np.eye(3))
        with pytest.raises(OutOfFovError):
            recover_image(fisheye, params, EulerPTR(0.0, 80.0, 0.0), face="top")

    def test_face_name_validation(self, panorama, params224):
        fisheye = render_fisheye(panorama, params224, np.eye(3))
        with pytest.raises(ValueError):
            recover_image(fisheye, params224, np.eye(3), face="back")


class TestDeterminism:
    def test_generate_sample_bitwise(self):
        a = generate_sample(np.random.default_rng(np.random.SeedSequence([9, 3])))
        b = generate_sample(np.random.default_rng(np.random.SeedSequence([9, 3])))
        assert a.to_dict() == b.to_dict()

    def test_sidecar_json_round_trip(self, rng):
        gt = generate_sample(rng, SampleConfig())
        back = GroundTruth.from_dict(gt.to_dict())
        assert back.to_dict() == gt.to_dict()
