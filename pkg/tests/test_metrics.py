import numpy as np
import pytest

from srmkit.metrics import (evaluate, image_errors, nearest_view_angle, relative_albedo_error, srm_error,
                            texel_energy)
from srmkit.synth import RingRig


def test_identical_images(rng):
    img = rng.uniform(size=(8, 8, 3))
    l1, l2, psnr = image_errors(img, img)
    assert l1 == 0 and l2 == 0 and psnr == float("inf")


def test_half_versus_zero_masked(rng):
    mask = rng.uniform(size=(8, 8)) > 0.5
    a = np.where(mask[..., None], 0.5, rng.uniform(size=(8, 8, 3)))
    l1, l2, psnr = image_errors(a, np.zeros((8, 8, 3)), mask)
    assert l1 == 0.5 and l2 == 0.5
    assert psnr == pytest.approx(20 * np.log10(2))


def test_psnr_finite_on_different_images(rng):
    a = rng.uniform(size=(4, 4, 3))
    assert np.isfinite(image_errors(a, a + 1e-3)[2])


def test_size_mismatch():
    with pytest.raises(ValueError):
        image_errors(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))
    with pytest.raises(ValueError):
        evaluate([np.zeros((4, 4, 3))], [])


def test_view_angle():
    cams = RingRig(count=8).cameras()
    assert nearest_view_angle(cams[3], cams[:4], np.zeros(3)) == pytest.approx(0.0, abs=1e-6)
    # ring views are 45 degrees apart in azimuth at 20 degrees elevation
    expected = np.degrees(np.arccos(np.cos(np.radians(20)) ** 2 * np.cos(np.pi / 4) + np.sin(np.radians(20)) ** 2))
    assert nearest_view_angle(cams[4], cams[:4], np.zeros(3)) == pytest.approx(expected, rel=1e-9)


def test_evaluate_report(rng):
    cams = RingRig(count=4, width=4, height=4).cameras()
    gt = [rng.uniform(size=(4, 4, 3)) for _ in range(2)]
    rep = evaluate([g + 0.1 for g in gt], gt, cameras=cams[2:], train_cameras=cams[:2], centroid=np.zeros(3),
                   frame_ids=["a", "b"])
    assert rep.mean_l1 == pytest.approx(0.1) and rep.mean_l2 == pytest.approx(0.1)
    assert [r["frame_id"] for r in rep.rows()] == ["a", "b"]
    assert all(f.angle_deg >= 0 for f in rep.frames)


def test_srm_error_and_energy():
    truth = np.zeros((2, 4, 3))
    rec = np.zeros((2, 4, 3))
    rec[0, 0] = [3.0, 4.0, 0.0]
    mask = np.zeros((2, 4), bool)
    mask[0, :2] = True
    assert srm_error(rec, truth, mask) == pytest.approx(2.5)
    assert texel_energy(rec, mask) == pytest.approx(25.0 / 6)
    with pytest.raises(ValueError):
        srm_error(rec, truth, np.zeros((2, 4), bool))


def test_relative_albedo_error():
    truth = np.array([[1.0, 1.0, 1.0], [0.5, 0.5, 0.5]])
    est = truth * [[1.1], [1.0]]
    assert relative_albedo_error(est, truth) == pytest.approx(0.3 / 4.5)
    assert relative_albedo_error(est, truth, np.array([False, True])) == 0.0
