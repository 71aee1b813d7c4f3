import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sliceinterp.metrics import (
    MetricsReport,
    SampleRecord,
    aggregate,
    psnr,
    read_graymap,
    ssim,
    ssim_map,
    write_graymap,
)


def naive_ssim_windows(x, y, size=11, sigma=1.5, k1=0.01, k2=0.03, L=1.0):
    """Per-window SSIM by explicit loops with a 2-d Gaussian built from its own formula."""
    c = np.arange(size) - size // 2
    w = np.exp(-(c[:, None] ** 2 + c[None, :] ** 2) / (2 * sigma**2))
    w /= w.sum()
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    H, W = x.shape
    out = np.empty((H - size + 1, W - size + 1))
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            px, py = x[i : i + size, j : j + size], y[i : i + size, j : j + size]
            mx, my = (w * px).sum(), (w * py).sum()
            vx = (w * (px - mx) ** 2).sum()
            vy = (w * (py - my) ** 2).sum()
            cov = (w * (px - mx) * (py - my)).sum()
            out[i, j] = ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2))
    return out


@pytest.mark.parametrize("seed", range(50))
def test_ssim_matches_naive_oracle(seed):
    rng = np.random.default_rng(seed)
    x = rng.random((32, 32))
    y = np.clip(x + rng.normal(0, rng.uniform(0.01, 0.5), x.shape), 0, 1) if seed % 2 else rng.random((32, 32))
    assert abs(ssim(x, y) - naive_ssim_windows(x, y).mean()) < 1e-7


def test_ssim_map_matches_oracle_on_reflected_image():
    rng = np.random.default_rng(3)
    x, y = rng.random((20, 24)), rng.random((20, 24))
    px, py = np.pad(x, 5, mode="symmetric"), np.pad(y, 5, mode="symmetric")
    m = ssim_map(x, y)
    assert m.shape == x.shape
    np.testing.assert_allclose(m, naive_ssim_windows(px, py), atol=1e-7)


def test_ssim_identical_is_one():
    x = np.random.default_rng(0).random((16, 16))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(ssim_map(x, x), 1.0, atol=1e-12)


def test_ssim_small_image_rejected():
    with pytest.raises(ValueError):
        ssim(np.zeros((10, 32)), np.zeros((10, 32)))


def test_ssim_shape_mismatch():
    with pytest.raises(ValueError):
        ssim(np.zeros((16, 16)), np.zeros((16, 17)))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (12, 13), elements=st.floats(0, 1)), arrays(np.float64, (12, 13), elements=st.floats(0, 1)))
def test_ssim_symmetric_and_bounded(x, y):
    s = ssim(x, y)
    assert s == pytest.approx(ssim(y, x), abs=1e-12)
    assert -1 - 1e-9 <= s <= 1 + 1e-9


def test_psnr_analytic_cases():
    a = np.zeros((8, 8))
    assert abs(psnr(a + 0.1, a) - 20.0) < 1e-9
    assert abs(psnr(a, a + 1.0) - 0.0) < 1e-9
    assert psnr(a, a) == 100.0


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-3, 1.0))
def test_psnr_constant_offset_formula(d):
    a = np.zeros((4, 4))
    assert psnr(a + d, a) == pytest.approx(min(100.0, -20 * math.log10(d)), abs=1e-9)


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros(3), np.zeros(4))


def test_aggregate():
    m, s = aggregate([1, 2, 3])
    assert m == 2.0 and s == pytest.approx(math.sqrt(2 / 3))
    assert aggregate([5.0]) == (5.0, 0.0)
    with pytest.raises(ValueError):
        aggregate([])


def test_report_csv_and_summary():
    rep = MetricsReport("unet", 1, [SampleRecord("P001", 3, 30.123456789, 0.9), SampleRecord("P002", 4, 100.0, 1.0)])
    lines = rep.to_csv().split("\n")
    assert lines[0] == "method,k,patient_id,slice_index,psnr_db,ssim"
    assert lines[1] == "unet,1,P001,3,30.1235,0.9"
    assert len([l for l in lines if l]) == 3 and "\r" not in rep.to_csv()
    assert rep.summary_line() == "unet k=1 PSNR 65.06±34.94 SSIM 0.9500±0.0500"


def test_summary_reference_rendering():
    class Fixed(MetricsReport):
        psnr = (30.08, 3.33)
        ssim = (0.8978, 0.0542)

    assert Fixed("unet", 1).summary_line() == "unet k=1 PSNR 30.08±3.33 SSIM 0.8978±0.0542"


def test_graymap_identical_all_white(tmp_path):
    x = np.random.default_rng(1).random((16, 20))
    write_graymap(ssim_map(x, x), tmp_path / "m.pgm")
    pix = read_graymap(tmp_path / "m.pgm")
    assert pix.shape == (16, 20) and (pix == 255).all()
    assert (tmp_path / "m.pgm").read_bytes().startswith(b"P5\n20 16\n255\n")
