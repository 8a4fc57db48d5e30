import math

import numpy as np
import pytest

from dualmar.errors import ConfigurationError
from dualmar.metrics import gaussian_taps, mae, mse, relative_mse_drop, ssim

L = 4095.0


def test_identical_images(rng):
    a = rng.uniform(-1000, 1000, (32, 32))
    assert mae(a, a) == 0 and mse(a, a) == 0
    assert ssim(a, a, L) == 1.0


def test_constant_offset(rng):
    a = rng.uniform(-100, 100, (16, 16))
    assert mae(a, a + 10) == pytest.approx(10)
    assert mse(a, a + 10) == pytest.approx(100)


@pytest.mark.parametrize("seed", range(5))
def test_against_summation_oracle(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(12, 12)) * 100, rng.normal(size=(12, 12)) * 100
    roi = rng.random((12, 12)) < 0.6
    s1 = s2 = 0.0
    n = 0
    for i in range(12):
        for j in range(12):
            if roi[i, j]:
                s1 += abs(a[i, j] - b[i, j])
                s2 += (a[i, j] - b[i, j]) ** 2
                n += 1
    assert mae(a, b, roi) == pytest.approx(s1 / n, rel=1e-12)
    assert mse(a, b, roi) == pytest.approx(s2 / n, rel=1e-12)
    assert mae(a, b, roi) <= math.sqrt(mse(a, b, roi))


def test_empty_roi_and_shape_errors():
    a = np.zeros((4, 4))
    with pytest.raises(ConfigurationError):
        mae(a, a, np.zeros((4, 4), bool))
    with pytest.raises(ConfigurationError):
        mse(a, np.zeros((4, 5)))
    with pytest.raises(ConfigurationError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)), L)
    with pytest.raises(ConfigurationError):
        ssim(np.zeros((16, 16)), np.ones((16, 16)), 0.0)


def test_gaussian_window():
    g = gaussian_taps()
    assert len(g) == 11 and g.sum() == pytest.approx(1.0)
    assert g[6] / g[5] == pytest.approx(math.exp(-1 / (2 * 1.5 ** 2)))


@pytest.mark.parametrize("seed", range(5))
def test_ssim_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(-1000, 1000, (24, 30))
    b = a + rng.normal(scale=200, size=a.shape)
    s = ssim(a, b, L)
    assert s == pytest.approx(ssim(b, a, L), abs=1e-14)
    assert -1 <= s < 1


@pytest.mark.parametrize("ma,mb", [(0.0, 10.0), (40.0, -200.0), (1000.0, 1000.5)])
def test_ssim_constant_images_closed_form(ma, mb):
    a, b = np.full((20, 20), ma), np.full((20, 20), mb)
    c1 = (0.01 * L) ** 2
    expected = (2 * ma * mb + c1) / (ma ** 2 + mb ** 2 + c1)
    assert ssim(a, b, L) == pytest.approx(expected, rel=1e-9)


def ssim_loop(a, b, dr):
    """Windowed SSIM written out per window position."""
    g = gaussian_taps()
    w = np.outer(g, g)
    c1, c2 = (0.01 * dr) ** 2, (0.03 * dr) ** 2
    vals = []
    for i in range(a.shape[0] - 10):
        for j in range(a.shape[1] - 10):
            pa, pb = a[i:i + 11, j:j + 11], b[i:i + 11, j:j + 11]
            ma, mb = (w * pa).sum(), (w * pb).sum()
            va = (w * (pa - ma) ** 2).sum()
            vb = (w * (pb - mb) ** 2).sum()
            cov = (w * (pa - ma) * (pb - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_ssim_matches_window_loop(rng):
    a = rng.uniform(-100, 200, (16, 19))
    b = a + rng.normal(scale=50, size=a.shape)
    assert ssim(a, b, L) == pytest.approx(ssim_loop(a, b, L), rel=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_single_pixel_change_lowers_ssim(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(-100, 100, (24, 24))
    b = a.copy()
    b[rng.integers(0, 24), rng.integers(0, 24)] += rng.choice([-1, 1]) * rng.uniform(1, 50)
    assert ssim(a, b, L) < 1.0


def test_metrics_translate_with_padding(rng):
    a = rng.uniform(-100, 100, (20, 20))
    b = a + rng.normal(scale=10, size=a.shape)
    roi = np.zeros((20, 20), bool)
    roi[3:15, 4:17] = True
    pa, pb, proi = (np.pad(x, ((5, 2), (1, 6))) for x in (a, b, roi))
    assert mae(pa, pb, proi) == pytest.approx(mae(a, b, roi), rel=1e-12)
    assert mse(pa, pb, proi) == pytest.approx(mse(a, b, roi), rel=1e-12)
    sa = np.pad(a, 12, mode="edge")
    sb = np.pad(b, 12, mode="edge")
    shifted_a, shifted_b = np.roll(sa, (3, -2), (0, 1)), np.roll(sb, (3, -2), (0, 1))
    assert ssim(shifted_a, shifted_b, L) == pytest.approx(ssim(sa, sb, L), rel=1e-3)


def test_relative_drop_values():
    assert relative_mse_drop(3282.0, 3282.0) == 0.0
    assert relative_mse_drop(0.0, 10.0) == -100.0
    # 831 vs 3282 is a 74.68 % reduction, which rounds to -74.7
    assert relative_mse_drop(831.0, 3282.0) == pytest.approx(-74.68, abs=0.01)
    assert round(relative_mse_drop(831.0, 3282.0), 1) == -74.7
    with pytest.raises(ConfigurationError):
        relative_mse_drop(1.0, 0.0)
