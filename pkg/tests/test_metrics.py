import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from lfhybrid.lightfield import LightField
from lfhybrid.metrics import epi_ssim, evaluate, gaussian_window, psnr, ssim

unit = st.floats(0, 1, allow_nan=False)


def ssim_oracle(a, b, size=11, sigma=1.5):
    """Direct per-window SSIM with explicit weighted sums."""
    g = np.exp(-((np.arange(size) - (size - 1) / 2) ** 2) / (2 * sigma**2))
    w2 = np.outer(g, g)
    w2 /= w2.sum()
    c1, c2 = 0.01**2, 0.03**2
    H, W = a.shape
    vals = []
    for i in range(H - size + 1):
        for j in range(W - size + 1):
            pa = a[i : i + size, j : j + size]
            pb = b[i : i + size, j : j + size]
            ma, mb = (w2 * pa).sum(), (w2 * pb).sum()
            va = (w2 * (pa - ma) ** 2).sum()
            vb = (w2 * (pb - mb) ** 2).sum()
            cov = (w2 * (pa - ma) * (pb - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_psnr_examples():
    a = np.random.default_rng(0).uniform(size=(8, 8))
    assert psnr(a, a) == 100.0
    assert psnr(np.zeros((4, 4)), np.full((4, 4), 0.1)) == pytest.approx(20.0, abs=1e-9)
    b = np.random.default_rng(1).uniform(size=(8, 8))
    mse = sum((x - y) ** 2 for x, y in zip(a.ravel(), b.ravel())) / a.size
    assert psnr(a, b) == pytest.approx(10 * np.log10(1 / mse), abs=1e-9)
    with pytest.raises(ValueError):
        psnr(a, b[:4])


def test_ssim_examples():
    rng = np.random.default_rng(2)
    a = rng.uniform(size=(16, 18))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert ssim(a, 1 - a) < 1.0
    b = np.clip(a + rng.normal(scale=0.1, size=a.shape), 0, 1)
    assert ssim(a, b) == pytest.approx(ssim_oracle(a, b), abs=1e-6)
    with pytest.raises(ValueError, match="smaller"):
        ssim(a[:10], b[:10])


def test_ssim_matches_scikit_image():
    skm = pytest.importorskip("skimage.metrics")
    rng = np.random.default_rng(3)
    a = rng.uniform(size=(32, 32))
    b = np.clip(a + rng.normal(scale=0.05, size=a.shape), 0, 1)
    ref = skm.structural_similarity(a, b, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                    use_sample_covariance=False)
    assert ssim(a, b) == pytest.approx(ref, abs=1e-4)


def test_gaussian_window_normalized():
    g = gaussian_window()
    assert g.shape == (11,) and g.sum() == pytest.approx(1.0) and np.argmax(g) == 5


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (12, 12), elements=unit), arrays(np.float64, (12, 12), elements=unit))
def test_metric_symmetry_and_range(a, b):
    assert psnr(a, b) == psnr(b, a)
    s = ssim(a, b)
    assert -1 - 1e-9 <= s <= 1 + 1e-9
    assert abs(s - ssim(b, a)) < 1e-9
    assert psnr(a, a) == 100.0


def test_epi_ssim_identity_and_mirror():
    rng = np.random.default_rng(4)
    lf = LightField(rng.uniform(size=(3, 3, 1, 16, 16)))
    assert epi_ssim(lf, lf) == pytest.approx(1.0, abs=1e-12)
    views = lf.views.copy()
    views[0, 2] = views[0, 2][..., ::-1]
    assert epi_ssim(LightField(views), lf) < epi_ssim(lf, lf)
    with pytest.raises(ValueError):
        epi_ssim(lf, LightField(rng.uniform(size=(3, 3, 1, 16, 15))))


def test_evaluate_report():
    rng = np.random.default_rng(5)
    gt = LightField(rng.uniform(size=(3, 3, 1, 16, 16)))
    pred = LightField(np.clip(gt.views + rng.normal(scale=0.02, size=gt.views.shape), 0, 1))
    pred.views[1, 1] = gt.views[1, 1]
    rep = evaluate(pred, gt)
    assert rep.psnr[(1, 1)] == 100.0
    side = [rep.psnr[uv] for uv in gt.side_coords]
    assert rep.psnr_side == pytest.approx(np.mean(side))
    assert rep.psnr_all == pytest.approx(np.mean(side + [100.0]))
    assert rep.psnr_all > rep.psnr_side
    rows = rep.rows()
    assert rows[-3]["view"] == "mean_side" and rows[-1]["view"] == "epi_ssim"
    assert 0 < rep.epi_ssim < 1
