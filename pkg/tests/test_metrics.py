import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import convolve2d
from skimage.metrics import peak_signal_noise_ratio, structural_similarity
from skimage.transform import downscale_local_mean

from rissc.metrics import (
    REPORT_HEADER,
    EvalReport,
    ReportRow,
    compression_ratio,
    fmt,
    max_scales,
    ms_ssim,
    psnr,
    summarize,
    window_size,
)
from rissc.ris_layers import ModelConfig, build_model

WEIGHTS = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])


def oracle_ms_ssim(x, y, levels, size=11):
    """Straightforward MS-SSIM: 2-D valid convolution, 2x2 mean pooling."""
    t = np.arange(size) - (size - 1) / 2
    g = np.exp(-t**2 / 4.5)
    win = np.outer(g, g) / np.outer(g, g).sum()
    c1, c2 = 0.01**2, 0.03**2
    w = WEIGHTS[:levels] / WEIGHTS[:levels].sum()
    out = 1.0
    for lvl in range(levels):
        f = lambda a: convolve2d(a, win, mode="valid")  # noqa: E731
        mx, my = f(x), f(y)
        vx, vy, cxy = f(x * x) - mx**2, f(y * y) - my**2, f(x * y) - mx * my
        cs = (2 * cxy + c2) / (vx + vy + c2)
        if lvl == levels - 1:
            term = np.mean((2 * mx * my + c1) / (mx**2 + my**2 + c1) * cs)
        else:
            term = np.mean(cs)
            x, y = downscale_local_mean(x, (2, 2)), downscale_local_mean(y, (2, 2))
        out *= max(term, 0.0) ** w[lvl]
    return out


def smooth_image(rng, n):
    base = rng.random((n // 4, n // 4))
    return np.kron(base, np.ones((4, 4))) * 0.8 + 0.2 * rng.random((n, n))


class TestPsnr:
    def test_identical(self):
        assert psnr(np.ones((4, 4)), np.ones((4, 4))) == math.inf

    def test_twenty_db(self):
        ref = np.zeros(100)
        est = np.full(100, 0.1)
        assert psnr(ref, est) == pytest.approx(20.0, abs=1e-12)

    def test_inverted_binary(self):
        ref = np.array([[0.0, 1.0], [1.0, 0.0]])
        assert psnr(ref, 1 - ref) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros(3), np.zeros(4))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_against_skimage(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.random((16, 16)), rng.random((16, 16))
        assert psnr(a, b) == pytest.approx(peak_signal_noise_ratio(a, b, data_range=1.0), abs=1e-10)

    @given(st.floats(1e-6, 1.0), st.floats(1e-6, 1.0))
    def test_strictly_decreasing_in_mse(self, m1, m2):
        if m1 == m2:
            return
        p1, p2 = psnr([0.0], [math.sqrt(m1)]), psnr([0.0], [math.sqrt(m2)])
        assert (p1 > p2) == (m1 < m2)


class TestMsSsim:
    def test_identical(self):
        img = smooth_image(np.random.default_rng(0), 32)
        assert ms_ssim(img, img) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("side, scales", [(11, 1), (16, 1), (21, 1), (22, 2), (32, 2), (44, 3), (88, 4), (176, 5), (256, 5)])
    def test_scale_reduction(self, side, scales):
        # the coarsest level must still hold the 11-pixel window
        assert max_scales(side) == scales

    @pytest.mark.parametrize("side, size", [(8, 7), (9, 9), (10, 9), (3, 3)])
    def test_small_images_use_truncated_window(self, side, size):
        assert window_size(side) == size
        rng = np.random.default_rng(side)
        a = rng.random((side, side))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        assert ms_ssim(a, b) == pytest.approx(oracle_ms_ssim(a, b, 1, size), abs=1e-12)
        assert ms_ssim(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ms_ssim(np.zeros((16, 16)), np.zeros((16, 17)))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_single_scale_matches_skimage(self, seed):
        rng = np.random.default_rng(seed)
        a = smooth_image(rng, 16)
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        ref = structural_similarity(a, b, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                    use_sample_covariance=False)
        assert ms_ssim(a, b) == pytest.approx(max(ref, 0.0), abs=1e-12)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([32, 64, 96]))
    def test_multiscale_matches_oracle(self, seed, side):
        rng = np.random.default_rng(seed)
        a = smooth_image(rng, side)
        b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
        assert ms_ssim(a, b) == pytest.approx(oracle_ms_ssim(a, b, max_scales(side)), abs=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_symmetric_and_bounded(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.random((32, 32)), rng.random((32, 32))
        v = ms_ssim(a, b)
        assert v == ms_ssim(b, a)
        assert 0.0 <= v <= 1.0

    def test_natural_image_vs_noise(self):
        from skimage.data import camera

        img = camera()[::8, ::8] / 255.0
        noise = np.random.default_rng(0).random(img.shape)
        assert ms_ssim(img, noise) < 0.2

    def test_one_only_when_identical(self):
        img = smooth_image(np.random.default_rng(2), 32)
        other = img.copy()
        other[5, 5] += 0.01
        assert ms_ssim(img, other) < 1.0 - 1e-9

    def test_color_averages_channels(self):
        rng = np.random.default_rng(3)
        a = rng.random((16, 16, 3))
        b = np.clip(a + 0.1 * rng.random((16, 16, 3)), 0, 1)
        per = [ms_ssim(a[..., c], b[..., c]) for c in range(3)]
        assert ms_ssim(a, b) == pytest.approx(np.mean(per), abs=1e-15)


class TestCompressionRatio:
    class Stub:
        def __init__(self, tx, src):
            self.tx_atoms, self.source_dims = tx, src

    @pytest.mark.parametrize("tx, ratio", [(3072, 1.0), (512, 1 / 6), (256, 1 / 12), (1024, 1 / 3)])
    def test_cifar_accounting(self, tx, ratio):
        assert compression_ratio(self.Stub(tx, 3072)) == pytest.approx(ratio, abs=1e-15)

    def test_independent_of_hidden_layers(self):
        a = build_model((8, 8, 1), ModelConfig(layers_per_coder=2), tx_grid=(4, 4))
        b = build_model((8, 8, 1), ModelConfig(layers_per_coder=5), tx_grid=(4, 4))
        assert compression_ratio(a) == compression_ratio(b) == 0.25

    def test_explicit_source_dims(self):
        assert compression_ratio(self.Stub(42, 256), source_dims=84) == 0.5


class TestReport:
    def test_csv_layout(self):
        rep = EvalReport([ReportRow(19.0, 25.5, 1.25, 0.5, 0.125, 1 / 6, 10, 0)])
        lines = rep.to_csv().splitlines()
        assert lines[0] == ",".join(REPORT_HEADER)
        assert lines[1] == "19.0,25.5,1.25,0.5,0.125,0.16666666666666666,10,0"

    def test_prefix_columns(self):
        rep = EvalReport([ReportRow(1.0, 2.0, 0.0, 0.5, 0.0, 0.5, 1, 3)])
        text = rep.to_csv(["axis", "axis_value"], ["cr", "0.5"])
        assert text.splitlines()[0].startswith("axis,axis_value,snr_test_db")

    def test_row_needs_images(self):
        with pytest.raises(ValueError):
            ReportRow(0.0, 1.0, 0.0, 0.5, 0.0, 0.5, 0, 0)

    def test_row_lookup(self):
        rep = EvalReport([ReportRow(5.0, 1.0, 0.0, 0.5, 0.0, 0.5, 1, 0)])
        assert rep.row_at(5.0).psnr_db_mean == 1.0
        with pytest.raises(KeyError):
            rep.row_at(6.0)

    @pytest.mark.parametrize("v, text", [(1e-10, "1e-10"), (3, "3"), (True, "1"), (np.float64(0.1), "0.1"), ("x", "x")])
    def test_fmt(self, v, text):
        assert fmt(v) == text

    def test_summarize(self):
        assert summarize([1.0, 3.0]) == (2.0, 1.0)
        assert summarize([1.0, math.inf]) == (math.inf, 0.0)
