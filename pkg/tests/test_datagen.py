import numpy as np
import pytest

from armacell.datagen import (
    DgpSpec,
    VideoSpec,
    generate_video,
    read_series_csv,
    render_square_frames,
    sgn,
    simulate,
    simulate_from_noise,
    simulate_with_innovations,
    split,
    write_series_csv,
)
from armacell.tensor import Tensor


def arma21_acf_oracle(beta, gamma, lags, terms=400):
    """ACF from the moving-average representation psi[j]."""
    p, q = len(beta), len(gamma)
    psi = np.zeros(terms)
    psi[0] = 1.0
    for j in range(1, terms):
        v = gamma[j - 1] if j <= q else 0.0
        for i in range(1, min(j, p) + 1):
            v += beta[i - 1] * psi[j - i]
        psi[j] = v
    cov = [float(np.sum(psi[: terms - h] * psi[h:])) for h in range(max(lags) + 1)]
    return np.array([cov[h] / cov[0] for h in lags])


def sample_acf(x, lags):
    x = x - x.mean()
    denom = float(np.sum(x * x))
    return np.array([float(np.sum(x[:-h] * x[h:])) / denom for h in lags])


def binary_ce(pred, target, floor=1e-7):
    p = np.clip(pred, floor, 1 - floor)
    return float(-np.mean(target * np.log(p) + (1 - target) * np.log(1 - p)))


class TestRecursions:
    def test_sgn_step_values(self):
        x = simulate_from_noise(DgpSpec("sgn"), np.array([-0.5, 0.3])).array[:, 0]
        assert x[0] == -0.5  # sgn(0) = 0 plus the first draw
        assert x[1] == pytest.approx(sgn(-0.5) + 0.3)
        assert x[1] == pytest.approx(-0.7)

    def test_sgn_of_zero_is_zero(self):
        assert sgn(0.0) == 0.0

    def test_nar_zero_case(self):
        x = simulate_from_noise(DgpSpec("nar"), np.array([0.0])).array[:, 0]
        assert x[0] == 0.0

    def test_tar_regime_switch(self):
        eps = np.array([0.5, 2.0, 1.0])
        x = simulate_from_noise(DgpSpec("tar"), eps).array[:, 0]
        assert x[0] == 0.5
        assert x[1] == pytest.approx(0.9 * 0.5 + 2.0)      # |x0| <= 1: inner slope
        assert x[2] == pytest.approx(-0.3 * x[1] + 1.0)    # |x1| > 1: outer slope

    def test_arma21_recursion_literal(self):
        eps = np.array([1.0, -0.5, 0.25, 0.8])
        x = simulate_from_noise(DgpSpec("arma"), eps).array[:, 0]
        expect = np.zeros(4)
        for t in range(4):
            v = eps[t]
            if t >= 1:
                v += 0.1 * expect[t - 1] - 0.4 * eps[t - 1]
            if t >= 2:
                v += 0.3 * expect[t - 2]
            expect[t] = v
        assert np.allclose(x, expect, atol=1e-14)

    def test_hetero_ma2_includes_cross_term(self):
        eps = np.array([0.5, -1.0, 2.0, 0.3])
        x = simulate_from_noise(DgpSpec("hetero_ma2"), eps).array[:, 0]
        expect = [
            0.5,
            -1.0 - 0.4 * 0.5,
            2.0 - 0.4 * (-1.0) + 0.3 * 0.5 + 0.5 * 2.0 * 0.5,
            0.3 - 0.4 * 2.0 + 0.3 * (-1.0) + 0.5 * 0.3 * (-1.0),
        ]
        assert np.allclose(x, expect, atol=1e-14)

    def test_varma_matrices_applied(self):
        eps = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, -0.5]])
        x = simulate_from_noise(DgpSpec("varma"), eps).array
        b = np.array([[0.1, -0.2], [-0.2, 0.1]])
        g = np.array([[-0.4, 0.2], [0.2, -0.4]])
        expect = np.zeros((3, 2))
        for t in range(3):
            v = eps[t].copy()
            if t >= 1:
                v = v + b @ expect[t - 1] + g @ eps[t - 1]
            expect[t] = v
        assert np.allclose(x, expect, atol=1e-14)

    def test_sq_exp_cross_structure(self):
        eps = np.array([[1.0, 0.5], [0.2, -0.1]])
        x_sq = simulate_from_noise(DgpSpec("sq"), eps).array
        assert x_sq[0, 0] == 1.0
        assert x_sq[0, 1] == pytest.approx(1.0**2 + 0.5)
        assert x_sq[1, 0] == pytest.approx(0.6 * 1.0 + 0.2)
        assert x_sq[1, 1] == pytest.approx(x_sq[1, 0] ** 2 - 0.1)
        x_exp = simulate_from_noise(DgpSpec("exp"), eps).array
        assert x_exp[1, 1] == pytest.approx(np.exp(x_exp[1, 0]) - 0.1)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="unknown generating process"):
            DgpSpec("garch")

    def test_unknown_coefficient_rejected(self):
        with pytest.raises(ValueError, match="unknown coefficients"):
            DgpSpec("arma", {"rho": 0.5})

    def test_nonpositive_n_rejected(self):
        with pytest.raises(ValueError, match="n >= 1"):
            simulate(DgpSpec("arma"), 0, seed=1)


class TestStatisticalProperties:
    def test_arma21_acf_matches_analytic(self):
        x = simulate(DgpSpec("arma"), 100_000, seed=12).array[:, 0]
        lags = [1, 2, 3, 4, 5]
        got = sample_acf(x, lags)
        want = arma21_acf_oracle([0.1, 0.3], [-0.4], lags)
        assert np.max(np.abs(got - want)) < 0.01

    def test_determinism(self):
        a = simulate(DgpSpec("tar"), 500, seed=99).array
        b = simulate(DgpSpec("tar"), 500, seed=99).array
        assert np.array_equal(a, b)
        c = simulate(DgpSpec("tar"), 500, seed=100).array
        assert not np.array_equal(a, c)

    @pytest.mark.parametrize("kind", ["arma", "varma"])
    def test_stationarity_halves(self, kind):
        x = simulate(DgpSpec(kind), 100_000, seed=4).array
        first, second = x[:50_000], x[50_000:]
        assert np.max(np.abs(first.mean(axis=0) - second.mean(axis=0))) < 0.05

    @pytest.mark.parametrize("kind,fn", [("sq", np.square), ("exp", np.exp)])
    def test_pair_regression_slope(self, kind, fn):
        x = simulate(DgpSpec(kind), 10_000, seed=21).array
        feats = np.column_stack([np.ones(len(x)), fn(x[:, 0])])
        coef, *_ = np.linalg.lstsq(feats, x[:, 1], rcond=None)
        assert abs(coef[1] - 1.0) < 0.05

    def test_innovations_align_with_series(self):
        spec = DgpSpec("arma")
        x, eps = simulate_with_innovations(spec, 200, seed=3)
        assert x.shape == (200, 1) and eps.shape == (200, 1)


class TestSplit:
    def test_paper_fractions(self):
        data = Tensor(np.arange(1000.0)[:, None])
        train, val, test = split(data)
        assert (len(train), len(val), len(test)) == (490, 210, 300)

    def test_floor_then_remainder(self):
        train, val, test = split(Tensor(np.arange(10.0)[:, None]))
        assert (len(train), len(val), len(test)) == (4, 3, 3)

    def test_concatenation_identity(self):
        data = np.random.default_rng(0).normal(size=(137, 2))
        train, val, test = split(Tensor(data))
        back = np.vstack([train.array, val.array, test.array])
        assert np.array_equal(back, data)

    def test_empty_split_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            split(Tensor(np.arange(2.0)[:, None]))


class TestVideo:
    def test_static_scene(self):
        spec = VideoSpec(kind="noisy", n_frames=5, speed_range=(0, 0),
                         noise_std=0.0, seed=7)
        inputs, targets = generate_video(spec, 4)
        frames = inputs.array
        for i in range(4):
            for t in range(1, 5):
                assert np.array_equal(frames[i, t], frames[i, 0])
        baseline = frames[:, -1]
        assert binary_ce(baseline, targets.array) < 1e-5

    def test_unit_speed_is_translation(self):
        frames = render_square_frames(20, 20, [(8, 3, 4, 0, 1)], 6)
        for t in range(5):
            assert np.array_equal(frames[t + 1], np.roll(frames[t], 1, axis=1))

    def test_default_noisy_baseline_ce_bracket(self):
        spec = VideoSpec(seed=5)
        inputs, targets = generate_video(spec, 100)
        baseline = inputs.array[:, -1]
        ce = binary_ce(baseline, targets.array)
        assert 0.5 <= ce <= 2.0, ce

    def test_pixel_range_and_determinism(self):
        spec = VideoSpec(seed=11)
        a_in, a_tgt = generate_video(spec, 3)
        b_in, b_tgt = generate_video(spec, 3)
        assert np.array_equal(a_in.array, b_in.array)
        assert np.array_equal(a_tgt.array, b_tgt.array)
        assert a_in.array.min() >= 0.0 and a_in.array.max() <= 1.0
        assert set(np.unique(a_tgt.array)) <= {0.0, 1.0}

    def test_shifted_variant_targets_one_step_further(self):
        noisy = VideoSpec(kind="noisy", noise_std=0.0, seed=13)
        shifted = VideoSpec(kind="shifted", noise_std=0.0, seed=13)
        _, tgt_noisy = generate_video(noisy, 5)
        _, tgt_shift = generate_video(shifted, 5)
        assert not np.array_equal(tgt_noisy.array, tgt_shift.array)

    def test_geometry_violations(self):
        with pytest.raises(ValueError, match="cannot fit"):
            VideoSpec(height=6, width=6, size_range=(4, 8))
        with pytest.raises(ValueError, match="at least 2 frames"):
            VideoSpec(n_frames=1)


class TestCsv:
    def test_round_trip_univariate(self, tmp_path):
        series = simulate(DgpSpec("arma"), 50, seed=1)
        path = tmp_path / "series.csv"
        write_series_csv(path, series)
        header = path.read_text().splitlines()[0]
        assert header == "t,x1"
        back = read_series_csv(path)
        assert np.array_equal(back.array, series.array)

    def test_round_trip_bivariate(self, tmp_path):
        series = simulate(DgpSpec("varma"), 30, seed=2)
        path = tmp_path / "series.csv"
        write_series_csv(path, series)
        assert path.read_text().splitlines()[0] == "t,x1,x2"
        back = read_series_csv(path)
        assert np.array_equal(back.array, series.array)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError, match="header"):
            read_series_csv(path)
