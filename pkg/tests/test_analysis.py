import numpy as np
import pytest

from fliqs.analysis import (
    ExpFit,
    SynthSpec,
    clipping_sweep,
    entropy_switch_correlation,
    fit_exponential,
    shared_threshold,
    spearman,
    switching_sweep,
    synth_tensor,
)
from fliqs.errors import AnalysisError, DomainError, FitError
from fliqs.quantize import quantize, switching_error


class TestSynthTensor:
    def test_outlier_count_and_magnitude(self):
        spec = SynthSpec(tensor_size=1000, outlier_rate=0.01, outlier_scale=3.0)
        x = synth_tensor(spec, np.random.default_rng(0))
        top = np.max(x)
        n_top = int(np.sum(x == top))
        assert n_top == 10
        rest = x[x != top]
        assert top >= 3.0 * np.max(np.abs(rest))

    def test_zero_rate_injects_nothing(self):
        spec = SynthSpec(tensor_size=200_000)
        x = synth_tensor(spec, np.random.default_rng(1))
        assert np.std(x) == pytest.approx(1.0, abs=0.02)

    def test_laplacian_matches_gaussian_variance(self):
        g = synth_tensor(SynthSpec("gaussian", 200_000), np.random.default_rng(2))
        l = synth_tensor(SynthSpec("laplacian", 200_000), np.random.default_rng(3))
        assert np.var(l) == pytest.approx(np.var(g), rel=0.03)
        # heavier tails at matched variance
        assert np.max(np.abs(l)) > np.max(np.abs(g))

    def test_spec_validation(self):
        with pytest.raises(DomainError):
            SynthSpec(distribution="cauchy")
        with pytest.raises(DomainError):
            SynthSpec(tensor_size=0)
        with pytest.raises(DomainError):
            SynthSpec(outlier_rate=1.0)

    def test_shared_threshold_positive(self):
        with pytest.raises(DomainError):
            shared_threshold(np.zeros(10))


class TestSwitchingSweep:
    SPEC = SynthSpec(tensor_size=2048)

    def test_error_decays_with_source_bitwidth(self):
        sweep = switching_sweep([4, 5, 6, 7], k2=8, spec=self.SPEC,
                                trials=200, seed=0)
        m = sweep["mean_rms"]
        assert np.all(np.diff(m) < 0)
        # roughly halves per extra bit
        ratios = m[:-1] / m[1:]
        assert np.all((ratios > 1.6) & (ratios < 2.6))

    def test_high_precision_source_converges(self):
        # by k1=20 the k1-grid is so fine that the switching error equals the
        # destination's own quantization error; pushing k1 higher moves nothing
        sweep = switching_sweep([20, 24], k2=8, spec=self.SPEC, trials=20, seed=3)
        m20, m24 = sweep["mean_rms"]
        assert abs(m20 - m24) / m24 < 1e-4

    def test_converged_value_is_pure_quantization_error(self):
        # the two quantizers share the clip, so in the k1 -> inf limit the
        # switching error is INT8's own grid rounding error on the clipped
        # tensor (clipping loss cancels out of the difference)
        x = np.random.default_rng(42).standard_normal(2048)
        t = shared_threshold(x)
        sw = switching_error(x, "INT20", "INT8", threshold=t)
        d = quantize(x, "INT8", t) - np.clip(x, -t, t)
        a = float(np.sqrt(np.mean(sw * sw)))
        b = float(np.sqrt(np.mean(d * d)))
        assert abs(a - b) / b < 1e-4

    def test_converged_sweep_matches_independent_estimate(self):
        sweep = switching_sweep([20], k2=8, spec=self.SPEC, trials=400, seed=5)
        rng = np.random.default_rng(99)
        vals = []
        for _ in range(400):
            x = rng.standard_normal(2048)
            t = shared_threshold(x)
            d = quantize(x, "INT8", t) - np.clip(x, -t, t)
            vals.append(np.sqrt(np.mean(d * d)))
        assert sweep["mean_rms"][0] == pytest.approx(np.mean(vals), rel=0.01)

    def test_more_trials_agree_within_stderr(self):
        a = switching_sweep([4, 6], k2=8, spec=self.SPEC, trials=300, seed=1)
        b = switching_sweep([4, 6], k2=8, spec=self.SPEC, trials=600, seed=2)
        gap = np.abs(a["mean_rms"] - b["mean_rms"])
        assert np.all(gap < 2.0 * (a["stderr"] + b["stderr"]))

    def test_single_trial_has_zero_stderr(self):
        sweep = switching_sweep([4], k2=8, spec=self.SPEC, trials=1, seed=0)
        assert sweep["stderr"][0] == 0.0

    def test_deterministic_per_seed(self):
        a = switching_sweep([4], 8, self.SPEC, trials=5, seed=7)
        b = switching_sweep([4], 8, self.SPEC, trials=5, seed=7)
        assert np.array_equal(a["mean_rms"], b["mean_rms"])

    def test_bad_trials(self):
        with pytest.raises(DomainError):
            switching_sweep([4], 8, self.SPEC, trials=0)


class TestExponentialFit:
    def test_recovers_exact_parameters(self):
        xs = np.arange(4, 12, dtype=np.float64)
        ys = 2.0 * np.exp(-0.5 * xs) + 0.1
        fit = fit_exponential(xs, ys)
        assert fit.a == pytest.approx(2.0, abs=1e-6)
        assert fit.b == pytest.approx(0.5, abs=1e-6)
        assert fit.c == pytest.approx(0.1, abs=1e-6)
        assert fit.residual < 1e-8
        assert fit.r_squared(xs, ys) == pytest.approx(1.0, abs=1e-9)

    def test_order_invariant(self):
        xs = np.array([4.0, 8.0, 5.0, 7.0, 6.0, 9.0])
        ys = 1.5 * np.exp(-0.4 * xs) + 0.05
        f1 = fit_exponential(xs, ys)
        f2 = fit_exponential(xs[::-1].copy(), ys[::-1].copy())
        assert f1.a == pytest.approx(f2.a, rel=1e-9)
        assert f1.b == pytest.approx(f2.b, rel=1e-9)
        assert f1.c == pytest.approx(f2.c, rel=1e-9)

    def test_constant_series_fits_flat(self):
        xs = np.arange(5, dtype=np.float64)
        ys = np.full(5, 0.7)
        fit = fit_exponential(xs, ys)
        assert fit.predict(xs) == pytest.approx(ys, abs=1e-9)
        assert fit.residual < 1e-9

    def test_noisy_fit_keeps_high_r_squared(self):
        rng = np.random.default_rng(0)
        xs = np.arange(4, 9, dtype=np.float64)
        ys = 0.3 * np.exp(-0.7 * xs) + 0.01
        ys = ys * (1 + rng.normal(0, 0.01, size=ys.shape))
        fit = fit_exponential(xs, ys)
        assert fit.r_squared(xs, ys) > 0.99

    def test_failure_carries_best_effort(self):
        xs = np.arange(6, dtype=np.float64)
        ys = np.array([1.0, -2.0, 3.0, -4.0, 5.0, -6.0])
        with pytest.raises(FitError) as err:
            fit_exponential(xs, ys, max_iter=2)
        best = err.value.best
        assert isinstance(best, ExpFit)
        assert np.isfinite(best.predict(xs)).all()

    def test_validation(self):
        with pytest.raises(DomainError):
            fit_exponential([1.0, 2.0], [1.0, 2.0])
        with pytest.raises(DomainError):
            fit_exponential([1.0, 2.0, 3.0], [1.0, 2.0])


class TestClippingSweep:
    def test_fine_format_wants_no_clipping(self):
        spec = SynthSpec(tensor_size=2048)
        out = clipping_sweep("INT16", spec, trials=20,
                             percentiles=np.linspace(90.0, 100.0, 21), seed=0)
        assert out["optimal_percentile"] == 100.0

    def test_outliers_pull_coarse_format_below_100(self):
        spec = SynthSpec(tensor_size=4096, outlier_rate=1e-3, outlier_scale=5.0)
        out = clipping_sweep("INT4", spec, trials=40,
                             percentiles=np.linspace(90.0, 100.0, 41), seed=0)
        assert out["optimal_percentile"] < 100.0

    def test_narrower_format_clips_harder(self):
        spec = SynthSpec(tensor_size=4096, outlier_rate=1e-3, outlier_scale=5.0)
        grid = np.linspace(90.0, 100.0, 41)
        p4 = clipping_sweep("INT4", spec, trials=40, percentiles=grid, seed=0)
        p8 = clipping_sweep("INT8", spec, trials=40, percentiles=grid, seed=0)
        assert p4["optimal_percentile"] < p8["optimal_percentile"]

    def test_curve_shape(self):
        spec = SynthSpec(tensor_size=2048)
        out = clipping_sweep("INT4", spec, trials=10,
                             percentiles=np.array([50.0, 99.0]), seed=1)
        # clipping half the mass away is far worse than clipping 1%
        assert out["mse"][0] > out["mse"][1]

    def test_grid_validation(self):
        spec = SynthSpec()
        with pytest.raises(DomainError):
            clipping_sweep("INT4", spec, percentiles=np.array([0.0, 50.0]))
        with pytest.raises(DomainError):
            clipping_sweep("INT4", spec, percentiles=np.array([50.0, 101.0]))
        with pytest.raises(DomainError):
            clipping_sweep("INT4", spec, percentiles=np.array([]))
        with pytest.raises(DomainError):
            clipping_sweep("BF16", spec)
        with pytest.raises(DomainError):
            clipping_sweep("INT4", spec, trials=0)


class TestSpearman:
    def test_perfect_monotone(self):
        x = np.array([1.0, 3.0, 2.0, 5.0, 4.0])
        assert spearman(x, x**3) == pytest.approx(1.0, abs=1e-12)
        assert spearman(x, -x) == pytest.approx(-1.0, abs=1e-12)

    def test_tied_ranks_hand_value(self):
        rho = spearman(np.array([1.0, 1.0, 2.0]), np.array([1.0, 2.0, 3.0]))
        assert rho == pytest.approx(np.sqrt(3) / 2)

    def test_constant_input_rejected(self):
        with pytest.raises(AnalysisError, match="zero rank variance"):
            spearman(np.ones(5), np.arange(5.0))

    def test_shape_mismatch(self):
        with pytest.raises(DomainError):
            spearman(np.ones(4), np.ones(5))


class TestEntropySwitchCorrelation:
    def test_coupled_series_correlate(self):
        steps = np.arange(200, dtype=np.float64)
        entropy = np.exp(-steps / 80.0)
        switch = 0.05 * entropy + 1e-4
        assert entropy_switch_correlation(entropy, switch) == pytest.approx(1.0)

    def test_short_series_rejected(self):
        with pytest.raises(AnalysisError, match="at least 100"):
            entropy_switch_correlation(np.ones(50), np.zeros(50))

    def test_min_steps_override(self):
        e = np.linspace(1.0, 0.0, 20)
        s = np.linspace(0.5, 0.0, 20)
        assert entropy_switch_correlation(e, s, min_steps=10) == pytest.approx(1.0)

    def test_never_switched_is_zero_by_convention(self):
        # zero switching short-circuits before the constant-entropy check
        e = np.ones(150)
        assert entropy_switch_correlation(e, np.zeros(150)) == 0.0

    def test_constant_entropy_with_switching_is_undefined(self):
        rng = np.random.default_rng(0)
        with pytest.raises(AnalysisError):
            entropy_switch_correlation(np.ones(150), rng.random(150))
