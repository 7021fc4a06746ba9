"""Quantizer behavior studies: switching error, clipping sweeps, correlations.

These reproduce the numeric experiments behind the search design: how large
the perturbation is when a tensor's format switches (and how it decays with
bitwidth), where the MSE-optimal clipping percentile sits for each format,
and whether policy entropy tracks the realized switching noise of a run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AnalysisError, DomainError, FitError
from .formats import resolve_format
from .quantize import quantize, switching_error


@dataclass(frozen=True)
class SynthSpec:
    """Synthetic tensor recipe: base distribution plus injected outliers.

    Outliers replace a round(outlier_rate * size) subset of entries with
    outlier_scale times the pre-injection max |x|.  The Laplacian uses scale
    1/sqrt(2) so both distributions have unit variance.
    """

    distribution: str = "gaussian"
    tensor_size: int = 4096
    outlier_rate: float = 0.0
    outlier_scale: float = 3.0

    def __post_init__(self):
        if self.distribution not in ("gaussian", "laplacian"):
            raise DomainError(f"unknown distribution {self.distribution!r}")
        if self.tensor_size < 1:
            raise DomainError(f"tensor_size must be positive, got {self.tensor_size}")
        if not 0.0 <= self.outlier_rate < 1.0:
            raise DomainError(f"outlier_rate must be in [0, 1), got {self.outlier_rate}")


def synth_tensor(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.distribution == "gaussian":
        x = rng.standard_normal(spec.tensor_size)
    else:
        x = rng.laplace(0.0, 1.0 / math.sqrt(2.0), spec.tensor_size)
    n_out = int(round(spec.outlier_rate * spec.tensor_size))
    if n_out > 0:
        value = spec.outlier_scale * float(np.max(np.abs(x)))
        pos = rng.choice(spec.tensor_size, size=n_out, replace=False)
        x[pos] = value
    return x


def shared_threshold(x: np.ndarray, percentile: float = 99.9) -> float:
    """Clipping threshold from a percentile of |x| (shared across formats)."""
    t = float(np.percentile(np.abs(x), percentile))
    if t <= 0.0:
        raise DomainError(f"threshold percentile {percentile} gave a nonpositive value")
    return t


def switching_sweep(k1_values, k2: int, spec: SynthSpec, trials: int,
                    seed: int = 0, percentile: float = 99.9) -> dict:
    """Mean RMS switching error from INTk1 to INTk2 over fresh random tensors.

    Each trial draws one tensor, takes a shared clipping threshold from the
    |x| percentile, and measures RMS(Q_k2(x) - Q_k1(x)); trial values average
    per k1.  Returns {'k1': array, 'mean_rms': array, 'stderr': array}.
    """
    k1_values = [int(k) for k in k1_values]
    if trials < 1:
        raise DomainError(f"trials must be positive, got {trials}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x5EED])))
    fmt2 = resolve_format(f"INT{k2}")
    per_k = {k: [] for k in k1_values}
    for _ in range(trials):
        x = synth_tensor(spec, rng)
        t = shared_threshold(x, percentile)
        for k in k1_values:
            d = switching_error(x, f"INT{k}", fmt2, threshold=t)
            per_k[k].append(float(np.sqrt(np.mean(d * d))))
    means = np.array([np.mean(per_k[k]) for k in k1_values])
    stderr = np.array([np.std(per_k[k], ddof=1) / math.sqrt(trials) if trials > 1 else 0.0
                       for k in k1_values])
    return {"k1": np.array(k1_values), "mean_rms": means, "stderr": stderr}


@dataclass(frozen=True)
class ExpFit:
    """Parameters of y = A * exp(-B * x) + C and the fit's RMS residual."""

    a: float
    b: float
    c: float
    residual: float

    def predict(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        return self.a * np.exp(-self.b * xs) + self.c

    def r_squared(self, xs, ys) -> float:
        ys = np.asarray(ys, dtype=np.float64)
        ss_res = float(np.sum((ys - self.predict(xs)) ** 2))
        ss_tot = float(np.sum((ys - ys.mean()) ** 2))
        if ss_tot == 0.0:
            return 1.0 if ss_res == 0.0 else 0.0
        return 1.0 - ss_res / ss_tot


def _linear_ac(xs, ys, b):
    """Least-squares A, C for fixed decay rate, and the residual RMS."""
    basis = np.stack([np.exp(-b * xs), np.ones_like(xs)], axis=1)
    coef, *_ = np.linalg.lstsq(basis, ys, rcond=None)
    resid = basis @ coef - ys
    return coef[0], coef[1], float(np.sqrt(np.mean(resid**2)))


def fit_exponential(xs, ys, max_iter: int = 200, tol: float = 1e-14) -> ExpFit:
    """Fit A * exp(-B x) + C by B-grid initialization plus Gauss-Newton.

    The grid over B in [0.1, 3] picks the best conditionally-linear start;
    Gauss-Newton (with pseudoinverse steps, B clamped nonnegative) refines
    all three parameters.  Raises FitError, carrying the best parameters
    seen, if the refinement never stabilizes.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise DomainError("xs and ys must be 1-d arrays of equal length")
    if len(xs) < 3:
        raise DomainError(f"need at least 3 points to fit 3 parameters, got {len(xs)}")
    order = np.argsort(xs)
    xs, ys = xs[order], ys[order]

    best = None
    for b in np.linspace(0.1, 3.0, 30):
        a, c, r = _linear_ac(xs, ys, b)
        if best is None or r < best[3]:
            best = (a, b, c, r)
    a, b, c, _ = best

    prev_r = math.inf
    for _ in range(max_iter):
        e = np.exp(-b * xs)
        pred = a * e + c
        resid = ys - pred
        r = float(np.sqrt(np.mean(resid**2)))
        if r < best[3]:
            best = (a, b, c, r)
        if abs(prev_r - r) <= tol * max(1.0, r):
            return ExpFit(a, b, c, r)
        prev_r = r
        jac = np.stack([e, -a * xs * e, np.ones_like(xs)], axis=1)
        try:
            step, *_ = np.linalg.lstsq(jac, resid, rcond=None)
        except np.linalg.LinAlgError:
            break
        a, b, c = a + step[0], b + step[1], c + step[2]
        b = max(b, 0.0)
    a, b, c, r = best
    raise FitError(
        f"exponential fit did not converge in {max_iter} iterations (residual {r:.3g})",
        best=ExpFit(a, b, c, r),
    )


def clipping_sweep(fmt, spec: SynthSpec, trials: int = 100,
                   percentiles=None, seed: int = 0) -> dict:
    """MSE of quantization as a function of the clipping percentile.

    For each trial tensor and each percentile p, the threshold is the p-th
    percentile of |x| and the score is mean (Q(x) - x)^2; curves average over
    trials.  Returns the percentile grid, the mean MSE curve, and the argmin
    percentile.
    """
    f = resolve_format(fmt)
    if f.kind == "bf16":
        raise DomainError("clipping sweeps need a clipped format, not BF16")
    if percentiles is None:
        percentiles = np.linspace(1.0, 100.0, 100)
    grid = np.asarray(percentiles, dtype=np.float64)
    if grid.ndim != 1 or len(grid) < 1:
        raise DomainError("percentile grid must be a non-empty 1-d array")
    if np.any(grid <= 0.0) or np.any(grid > 100.0):
        raise DomainError("percentiles must lie in (0, 100]")
    if trials < 1:
        raise DomainError(f"trials must be positive, got {trials}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0xC11F])))
    total = np.zeros(len(grid))
    for _ in range(trials):
        x = synth_tensor(spec, rng)
        thresholds = np.percentile(np.abs(x), grid)
        for i, t in enumerate(thresholds):
            if t <= 0.0:
                total[i] += float(np.mean(x * x))
                continue
            d = quantize(x, f, t) - x
            total[i] += float(np.mean(d * d))
    mse = total / trials
    best = int(np.argmin(mse))
    return {"percentiles": grid, "mse": mse, "optimal_percentile": float(grid[best])}


def _rank(values: np.ndarray) -> np.ndarray:
    """Fractional ranks with ties sharing their average rank."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    sv = values[order]
    i = 0
    while i < len(sv):
        j = i
        while j + 1 < len(sv) and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DomainError("inputs must be 1-d arrays of equal length")
    ra, rb = _rank(a), _rank(b)
    sa, sb = ra.std(), rb.std()
    if sa == 0.0 or sb == 0.0:
        raise AnalysisError("correlation undefined: an input has zero rank variance")
    return float(np.mean((ra - ra.mean()) * (rb - rb.mean())) / (sa * sb))


def entropy_switch_correlation(entropy, switch_rms, min_steps: int = 100) -> float:
    """Spearman correlation between policy entropy and switching magnitude.

    Both series must cover the same post-warmup steps.  A run that never
    switched formats has zero correlation by convention; constant entropy
    makes the statistic undefined and raises AnalysisError.
    """
    e = np.asarray(entropy, dtype=np.float64)
    s = np.asarray(switch_rms, dtype=np.float64)
    if e.shape != s.shape or e.ndim != 1:
        raise DomainError("entropy and switch_rms must be 1-d arrays of equal length")
    if len(e) < min_steps:
        raise AnalysisError(
            f"need at least {min_steps} post-warmup steps, got {len(e)}"
        )
    if np.all(s == 0.0):
        return 0.0
    return spearman(e, s)
