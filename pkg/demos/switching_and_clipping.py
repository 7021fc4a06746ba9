"""Why one-shot format search works: switching error and clipping analysis.

Two small studies on synthetic tensors.  First, the error introduced by
re-quantizing a tensor from INTk1 to INT8 decays exponentially in k1, so a
policy that starts from fine formats perturbs training less and less as it
explores.  Second, the MSE-optimal clipping percentile drops with bitwidth,
which is why every (layer, format) pair carries its own threshold.
"""

import numpy as np

from fliqs.analysis import (
    SynthSpec,
    clipping_sweep,
    fit_exponential,
    switching_sweep,
)

# --- switching error decays exponentially in the source bitwidth -------------

spec = SynthSpec(tensor_size=4096)
out = switching_sweep([4, 5, 6, 7, 10, 12], k2=8, spec=spec, trials=300,
                      seed=0)
fit = fit_exponential(out["k1"], out["mean_rms"])
r2 = fit.r_squared(out["k1"], out["mean_rms"])

print("mean RMS switching error INTk1 -> INT8 (gaussian tensors):")
for k1, m, s in zip(out["k1"], out["mean_rms"], out["stderr"]):
    bar = "#" * int(round(m * 400))
    print(f"  k1={k1:2d}  {m:.5f} +- {s:.5f}  {bar}")
print(f"exponential fit: {fit.a:.4f} * exp(-{fit.b:.3f} k1) + {fit.c:.4f}, "
      f"R^2 = {r2:.4f}")
print("the floor is INT8's own rounding error, which switching cannot beat.")

# --- coarser formats want more aggressive clipping ----------------------------
# With rare large outliers, a narrow format wastes its few levels covering
# them; clipping earlier spends resolution where the mass is.

spec = SynthSpec(tensor_size=4096, outlier_rate=1e-3, outlier_scale=5.0)
grid = np.linspace(90.0, 100.0, 41)
print("\noptimal clipping percentile (gaussian + 0.1% outliers at 5x):")
for name in ["INT4", "INT6", "INT8"]:
    sweep = clipping_sweep(name, spec, trials=60, percentiles=grid, seed=0)
    print(f"  {name}: best percentile {sweep['optimal_percentile']:5.2f}, "
          f"MSE {sweep['mse'].min():.6f}")
