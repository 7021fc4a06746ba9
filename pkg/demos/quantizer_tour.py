"""A tour of the numeric formats and the symmetric quantizer.

Walks through integer and minifloat grids, saturation at the clipping
threshold, round-to-nearest-even at grid midpoints, and the bfloat16 cast.
"""

import numpy as np

from fliqs.formats import (
    float_format,
    int_format,
    max_representable,
    representable_values,
)
from fliqs.quantize import bf16_round, quant_error, quantize

# --- the INT4 grid -----------------------------------------------------------
# A signed k-bit integer format represents 2^(k-1) - 1 levels per sign at a
# shared scale.  With threshold t the grid is (i / qmax) * t.

fmt = int_format(4)
t = 1.0
grid = representable_values(fmt) * t
print("INT4 grid at threshold 1.0:")
print(" ", np.array2string(grid, precision=4))

x = np.array([0.03, 0.3, 0.5, 0.95, 1.4, -2.0])
print("\nquantize([0.03, 0.3, 0.5, 0.95, 1.4, -2.0], INT4, t=1.0):")
print(" ", quantize(x, fmt, t))
print("values past the threshold saturate to exactly +-t.")

# --- ties round to even ------------------------------------------------------
# 0.5 in grid units sits exactly between levels 0 and 1; the even level wins.

mid = 0.5 / 7.0  # halfway between the 0th and 1st INT4 level
print(f"\nmidpoint {mid:.5f} quantizes to {quantize(mid, fmt, 1.0):.5f} "
      "(tie to the even level, which is 0)")

# --- minifloats --------------------------------------------------------------
# ExMy formats trade exponent range against mantissa resolution at the same
# bit budget.  E4M3 covers a wide range coarsely; E2M5 is fine but narrow.

for e, m in [(4, 3), (2, 5)]:
    f = float_format(e, m)
    vals = representable_values(f)
    print(f"\n{f.name}: {vals.size} values, max {max_representable(f):.1f}, "
          f"smallest positive {vals[vals > 0].min():.6f}")

# Quantization error on a unit gaussian, same threshold, different formats.
rng = np.random.default_rng(0)
data = rng.normal(size=50_000)
print("\nRMS quantization error on N(0,1), threshold at 3 sigma:")
for name in ["INT4", "INT8", "E4M3", "E2M5"]:
    rms = float(np.sqrt(np.mean(quant_error(data, name, 3.0) ** 2)))
    print(f"  {name:5s} {rms:.5f}")

# --- bfloat16 ----------------------------------------------------------------
# bf16 is a float32 with the bottom 16 mantissa bits dropped (round to
# nearest even).  It needs no threshold and acts as the no-quantization
# baseline format everywhere in this package.

y = np.array([1.0, 1.0 + 2.0**-8, 3.14159265, 1e30])
print("\nbf16_round([1, 1+2^-8, pi, 1e30]) =", bf16_round(y))
