"""
Posit values and round-to-zero quantization
===========================================

Enumerate a small posit format, then watch reals snap to the grid.
"""

from fractions import Fraction

import numpy as np

from posittrain.posit import decode_fields, encode_from_real, enumerate_table, make_config, quantize_array

# A 5-bit posit with one exponent bit: useed = 4, maxpos = 64.
config = make_config(5, 1)
print(config, "maxpos", config.maxpos, "minpos", config.minpos)

for row in enumerate_table(config):
    print(row.bits, row.regime, row.exponent, row.mantissa, row.value)

# Values between grid points truncate toward zero; 0.4 lands on 3/8.
for x in (0.4, 0.6, -0.4, 6.0, 100.0, 0.01):
    p = encode_from_real(x, config)
    f = decode_fields(p)
    print(f"{x:>6} -> {p.binary()}  fields={f}")

# The density of the grid peaks around 1 and thins out towards maxpos.
grid = np.array([float(r.value) for r in enumerate_table(make_config(8, 1))])
gaps = np.diff(grid[1:]) / grid[2:]
print("relative spacing near 1:", gaps[np.searchsorted(grid[2:], 1.0)])
print("relative spacing near maxpos:", gaps[-1])

# The array path agrees with the scalar definition, element for element.
x = np.random.default_rng(0).standard_normal(8) * 4
print(np.c_[x, quantize_array(x, make_config(8, 1))])
print(Fraction(float(quantize_array([0.4], config)[0])))
