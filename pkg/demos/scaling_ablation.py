"""
Why a scale factor helps
========================

Tensors whose magnitudes sit far from 1 fall where the posit grid is coarse.
Dividing by a power-of-two scale factor moves them back to the dense region.
"""

import numpy as np

from posittrain.quantizer import QuantSpec, auto_quantize, histogram_csv, log2_histogram, mean_relative_error

rng = np.random.default_rng(0)
scaled, unscaled = QuantSpec.posit(8, 1), QuantSpec.posit(8, 1, scaling=False)

# Sweep the log2 center of a log-normal tensor and compare errors.
print("center  scaled  unscaled  S_f")
for center in range(-12, 13, 2):
    x = rng.choice([-1.0, 1.0], 4096) * np.exp2(rng.normal(center, 1.5, 4096))
    q_on, sf = auto_quantize(x, scaled)
    q_off, _ = auto_quantize(x, unscaled)
    print(f"{center:>6}  {mean_relative_error(x, q_on):.4f}  {mean_relative_error(x, q_off):.4f}    2^{int(np.log2(sf.value))}")

# A weight-like tensor: the histogram shows where the mass sits in log2 terms.
w = rng.standard_normal(2000) * 0.02
w[:50] = 0.0
print(histogram_csv(*log2_histogram(w)))
