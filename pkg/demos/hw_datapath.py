"""
The posit MAC datapath, bit by bit
==================================

Decode two posits into exponent/mantissa fields, multiply-accumulate exactly,
and encode the sum back with truncation.
"""

from posittrain.hw import (
    FpAccumulator,
    decoder_optimized,
    decoder_original,
    encoder_optimized,
    encoder_original,
    mac,
    verify_format,
)
from posittrain.posit import PositBits, decode_exact, make_config

config = make_config(5, 1)
a, b = PositBits(0b01010, config), PositBits(0b01011, config)  # 2 and 3

# Both decoder structures produce the same fields.
print(decoder_original(a), decoder_optimized(a))
print(decoder_original(b))

# 2 * 3 = 6 is held exactly; the encoder truncates it to 4.
acc, out = mac(a, b, FpAccumulator(config))
print("accumulator", acc.value(), "->", out.binary(), "=", decode_exact(out))

# Keep accumulating: the accumulator never rounds, only the output does.
for _ in range(3):
    acc, out = mac(a, b, acc, decoder_original, encoder_original)
    print("accumulator", acc.value(), "->", out.binary(), "=", decode_exact(out))

# Sums past maxpos saturate instead of wrapping.
big = PositBits(0b01111, config)  # 64
acc, out = mac(big, big, FpAccumulator(config))
print("accumulator", acc.value(), "->", out.binary(), "=", decode_exact(out))
print(encoder_optimized(acc.to_fields(), config) == out)

# Exhaustive check of an 8-bit format against the reference quantizer.
print(verify_format(8, 1).text())
