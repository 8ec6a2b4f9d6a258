"""Tensor quantization with power-of-two scale factors centred on the log2 distribution."""
from __future__ import annotations

import io
import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .posit import PositConfig, make_config, quantize_array

DEFAULT_SIGMA = 2


@dataclass(frozen=True)
class QuantSpec:
    """How one class of tensors is quantized.

    ``passthrough`` makes :func:`quantize_tensor` the identity (FP baseline,
    warm-up epochs).
    """

    config: PositConfig | None = None
    scaling_enabled: bool = True
    sigma: int = DEFAULT_SIGMA
    passthrough: bool = False

    def __post_init__(self):
        if not self.passthrough and self.config is None:
            raise ValueError("a non-passthrough QuantSpec needs a PositConfig")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")

    @classmethod
    def posit(cls, n: int, es: int, scaling: bool = True, sigma: int = DEFAULT_SIGMA) -> "QuantSpec":
        return cls(make_config(n, es), scaling, sigma)

    @classmethod
    def identity(cls) -> "QuantSpec":
        return cls(passthrough=True)

    def as_passthrough(self) -> "QuantSpec":
        return QuantSpec(self.config, self.scaling_enabled, self.sigma, passthrough=True)


@dataclass(frozen=True)
class ScaleFactor:
    center: int
    value: float
    degenerate: bool = False

    @classmethod
    def from_center(cls, center: int, sigma: int, degenerate: bool = False) -> "ScaleFactor":
        return cls(center, math.ldexp(1.0, center + sigma), degenerate)


UNIT_SCALE = ScaleFactor(0, 1.0)


def _round_half_away(q: Fraction) -> int:
    r = math.floor(abs(q) + Fraction(1, 2))
    return r if q >= 0 else -r


def log2_center(x) -> int | None:
    """``round(mean(log2|x|))`` over the nonzero finite elements, ties away from zero.

    log2|x| is split as binary exponent plus log2 of the mantissa in
    [1, 2); the exponent sum is kept as an exact integer so that scaling the
    tensor by 2**m moves the mean by exactly m. Returns None when there are
    no nonzero elements.
    """
    a = np.abs(np.asarray(x, dtype=np.float64)).ravel()
    a = a[(a > 0) & np.isfinite(a)]
    if a.size == 0:
        return None
    mant, ex = np.frexp(a)
    exp_sum = int(np.sum(ex.astype(np.int64) - 1))
    # np.sum reduces pairwise in a fixed order for a contiguous 1-D array
    mant_sum = float(np.sum(np.log2(2.0 * mant)))
    mean = (Fraction(exp_sum) + Fraction(mant_sum)) / a.size
    return _round_half_away(mean)


def scale_factor(x, sigma: int = DEFAULT_SIGMA) -> ScaleFactor:
    """``S_f = 2**(center + sigma)``; an all-zero tensor gets center 0 and the degenerate flag."""
    center = log2_center(x)
    if center is None:
        return ScaleFactor.from_center(0, sigma, degenerate=True)
    return ScaleFactor.from_center(center, sigma)


def quantize_tensor(x, spec: QuantSpec, sf: ScaleFactor | None = None) -> np.ndarray:
    """Quantize every element as ``P(x / S_f) * S_f``.

    With scaling disabled the elements are quantized directly. Scaling by a
    power of two is exact, so the result is still truncated toward zero.
    """
    if spec.passthrough:
        return x
    x = np.asarray(x, dtype=np.float64)
    if spec.scaling_enabled:
        if sf is None:
            raise ValueError("scaling is enabled but no scale factor was supplied")
        if not sf.value > 0:
            raise ValueError("scale factor must be positive")
        shift = sf.center + spec.sigma
        return np.ldexp(quantize_array(np.ldexp(x, -shift), spec.config), shift)
    if sf is not None:
        raise ValueError("scale factor supplied but scaling is disabled")
    return quantize_array(x, spec.config)


def auto_quantize(x, spec: QuantSpec) -> tuple[np.ndarray, ScaleFactor | None]:
    """Quantize with a scale factor computed from ``x`` itself (when scaling is on)."""
    if spec.passthrough:
        return x, None
    sf = scale_factor(x, spec.sigma) if spec.scaling_enabled else None
    return quantize_tensor(x, spec, sf), sf


def mean_relative_error(x, q) -> float:
    """Mean of |q - x| / |x| over nonzero elements of x (0 for an all-zero x)."""
    x = np.asarray(x, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    nz = x != 0
    if not nz.any():
        return 0.0
    return float(np.mean(np.abs(q[nz] - x[nz]) / np.abs(x[nz])))


def log2_histogram(x) -> tuple[dict[int, int], int]:
    """Counts of nonzero elements per unit bin of floor(log2|x|), plus the zero count."""
    a = np.abs(np.asarray(x, dtype=np.float64)).ravel()
    zeros = int(np.count_nonzero(a == 0))
    a = a[a != 0]
    _, ex = np.frexp(a)
    bins = Counter((ex.astype(np.int64) - 1).tolist())
    return dict(sorted(bins.items())), zeros


def histogram_csv(bins: dict[int, int], zeros: int) -> str:
    out = io.StringIO()
    out.write("bin,count\n")
    for b, c in sorted(bins.items()):
        out.write(f"{b},{c}\n")
    out.write(f"zeros,{zeros}\n")
    return out.getvalue()
