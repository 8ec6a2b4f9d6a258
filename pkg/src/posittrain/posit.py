"""Posit number format: configuration, bit-level encode/decode and round-to-zero quantization.

Scalar routines are exact: inputs are taken apart into integer
numerator/denominator pairs and rounded with shifts and floor division. They
return floats for float input; every posit with ``n <= 32`` and ``es <= 4`` is
exactly representable as a float64, so nothing is lost on the way out.
:func:`quantize_array` is the vectorized float64 path used for tensors.

NaR (the ``10...0`` pattern) is represented by NaN wherever a real number is
expected.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Union

import numpy as np

Real = Union[int, float, Fraction]

MAX_N = 32
MAX_ES = 4
MAX_TABLE_N = 12


class PositConfigError(ValueError):
    """Invalid (n, es) parameters."""


class Special(enum.Enum):
    ZERO = "zero"
    NAR = "NaR"


ZERO = Special.ZERO
NAR = Special.NAR


@dataclass(frozen=True)
class PositConfig:
    n: int
    es: int

    @property
    def useed(self) -> int:
        return 2 ** (2 ** self.es)

    @property
    def max_scale(self) -> int:
        """Binary exponent of maxpos, i.e. ``(n - 2) * 2**es``."""
        return (self.n - 2) << self.es

    @property
    def maxpos(self) -> Fraction:
        return Fraction(self.useed ** (self.n - 2))

    @property
    def minpos(self) -> Fraction:
        return 1 / self.maxpos

    @property
    def nar_bits(self) -> int:
        return 1 << (self.n - 1)

    @property
    def mask(self) -> int:
        return (1 << self.n) - 1

    def __str__(self) -> str:
        return f"posit({self.n},{self.es})"


def make_config(n: int, es: int) -> PositConfig:
    """Validate and build a :class:`PositConfig`.

    ``n`` may be as small as 2 (the degenerate format {0, 1, NaR, -1}).
    """
    if not isinstance(n, (int, np.integer)) or not isinstance(es, (int, np.integer)):
        raise PositConfigError("n and es must be integers")
    if not 2 <= n <= MAX_N:
        raise PositConfigError(f"n must satisfy 2 <= n <= {MAX_N}, got {n}")
    if not 0 <= es <= MAX_ES:
        raise PositConfigError(f"es must satisfy 0 <= es <= {MAX_ES}, got {es}")
    return PositConfig(int(n), int(es))


@dataclass(frozen=True)
class PositBits:
    """An n-bit posit pattern. Negative values are two's complements."""

    bits: int
    config: PositConfig

    def __post_init__(self):
        if not 0 <= self.bits <= self.config.mask:
            raise ValueError(f"pattern {self.bits:#x} does not fit in {self.config.n} bits")

    @property
    def is_zero(self) -> bool:
        return self.bits == 0

    @property
    def is_nar(self) -> bool:
        return self.bits == self.config.nar_bits

    @property
    def signed(self) -> int:
        """The pattern read as an n-bit two's-complement integer."""
        if self.bits & self.config.nar_bits:
            return self.bits - (1 << self.config.n)
        return self.bits

    def negate(self) -> "PositBits":
        return PositBits(-self.bits & self.config.mask, self.config)

    def binary(self) -> str:
        return format(self.bits, f"0{self.config.n}b")

    def hex(self) -> str:
        return f"0x{self.bits:0{(self.config.n + 3) // 4}x}"

    def __str__(self) -> str:
        return self.binary()


@dataclass(frozen=True)
class PositFields:
    """Unpacked posit: value = s * useed**k * 2**e * (1 + f).

    ``e`` is the exponent as read, with truncated low bits taken as zero.
    ``rb``, ``eb`` and ``fb`` are the widths actually occupied in the pattern,
    so a saturated regime (maxpos) reports ``rb = n - 1``.
    """

    s: int
    k: int
    e: int
    f: Fraction
    rb: int
    eb: int
    fb: int

    def value(self, config: PositConfig) -> Fraction:
        scale = (self.k << config.es) + self.e
        return self.s * _pow2(scale) * (1 + self.f)


def _pow2(t: int) -> Fraction:
    return Fraction(1 << t) if t >= 0 else Fraction(1, 1 << -t)


def _ratio(x: Real) -> tuple[int, int]:
    """Exact ``(numerator, denominator)`` of a finite real, denominator positive."""
    if isinstance(x, Fraction):
        return x.numerator, x.denominator
    if isinstance(x, (int, np.integer)):
        return int(x), 1
    xf = float(x)
    if not math.isfinite(xf):
        raise ValueError(f"cannot quantize non-finite value {x!r}")
    return xf.as_integer_ratio()


class _Rounded(NamedTuple):
    k: int
    pe: int
    frac: int  # fraction as an fb-bit integer
    rb: int
    eb: int
    fb: int

    def scale(self, es: int) -> int:
        return (self.k << es) + self.pe


def _below_minpos(p: int, q: int, config: PositConfig) -> bool:
    return (p << config.max_scale) < q


def _round_magnitude(p: int, q: int, config: PositConfig) -> _Rounded:
    """Round-to-zero fields for the magnitude ``p / q`` (assumed >= minpos)."""
    n, es = config.n, config.es
    if p > (q << config.max_scale):
        p, q = 1 << config.max_scale, 1
    # exp = floor(log2(p / q)) from bit lengths
    exp = p.bit_length() - q.bit_length()
    if (p << max(-exp, 0)) < (q << max(exp, 0)):
        exp -= 1
    k = exp >> es
    e = exp - (k << es)
    rb = k + 2 if k >= 0 else -k + 1
    eb = max(min(n - 1 - rb, es), 0)
    fb = max(n - 1 - rb - eb, 0)
    pe = (e >> (es - eb)) << (es - eb)
    # floor((p / (q * 2**exp) - 1) * 2**fb)
    t = fb - exp
    if t >= 0:
        frac = (p << t) // q - (1 << fb)
    else:
        frac = p // (q << -t) - (1 << fb)
    return _Rounded(k, pe, frac, rb, eb, fb)


def quantize_real(x: Real, config: PositConfig) -> Real:
    """Round ``x`` toward zero onto the posit grid of ``config``.

    Magnitudes below minpos go to 0 and magnitudes above maxpos clip to
    maxpos. The exponent and fraction are truncated to whatever width the
    regime leaves free. Fraction input gives a Fraction back, anything
    else a float.

    >>> quantize_real(0.4, make_config(5, 1))
    0.375
    """
    exact = isinstance(x, Fraction)
    p, q = _ratio(x)
    mag_p = abs(p)
    if mag_p == 0 or _below_minpos(mag_p, q, config):
        return Fraction(0) if exact else 0.0
    r = _round_magnitude(mag_p, q, config)
    sig = (1 << r.fb) | r.frac
    if p < 0:
        sig = -sig
    shift = r.scale(config.es) - r.fb
    if exact:
        return Fraction(sig << shift) if shift >= 0 else Fraction(sig, 1 << -shift)
    return math.ldexp(sig, shift)


def encode_from_real(x: Real, config: PositConfig) -> PositBits:
    """Bit pattern of ``quantize_real(x, config)``."""
    p, q = _ratio(x)
    mag_p = abs(p)
    if mag_p == 0 or _below_minpos(mag_p, q, config):
        return PositBits(0, config)
    r = _round_magnitude(mag_p, q, config)
    if r.k >= 0:
        regime = ((1 << (r.k + 1)) - 1) << 1
    else:
        regime = 1
    width = r.rb + r.eb + r.fb
    body = (regime << (r.eb + r.fb)) | ((r.pe >> (config.es - r.eb)) << r.fb) | r.frac
    if width > config.n - 1:
        body >>= width - (config.n - 1)
    if p < 0:
        body = -body & config.mask
    return PositBits(body, config)


def _leading_run(body: int, width: int) -> int:
    """Length of the run of bits equal to the MSB of a ``width``-bit field."""
    top = (body >> (width - 1)) & 1
    if top:
        body = ~body & ((1 << width) - 1)
    # body now starts with zeros; the run is the leading-zero count
    return width - body.bit_length()


def decode_fields(p: PositBits) -> PositFields | Special:
    """Split a pattern into sign, regime, exponent and fraction fields."""
    config = p.config
    n, es = config.n, config.es
    if p.is_zero:
        return ZERO
    if p.is_nar:
        return NAR
    s = 1
    bits = p.bits
    if bits & config.nar_bits:
        s = -1
        bits = -bits & config.mask
    width = n - 1
    body = bits & ((1 << width) - 1)
    run = _leading_run(body, width)
    k = run - 1 if (body >> (width - 1)) & 1 else -run
    rb = min(run + 1, width)
    rest = width - rb
    eb = min(rest, es)
    fb = rest - eb
    tail = body & ((1 << rest) - 1)
    e = (tail >> fb) << (es - eb)
    frac = tail & ((1 << fb) - 1)
    return PositFields(s, k, e, Fraction(frac, 1 << fb), rb, eb, fb)


def decode_exact(p: PositBits) -> Fraction | Special:
    """Exact rational value of ``p``; NaR comes back as :data:`NAR`."""
    fields = decode_fields(p)
    if fields is ZERO:
        return Fraction(0)
    if fields is NAR:
        return NAR
    return fields.value(p.config)


def decode_to_real(p: PositBits) -> float:
    """Value of ``p`` as a float, NaN for NaR."""
    v = decode_exact(p)
    if v is NAR:
        return math.nan
    return float(v)


def is_nar(x) -> bool:
    return x is NAR or (isinstance(x, float) and math.isnan(x))


class TableRow(NamedTuple):
    bits: str
    regime: int | None
    exponent: int | None
    mantissa: Fraction | None
    value: Fraction


def enumerate_table(config: PositConfig) -> list[TableRow]:
    """One row per nonnegative pattern, in increasing order."""
    if config.n > MAX_TABLE_N:
        raise PositConfigError(f"table too large: n={config.n} exceeds {MAX_TABLE_N}")
    rows = []
    for b in range(1 << (config.n - 1)):
        p = PositBits(b, config)
        fields = decode_fields(p)
        if fields is ZERO:
            rows.append(TableRow(p.binary(), None, None, None, Fraction(0)))
        else:
            rows.append(TableRow(p.binary(), fields.k, fields.e, fields.f, fields.value(config)))
    return rows


def quantize_array(x, config: PositConfig) -> np.ndarray:
    """Vectorized :func:`quantize_real` over a float64 array.

    NaN and infinities map to NaN (NaR) instead of raising.
    """
    x = np.asarray(x, dtype=np.float64)
    n, es = config.n, config.es
    minpos = math.ldexp(1.0, -config.max_scale)
    maxpos = math.ldexp(1.0, config.max_scale)

    mag = np.abs(x)
    finite = np.isfinite(x)
    with np.errstate(invalid="ignore"):
        live = finite & (mag >= minpos)
    clipped = np.clip(np.where(live, mag, 1.0), minpos, maxpos)
    mant, ex = np.frexp(clipped)
    exp = ex.astype(np.int64) - 1
    k = exp >> es
    e = exp - (k << es)
    rb = np.where(k >= 0, k + 2, 1 - k)
    eb = np.clip(np.minimum(n - 1 - rb, es), 0, None)
    fb = np.maximum(n - 1 - rb - eb, 0)
    drop = es - eb
    pe = (e >> drop) << drop
    f = 2.0 * mant - 1.0
    pf = np.ldexp(np.floor(np.ldexp(f, fb)), -fb)
    out = np.ldexp(1.0 + pf, (k << es) + pe)
    out = np.where(live, np.copysign(out, x), 0.0)
    out = np.where(finite, out, np.nan)
    return out
