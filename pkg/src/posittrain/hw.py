"""Bit-level functional model of a posit MAC: decoder -> exact FP MAC -> encoder.

Each of the decoder and encoder exists in two structures. The ``original``
variants compute the regime shift amount with an adder (run length + 1) and
shift once. The ``optimized`` variants take the adder off the shift path: the
decoder counts the run on the body with its first regime bit already dropped
and finishes with a fixed ``<< 1``; the encoder shifts by ``k`` (or ``~k``)
and finishes with a fixed ``>> 1``. Both pairs must agree on every input,
and :func:`verify` checks this together with agreement against the exact
posit routines in :mod:`posittrain.posit`.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction

from .posit import (
    NAR,
    PositBits,
    PositConfig,
    decode_exact,
    encode_from_real,
    make_config,
    quantize_real,
)

MAX_EXHAUSTIVE_N = 16
MAX_MAC_EXHAUSTIVE_N = 8


@dataclass(frozen=True)
class BitVec:
    """A fixed-width wire bundle. Shifts are logical and drop bits past the edges."""

    width: int
    bits: int = 0

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError("width must be positive")
        if not 0 <= self.bits < (1 << self.width):
            raise ValueError(f"{self.bits:#x} does not fit in {self.width} bits")

    @property
    def mask(self) -> int:
        return (1 << self.width) - 1

    def shl(self, amount: int) -> "BitVec":
        return BitVec(self.width, (self.bits << amount) & self.mask)

    def shr(self, amount: int, fill: int = 0) -> "BitVec":
        out = self.bits >> amount
        if fill and amount:
            out |= self.mask ^ (self.mask >> min(amount, self.width))
        return BitVec(self.width, out)

    def invert(self) -> "BitVec":
        return BitVec(self.width, self.bits ^ self.mask)

    def msb(self) -> int:
        return self.bits >> (self.width - 1)

    def top(self, count: int) -> int:
        """The ``count`` most significant bits as an integer."""
        return self.bits >> (self.width - count) if count else 0

    def resize(self, width: int) -> "BitVec":
        """Keep the MSB-aligned content in a ``width``-bit bundle (zero-pad or drop LSBs)."""
        if width >= self.width:
            return BitVec(width, self.bits << (width - self.width))
        return BitVec(width, self.bits >> (self.width - width))


def lzd(v: BitVec) -> int:
    """Leading-zero count; ``v.width`` when every bit is zero."""
    return v.width - v.bits.bit_length()


def lod(v: BitVec) -> int:
    """Leading-one count; ``v.width`` when every bit is one."""
    return lzd(v.invert())


@dataclass(frozen=True)
class FpFields:
    """Decoder output / encoder input.

    ``mantissa`` is an (n-1)-bit integer whose top bit is the hidden one, so
    the magnitude is ``mantissa * 2**(eff_exp - (n - 2))``.
    """

    sign: int
    eff_exp: int
    mantissa: int
    zero: bool = False
    nar: bool = False

    def value(self, config: PositConfig) -> Fraction | object:
        if self.nar:
            return NAR
        if self.zero:
            return Fraction(0)
        t = self.eff_exp - (config.n - 2)
        mag = Fraction(self.mantissa) * (Fraction(2) ** t)
        return -mag if self.sign else mag


def _require_hw(config: PositConfig):
    if config.n < 3:
        raise ValueError("the datapath model needs n >= 3")


def _special_fields(p: PositBits) -> FpFields | None:
    if p.is_zero:
        return FpFields(0, 0, 0, zero=True)
    if p.is_nar:
        return FpFields(1, 0, 0, nar=True)
    return None


def _sign_magnitude(p: PositBits) -> tuple[int, BitVec]:
    n = p.config.n
    word = BitVec(n, p.bits)
    sign = word.msb()
    if sign:
        word = BitVec(n, (word.invert().bits + 1) & word.mask)
    # drop the sign bit; the regime starts at the new MSB
    return sign, BitVec(n - 1, word.bits & ((1 << (n - 1)) - 1))


def _pack(config: PositConfig, sign: int, k: int, shifted: BitVec) -> FpFields:
    n, es = config.n, config.es
    e = shifted.top(es)
    frac = shifted.shl(es).top(n - 2)
    eff_exp = (k << es) | e
    return FpFields(sign, eff_exp, (1 << (n - 2)) | frac)


def decoder_original(p: PositBits) -> FpFields:
    config = p.config
    _require_hw(config)
    special = _special_fields(p)
    if special is not None:
        return special
    sign, body = _sign_magnitude(p)
    polarity = body.msb()
    run = lod(body) if polarity else lzd(body)
    k = run - 1 if polarity else -run
    shamt = run + 1
    # exponent bits beyond the pattern end read as zero
    shifted = body.resize(body.width + config.es).shl(shamt)
    return _pack(config, sign, k, shifted)


def decoder_optimized(p: PositBits) -> FpFields:
    config = p.config
    _require_hw(config)
    special = _special_fields(p)
    if special is not None:
        return special
    sign, body = _sign_magnitude(p)
    polarity = body.msb()
    wide = body.resize(body.width + config.es).shl(1)
    # detectors look past the first regime bit, giving run - 1 directly
    tail = BitVec(body.width - 1, body.bits & ((1 << (body.width - 1)) - 1))
    ones = lod(tail)
    zeros = lzd(tail)
    path_ones = wide.shl(ones).shl(1)
    path_zeros = wide.shl(zeros).shl(1)
    if polarity:
        k, shifted = ones, path_ones
    else:
        k, shifted = ~zeros, path_zeros
    return _pack(config, sign, k, shifted)


def _encode_prepare(f: FpFields, config: PositConfig):
    """Shared front end: flags, saturation and the un-shifted REM word.

    Returns either a finished pattern or (sign, k, polarity, rem).
    """
    n, es = config.n, config.es
    if f.nar:
        return PositBits(config.nar_bits, config)
    if f.zero:
        return PositBits(0, config)
    k = f.eff_exp >> es
    e = f.eff_exp & ((1 << es) - 1)
    frac = f.mantissa & ((1 << (n - 2)) - 1)
    if k < -(n - 2):
        return PositBits(0, config)
    if k > n - 2:
        k, e, frac = n - 2, 0, 0
    polarity = 1 if k >= 0 else 0
    width = 2 * n
    rem = ((polarity ^ 1) << (width - 1)) | (e << (width - 1 - es)) | (frac << (width - 1 - es - (n - 2)))
    return f.sign, k, polarity, BitVec(width, rem)


def _encode_finish(config: PositConfig, sign: int, rem: BitVec) -> PositBits:
    body = rem.top(config.n - 1)
    if sign:
        body = -body & config.mask
    return PositBits(body, config)


def encoder_original(f: FpFields, config: PositConfig) -> PositBits:
    _require_hw(config)
    prep = _encode_prepare(f, config)
    if isinstance(prep, PositBits):
        return prep
    sign, k, polarity, rem = prep
    run = k + 1 if polarity else -k
    return _encode_finish(config, sign, rem.shr(run, fill=polarity))


def encoder_optimized(f: FpFields, config: PositConfig) -> PositBits:
    _require_hw(config)
    prep = _encode_prepare(f, config)
    if isinstance(prep, PositBits):
        return prep
    sign, k, polarity, rem = prep
    # k for positive regimes, ~k == -k - 1 for negative ones; the last >>1 supplies the +1
    amount = k if polarity else ~k
    return _encode_finish(config, sign, rem.shr(amount, fill=polarity).shr(1, fill=polarity))


@dataclass
class FpAccumulator:
    """Exact fixed-point accumulator: value = sig * 2**lsb.

    ``lsb`` is the weight of the smallest product of two posits, so every
    product and every sum of products is held without rounding.
    """

    config: PositConfig
    sig: int = 0
    nar: bool = False
    lsb: int = field(init=False)

    def __post_init__(self):
        self.lsb = -2 * self.config.max_scale - 2 * (self.config.n - 2)

    @classmethod
    def from_value(cls, config: PositConfig, value) -> "FpAccumulator":
        acc = cls(config)
        if value is NAR:
            acc.nar = True
            return acc
        scaled = Fraction(value) / Fraction(2) ** acc.lsb
        if scaled.denominator != 1:
            raise ValueError(f"{value} is not a multiple of the accumulator LSB")
        acc.sig = scaled.numerator
        return acc

    def value(self) -> Fraction | object:
        if self.nar:
            return NAR
        return Fraction(self.sig) * Fraction(2) ** self.lsb

    def add_product(self, a: FpFields, b: FpFields) -> "FpAccumulator":
        out = FpAccumulator(self.config, self.sig, self.nar)
        if self.nar or a.nar or b.nar:
            out.nar, out.sig = True, 0
            return out
        if a.zero or b.zero:
            return out
        n = self.config.n
        prod = a.mantissa * b.mantissa
        weight = a.eff_exp + b.eff_exp - 2 * (n - 2)
        prod <<= weight - self.lsb
        out.sig += -prod if a.sign ^ b.sign else prod
        return out

    def to_fields(self) -> FpFields:
        """Normalize to an FpFields with an (n-1)-bit mantissa, truncating toward zero."""
        if self.nar:
            return FpFields(1, 0, 0, nar=True)
        if self.sig == 0:
            return FpFields(0, 0, 0, zero=True)
        width = self.config.n - 1
        mag = abs(self.sig)
        top = mag.bit_length() - 1
        if top >= width - 1:
            mant = mag >> (top - (width - 1))
        else:
            mant = mag << ((width - 1) - top)
        return FpFields(int(self.sig < 0), self.lsb + top, mant)


def mac(a: PositBits, b: PositBits, acc: FpAccumulator, decoder=decoder_optimized,
        encoder=encoder_optimized) -> tuple[FpAccumulator, PositBits]:
    """One multiply-accumulate step; returns the new accumulator and its posit encoding."""
    if a.config != b.config or a.config != acc.config:
        raise ValueError("operands and accumulator must share one posit format")
    new = acc.add_product(decoder(a), decoder(b))
    return new, encoder(new.to_fields(), a.config)


# -- verification -------------------------------------------------------------

@dataclass
class CheckResult:
    name: str
    checked: int = 0
    failed: int = 0
    counterexample: str | None = None
    unit: str = ""
    total: int | None = None

    @property
    def ok(self) -> bool:
        return self.failed == 0

    def fail(self, detail: str):
        self.failed += 1
        if self.counterexample is None:
            self.counterexample = detail

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        if self.unit:
            text = f"{self.name}: {self.checked} {self.unit} {status}"
        else:
            total = self.checked if self.total is None else self.total
            text = f"{self.name}: {self.checked - self.failed}/{total} {status}"
        if self.counterexample is not None:
            text += f" (first counterexample: {self.counterexample})"
        return text


@dataclass
class VerifyReport:
    config: PositConfig
    checks: list[CheckResult]

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def text(self) -> str:
        head = f"{self.config} datapath verification"
        lines = [head] + [c.line() for c in self.checks]
        lines.append("; ".join(c.line() for c in self.checks))
        lines.append("RESULT: " + ("PASS" if self.ok else "FAIL"))
        return "\n".join(lines) + "\n"


def _patterns(config: PositConfig, exhaustive: bool, samples: int, rng: random.Random):
    if exhaustive:
        return range(1 << config.n)
    specials = [0, config.nar_bits, 1, config.mask]
    return specials + [rng.getrandbits(config.n) for _ in range(samples)]


def verify(config: PositConfig, exhaustive: bool = True, samples: int = 4096, seed: int = 0,
           mac_accumulators: int = 3) -> VerifyReport:
    """Check both decoder/encoder structures against each other and against posit-core.

    ``exhaustive`` covers all 2**n patterns (n <= 16). MAC pairs are
    exhaustive for n <= 8 and sampled above that. ``mac_accumulators``
    selects how many of the starting values (0, maxpos/2, -maxpos/2) are used.
    """
    _require_hw(config)
    if exhaustive and config.n > MAX_EXHAUSTIVE_N:
        raise ValueError(f"exhaustive verification is limited to n <= {MAX_EXHAUSTIVE_N}; use sampling")
    rng = random.Random(seed)
    n = config.n
    dec = CheckResult("decoder")
    enc = CheckResult("encoder")
    decoded = {}
    for b in _patterns(config, exhaustive, samples, rng):
        p = PositBits(b, config)
        dec.checked += 1
        fo, fp = decoder_original(p), decoder_optimized(p)
        if fo != fp:
            dec.fail(f"{p.hex()} original={fo} optimized={fp}")
            continue
        ref = decode_exact(p)
        got = fo.value(config)
        if (ref is NAR) != (got is NAR) or (ref is not NAR and ref != got):
            dec.fail(f"{p.hex()} decodes to {got}, expected {ref}")
            continue
        decoded[b] = fo
        if fo.zero or fo.nar:
            continue
        enc.checked += 1
        eo, ep = encoder_original(fo, config), encoder_optimized(fo, config)
        if eo != p or ep != p:
            enc.fail(f"{p.hex()} re-encodes to original={eo.hex()} optimized={ep.hex()}")

    # random FP fields, including exponents outside the posit range
    span = config.max_scale + 2 * (1 << config.es) + 2
    for _ in range(samples):
        f = FpFields(rng.getrandbits(1), rng.randint(-span, span),
                     (1 << (n - 2)) | rng.getrandbits(n - 2))
        enc.checked += 1
        eo, ep = encoder_original(f, config), encoder_optimized(f, config)
        if eo != ep:
            enc.fail(f"sign={f.sign} eff_exp={f.eff_exp} mantissa={f.mantissa:#x}: "
                     f"original={eo.hex()} optimized={ep.hex()}")
            continue
        want = quantize_real(f.value(config), config)
        if decode_exact(eo) != want:
            enc.fail(f"sign={f.sign} eff_exp={f.eff_exp} mantissa={f.mantissa:#x}: "
                     f"{eo.hex()} != quantize_real = {want}")

    half = config.maxpos / 2
    accs = [FpAccumulator.from_value(config, v) for v in (0, half, -half)[:mac_accumulators]]
    exhaustive_mac = exhaustive and n <= MAX_MAC_EXHAUSTIVE_N
    if exhaustive_mac:
        pairs = ((a, b) for a in range(1 << n) for b in range(1 << n))
        mac_res = CheckResult("mac", unit="pairs")
        npairs = 1 << (2 * n)
    else:
        npairs = samples
        pairs = ((rng.getrandbits(n), rng.getrandbits(n)) for _ in range(npairs))
        mac_res = CheckResult("mac", unit="sampled pairs")
    exact_of = {}

    def value_of(b: int):
        if b not in exact_of:
            exact_of[b] = decode_exact(PositBits(b, config))
        return exact_of[b]

    acc_values = [acc.value() for acc in accs]
    for a, b in pairs:
        fa = decoded.get(a) or decoder_optimized(PositBits(a, config))
        fb = decoded.get(b) or decoder_optimized(PositBits(b, config))
        va, vb = value_of(a), value_of(b)
        nar_in = va is NAR or vb is NAR
        prod = None if nar_in else va * vb
        for acc, acc_value in zip(accs, acc_values):
            new = acc.add_product(fa, fb)
            out = encoder_optimized(new.to_fields(), config)
            where = f"a={a:#x} b={b:#x} acc={acc_value}"
            if nar_in:
                if not (new.nar and out.is_nar):
                    mac_res.fail(f"{where}: NaR not propagated")
                continue
            exact = acc_value + prod
            if new.value() != exact:
                mac_res.fail(f"{where}: accumulator {new.value()} != {exact}")
            elif out != encode_from_real(exact, config):
                mac_res.fail(f"{where}: encoded {out.hex()}")
    mac_res.checked = npairs
    return VerifyReport(config, [dec, enc, mac_res])


def verify_format(n: int, es: int, **kwargs) -> VerifyReport:
    return verify(make_config(n, es), **kwargs)
