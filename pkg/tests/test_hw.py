import random
from fractions import Fraction

import pytest

from posittrain.hw import (
    BitVec,
    FpAccumulator,
    FpFields,
    decoder_optimized,
    decoder_original,
    encoder_optimized,
    encoder_original,
    lod,
    lzd,
    mac,
    verify,
    verify_format,
)
from posittrain.posit import NAR, PositBits, decode_exact, encode_from_real, make_config, quantize_real

P51 = make_config(5, 1)
DECODERS = [decoder_original, decoder_optimized]
ENCODERS = [encoder_original, encoder_optimized]


def pb(s, config=P51):
    return PositBits(int(s, 2), config)


class TestBitVec:
    def test_detectors(self):
        assert lzd(BitVec(7, 0b0001011)) == 3
        assert lod(BitVec(4, 0b1101)) == 2
        assert lod(BitVec(4, 0b1111)) == 4
        assert lzd(BitVec(4, 0)) == 4

    def test_shifts(self):
        v = BitVec(6, 0b101100)
        assert v.shl(2) == BitVec(6, 0b110000)
        assert v.shr(2) == BitVec(6, 0b001011)
        assert v.shr(2, fill=1) == BitVec(6, 0b111011)
        assert v.shr(9, fill=1) == BitVec(6, 0b111111)
        assert v.top(3) == 0b101 and v.msb() == 1
        assert v.resize(8) == BitVec(8, 0b10110000)
        assert v.resize(3) == BitVec(3, 0b101)

    def test_width_checked(self):
        with pytest.raises(ValueError):
            BitVec(3, 8)
        with pytest.raises(ValueError):
            BitVec(0)


class TestDecoder:
    @pytest.mark.parametrize("decoder", DECODERS)
    @pytest.mark.parametrize("bits, eff_exp, value", [
        ("01101", 3, Fraction(8)),
        ("00001", -6, Fraction(1, 64)),
        ("00101", -2, Fraction(3, 8)),
        ("10111", 0, Fraction(-3, 2)),
        ("11011", -2, Fraction(-3, 8)),
    ])
    def test_examples(self, decoder, bits, eff_exp, value):
        f = decoder(pb(bits))
        assert f.eff_exp == eff_exp
        assert f.mantissa >> (P51.n - 2) == 1
        assert f.value(P51) == value

    @pytest.mark.parametrize("decoder", DECODERS)
    def test_specials(self, decoder):
        assert decoder(pb("10000")).nar
        assert decoder(pb("00000")).zero

    @pytest.mark.parametrize("n, es", [(3, 0), (5, 1), (8, 0), (8, 1), (8, 2), (9, 3), (12, 1)])
    def test_variants_agree_and_match_core(self, n, es):
        config = make_config(n, es)
        for b in range(1 << n):
            p = PositBits(b, config)
            a, o = decoder_original(p), decoder_optimized(p)
            assert a == o
            v = a.value(config)
            assert (v is NAR) if p.is_nar else v == decode_exact(p)

    def test_needs_three_bits(self):
        with pytest.raises(ValueError):
            decoder_original(PositBits(1, make_config(2, 0)))


class TestEncoder:
    @pytest.mark.parametrize("encoder", ENCODERS)
    def test_examples(self, encoder):
        one = 1 << (P51.n - 2)
        assert encoder(FpFields(0, 3, one), P51) == pb("01101")
        assert encoder(FpFields(0, 0, 0, zero=True), P51) == pb("00000")
        assert encoder(FpFields(0, 9, one), P51) == pb("01111")
        assert encoder(FpFields(1, 9, one), P51) == pb("10001")
        assert encoder(FpFields(0, -7, one), P51) == pb("00000")
        assert encoder(FpFields(1, 0, 0, nar=True), P51).is_nar

    @pytest.mark.parametrize("n, es", [(3, 0), (5, 1), (8, 0), (8, 1), (8, 2), (10, 3)])
    def test_round_trip(self, n, es):
        config = make_config(n, es)
        for b in range(1 << n):
            p = PositBits(b, config)
            for enc in ENCODERS:
                assert enc(decoder_original(p), config) == p

    @pytest.mark.parametrize("n, es", [(5, 1), (8, 1), (8, 2), (16, 2)])
    def test_random_fields_match_quantize(self, n, es):
        config = make_config(n, es)
        rng = random.Random(n * 10 + es)
        span = config.max_scale + 2 * n
        for _ in range(3000):
            f = FpFields(rng.getrandbits(1), rng.randint(-span, span),
                         (1 << (n - 2)) | rng.getrandbits(n - 2))
            expected = quantize_real(f.value(config), config)
            got = [enc(f, config) for enc in ENCODERS]
            assert got[0] == got[1]
            assert decode_exact(got[0]) == expected


class TestMac:
    def test_example(self):
        acc, out = mac(pb("01010"), pb("01011"), FpAccumulator(P51))
        assert acc.value() == 6
        assert out == pb("01100")

    def test_zero_operand_leaves_accumulator(self):
        acc0 = FpAccumulator.from_value(P51, Fraction(3, 8))
        acc, out = mac(pb("00000"), pb("01110"), acc0)
        assert acc.value() == Fraction(3, 8)
        assert out == pb("00101")

    def test_nar_propagates(self):
        acc, out = mac(pb("10000"), pb("01000"), FpAccumulator(P51))
        assert acc.value() is NAR and out.is_nar
        acc, out = mac(pb("01000"), pb("01000"), acc)
        assert out.is_nar

    def test_chain_matches_exact_sum(self):
        config = make_config(8, 1)
        rng = random.Random(3)
        acc, total = FpAccumulator(config), Fraction(0)
        for _ in range(200):
            a, b = PositBits(rng.getrandbits(8), config), PositBits(rng.getrandbits(8), config)
            if a.is_nar or b.is_nar:
                continue
            acc, out = mac(a, b, acc, decoder_original, encoder_original)
            total += decode_exact(a) * decode_exact(b)
            assert acc.value() == total
            assert out == encode_from_real(total, config)

    def test_format_mismatch(self):
        with pytest.raises(ValueError):
            mac(pb("01000"), PositBits(1, make_config(8, 1)), FpAccumulator(P51))

    def test_off_grid_accumulator_rejected(self):
        with pytest.raises(ValueError):
            FpAccumulator.from_value(P51, Fraction(1, 3))


class TestVerify:
    def test_small_format_report(self):
        report = verify_format(5, 1)
        assert report.ok
        text = report.text()
        assert "decoder: 32/32 PASS" in text
        assert "mac: 1024 pairs PASS" in text
        assert text.endswith("RESULT: PASS\n")

    def test_sampled_large_format(self):
        report = verify(make_config(32, 2), exhaustive=False, samples=300)
        assert report.ok, report.text()

    def test_counterexample_reported(self, monkeypatch):
        import posittrain.hw as hw

        real = hw.decoder_optimized

        def broken(p):
            f = real(p)
            return FpFields(f.sign, f.eff_exp + 1, f.mantissa, f.zero, f.nar) if p.bits == 0b01101 else f

        monkeypatch.setattr(hw, "decoder_optimized", broken)
        report = hw.verify(P51, mac_accumulators=1)
        assert not report.ok
        assert "0x0d" in report.text() or "0xd" in report.text()
        assert "RESULT: FAIL" in report.text()
