"""Q-format arithmetic: frozen examples, big-integer oracles, properties."""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from evofarm.fixedpoint import (
    ACC_BITS,
    ACC_RADIX,
    ACTIVATION_FORMAT,
    WEIGHT_FORMAT,
    Accumulator,
    QFormat,
    QValue,
    dequantize,
    mac,
    quantize,
    quantize_array,
    requantize,
    requantize_array,
    requantize_relu,
    rne_shift,
)

W = WEIGHT_FORMAT
A = ACTIVATION_FORMAT


class TestFormats:
    def test_stock_formats(self):
        assert (W.bit_width, W.radix) == (16, 13)
        assert (A.bit_width, A.radix) == (16, 6)
        assert ACC_RADIX == 19
        assert ACC_BITS == 48

    def test_raw_range(self):
        assert W.raw_min == -32768
        assert W.raw_max == 32767
        assert A.scale == 64

    def test_bad_formats_rejected(self):
        with pytest.raises(ValueError):
            QFormat(33, 4)
        with pytest.raises(ValueError):
            QFormat(16, 16)
        with pytest.raises(ValueError):
            QFormat(16, -1)

    def test_raw_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            QValue(32768, W)
        with pytest.raises(ValueError):
            QValue(-32769, W)


class TestQuantize:
    def test_one(self):
        assert quantize(1.0, W).raw == 8192

    def test_saturates_at_four(self):
        # 4.0 * 2^13 = 32768 is one past raw_max.
        assert quantize(4.0, W).raw == 32767

    def test_half_at_radix_six(self):
        assert quantize(0.5, A).raw == 32

    def test_negative_saturation(self):
        assert quantize(-100.0, W).raw == -32768

    def test_ties_to_even(self):
        # 0.5 raw units above an even raw stays on the even side.
        step = 1.0 / W.scale
        assert quantize(2.5 * step, W).raw == 2
        assert quantize(3.5 * step, W).raw == 4


class TestDequantize:
    def test_one(self):
        assert dequantize(QValue(8192, W)) == 1.0

    def test_sign_symmetry(self):
        assert dequantize(QValue(-8192, W)) == -1.0

    def test_fraction(self):
        assert dequantize(QValue(33, A)) == 0.515625


class TestMac:
    def test_one_times_one(self):
        acc = mac(Accumulator(), QValue(8192, W), QValue(64, A))
        assert acc.raw == 524288
        assert acc.radix == 19

    def test_signed_product(self):
        acc = mac(Accumulator(), QValue(-4096, W), QValue(128, A))
        assert acc.raw == -524288

    def test_radix_mismatch_rejected(self):
        with pytest.raises(ValueError):
            mac(Accumulator(0, 10), QValue(8192, W), QValue(64, A))

    def test_256_term_dot_product_matches_bigint_oracle(self):
        gen = np.random.default_rng(2024)
        w_raw = gen.integers(W.raw_min, W.raw_max + 1, size=256)
        a_raw = gen.integers(A.raw_min, A.raw_max + 1, size=256)
        acc = Accumulator()
        for wr, ar in zip(w_raw, a_raw):
            acc = mac(acc, QValue(int(wr), W), QValue(int(ar), A))
        oracle = sum(int(wr) * int(ar) for wr, ar in zip(w_raw, a_raw))
        assert acc.raw == oracle
        assert abs(oracle) < 1 << (ACC_BITS - 1)


class TestRequantize:
    def test_relu_clamps_negative(self):
        assert requantize_relu(Accumulator(-1000), A).raw == 0

    def test_exact_shift(self):
        assert requantize_relu(Accumulator(524288), A).raw == 64

    def test_saturation(self):
        # 2^30 * 2^(6-19) = 131072, far past raw_max.
        assert (1 << 30) >> (ACC_RADIX - A.radix) == 131072
        assert requantize_relu(Accumulator(1 << 30), A).raw == 32767

    def test_no_relu_keeps_negative(self):
        assert requantize(Accumulator(-524288), A).raw == -64

    def test_finer_radix_rejected(self):
        with pytest.raises(ValueError):
            requantize(Accumulator(0, 5), A)


class TestRneShift:
    @given(st.integers(-(1 << 47), 1 << 47), st.integers(0, 20))
    def test_matches_fraction_oracle(self, value, shift):
        got = rne_shift(value, shift)
        exact = Fraction(value, 1 << shift)
        lo = exact.numerator // exact.denominator
        frac = exact - lo
        if frac > Fraction(1, 2) or (frac == Fraction(1, 2) and lo % 2):
            expect = lo + 1
        else:
            expect = lo
        assert got == expect


real_range = st.floats(
    min_value=-8.0, max_value=8.0, allow_nan=False, allow_infinity=False
)


class TestProperties:
    @given(real_range)
    def test_roundtrip_error_bounded(self, x):
        q = quantize(x, W)
        clamped = min(max(x, W.raw_min / W.scale), W.raw_max / W.scale)
        assert abs(dequantize(q) - clamped) <= 2.0 ** (-W.radix - 1)

    @given(real_range, real_range)
    def test_quantize_monotone(self, x, y):
        if x > y:
            x, y = y, x
        assert quantize(x, W).raw <= quantize(y, W).raw

    @given(st.lists(st.tuples(st.integers(W.raw_min, W.raw_max),
                              st.integers(A.raw_min, A.raw_max)),
                    min_size=1, max_size=64),
           st.randoms(use_true_random=False))
    def test_mac_term_order_invariant(self, terms, rnd):
        def run(seq):
            acc = Accumulator()
            for wr, ar in seq:
                acc = mac(acc, QValue(wr, W), QValue(ar, A))
            return acc.raw

        shuffled = list(terms)
        rnd.shuffle(shuffled)
        assert run(terms) == run(shuffled)

    @given(st.integers(-(1 << 40), 1 << 40))
    def test_relu_range(self, raw):
        out = requantize_relu(Accumulator(raw), A).raw
        assert 0 <= out <= 32767

    @given(st.lists(real_range, min_size=1, max_size=64))
    def test_quantize_array_matches_scalar(self, xs):
        arr = quantize_array(np.array(xs), W)
        assert arr.dtype == np.int16
        assert [int(v) for v in arr] == [quantize(x, W).raw for x in xs]

    @given(st.lists(st.integers(-(1 << 40), 1 << 40), min_size=1, max_size=64),
           st.booleans())
    def test_requantize_array_matches_scalar(self, raws, relu):
        arr = requantize_array(np.array(raws, dtype=np.float64), ACC_RADIX,
                               A, relu=relu)
        scalar = requantize_relu if relu else requantize
        assert [int(v) for v in arr] == [scalar(Accumulator(r), A).raw for r in raws]
