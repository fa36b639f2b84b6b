from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mitiq_forge.readout import (ClampWarning, NonInvertibleError, ReadoutError, ReadoutRates, biased_parity_N1,
                                 biased_parity_N2_bounds, biased_parity_approx, biased_parity_exact,
                                 confusion_propagate, mitigate_parity, offset_magnitude, parity_of,
                                 parity_response, parity_signs, random_distributions, residual_table,
                                 unbiased_parity)

rates = st.floats(0.0, 0.3)


class TestRates:
    def test_range(self):
        with pytest.raises(ReadoutError):
            ReadoutRates((0.5,), (0.1,))
        with pytest.raises(ReadoutError):
            ReadoutRates((0.1, 0.1), (0.1,))

    def test_broadcast(self):
        assert ReadoutRates((0.1,), (0.2,)).broadcast(3) == ReadoutRates.uniform(0.1, 0.2, 3)
        with pytest.raises(ReadoutError):
            ReadoutRates.uniform(0.1, 0.2, 2).broadcast(3)


class TestExactAlgebra:
    @pytest.mark.parametrize("N", [1, 2, 3, 4])
    def test_confusion_matrix_oracle(self, N):
        rng = np.random.default_rng(N)
        signs = parity_signs(N)
        for f in random_distributions(N, 200, rng):
            r = ReadoutRates(tuple(rng.uniform(0, 0.3, N)), tuple(rng.uniform(0, 0.3, N)))
            assert abs(biased_parity_exact(f, r) - signs @ confusion_propagate(f, r)) < 1e-12

    def test_no_noise(self):
        f = np.array([0.1, 0.2, 0.3, 0.4])
        assert biased_parity_exact(f, ReadoutRates.uniform(0, 0, 2)) == pytest.approx(parity_of(f))

    def test_bad_distribution(self):
        with pytest.raises(ReadoutError):
            parity_of(np.array([0.5, 0.5, 0.1]))
        with pytest.raises(ReadoutError):
            parity_of(np.array([0.7, 0.7]))

    @given(rates, rates, st.floats(0, 1))
    @settings(max_examples=50)
    def test_single_bit_exact(self, e0, e1, f0):
        f = np.array([f0, 1 - f0])
        r = ReadoutRates((e0,), (e1,))
        assert biased_parity_N1(parity_of(f), r) == pytest.approx(biased_parity_exact(f, r), abs=1e-12)

    def test_single_bit_example(self):
        # |1> read with e1 = 0.1: <P~> = -0.9 + 0.1 = -0.8
        assert biased_parity_N1(-1.0, ReadoutRates((0.05,), (0.1,))) == pytest.approx(-0.8)


class TestTwoBitBounds:
    def test_midpoint_example(self):
        lo, hi, mid = biased_parity_N2_bounds(1.0, ReadoutRates.uniform(0.05, 0.1, 2))
        assert mid == pytest.approx(0.85 ** 2 + 0.05 ** 2)
        assert lo <= mid <= hi

    def test_rates_swapped(self):
        a = biased_parity_N2_bounds(0.3, ReadoutRates.uniform(0.1, 0.05, 2))
        b = biased_parity_N2_bounds(0.3, ReadoutRates.uniform(0.05, 0.1, 2))
        assert a == b

    def test_nonuniform_rejected(self):
        with pytest.raises(ReadoutError):
            biased_parity_N2_bounds(0.3, ReadoutRates((0.05, 0.06), (0.1, 0.1)))

    @given(rates, rates, st.integers(0, 10_000))
    @settings(max_examples=50)
    def test_bounds_hold(self, e0, e1, seed):
        r = ReadoutRates.uniform(e0, e1, 2)
        for f in random_distributions(2, 20, np.random.default_rng(seed)):
            lo, hi, _ = biased_parity_N2_bounds(parity_of(f), r)
            exact = biased_parity_exact(f, r)
            assert lo - 1e-12 <= exact <= hi + 1e-12

    def test_residual_table_bounds(self):
        t = residual_table(2, 2000, 0.05, 0.1, seed=3)
        assert np.all(t["lo"] <= t["exact"] + 1e-12) and np.all(t["exact"] <= t["hi"] + 1e-12)


class TestManyBits:
    def test_warns_below_three(self):
        with pytest.warns(UserWarning):
            biased_parity_approx(0.5, ReadoutRates.uniform(0.05, 0.1, 2))

    def test_product(self):
        assert biased_parity_approx(0.5, ReadoutRates.uniform(0.05, 0.1, 4)) == pytest.approx(0.5 * 0.85 ** 4)

    def test_offset_suppressed(self):
        mags = [offset_magnitude(N, 0.05, 0.1) for N in range(1, 12)]
        assert mags[0] == pytest.approx(0.05)
        assert all(b < a for a, b in zip(mags, mags[1:]))

    def test_rms_shrinks_with_N(self):
        rms = {N: residual_table(N, 1000, 0.05, 0.1, seed=N)["rms"] for N in (3, 10)}
        assert rms[10] < 0.2 * rms[3]

    def test_monte_carlo_three_bits(self):
        # sampled flips against the closed form
        rng = np.random.default_rng(0)
        f = random_distributions(3, 1, rng)[0]
        r = ReadoutRates.uniform(0.05, 0.1, 3)
        shots = 200_000
        idx = rng.choice(8, size=shots, p=f)
        bits = ((idx[:, None] >> np.arange(3)) & 1).astype(bool)
        u = rng.random(bits.shape)
        bits ^= np.where(bits, u < 0.1, u < 0.05)
        parity = np.where(bits.sum(axis=1) % 2 == 0, 1.0, -1.0)
        assert abs(parity.mean() - biased_parity_exact(f, r)) < 4 * parity.std() / np.sqrt(shots)


class TestMitigation:
    @pytest.mark.parametrize("N", [1, 2])
    def test_inverse_of_response(self, N):
        r = ReadoutRates.uniform(0.03, 0.08, N)
        slope, offset = parity_response(r.e0, r.e1, N)
        m = mitigate_parity(0.4 * slope + offset, 0.01, r)
        assert m.value == pytest.approx(0.4)
        assert m.sigma == pytest.approx(0.01 / slope)
        assert not m.clamped

    def test_single_bit_exact_inverse(self):
        r = ReadoutRates((0.05,), (0.1,))
        f = np.array([0.3, 0.7])
        assert mitigate_parity(biased_parity_exact(f, r), 0.0, r).value == pytest.approx(parity_of(f))

    def test_offset_dropped_for_many_bits(self):
        r = ReadoutRates.uniform(0.05, 0.1, 4)
        assert parity_response(r.e0, r.e1, 4) == (pytest.approx(0.85 ** 4), 0.0)
        assert mitigate_parity(0.85 ** 4 * 0.5, 0.0, r).value == pytest.approx(0.5)

    def test_clamp(self):
        r = ReadoutRates.uniform(0.2, 0.2, 3)
        with pytest.warns(ClampWarning):
            m = mitigate_parity(0.3, 0.001, r)
        assert m.clamped
        assert m.value == pytest.approx(1 + 3 * m.sigma)

    def test_no_warning_inside_range(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            mitigate_parity(0.2, 0.01, ReadoutRates.uniform(0.05, 0.05, 3))

    def test_non_invertible(self):
        with pytest.raises(NonInvertibleError):
            mitigate_parity(0.0, 0.01, ReadoutRates.uniform(0.4999999, 0.4999999, 1))


def as_counts(f: np.ndarray) -> dict[str, float]:
    N = f.size.bit_length() - 1
    return {"".join(str((j >> i) & 1) for i in range(N)): float(p) for j, p in enumerate(f)}


class TestUnbiasedParity:
    @pytest.mark.parametrize("N", [1, 2, 3, 4])
    def test_confusion_matrix_oracle(self, N):
        rng = np.random.default_rng(N)
        for f in random_distributions(N, 50, rng):
            e0, e1 = rng.uniform(0, 0.3, N), rng.uniform(0, 0.3, N)
            noisy = confusion_propagate(f, ReadoutRates(tuple(e0), tuple(e1)))
            assert unbiased_parity(as_counts(noisy), e0, e1) == pytest.approx(parity_of(f), abs=1e-12)

    def test_magnetized_pair(self):
        # |00>: the midpoint inversion overshoots, the per-shot inverse does not
        r = ReadoutRates.uniform(0.05, 0.1, 2)
        noisy = confusion_propagate(np.array([1.0, 0, 0, 0]), r)
        assert mitigate_parity(float(parity_signs(2) @ noisy), 0.1, r).value > 1.1
        assert unbiased_parity(as_counts(noisy), r.e0, r.e1) == pytest.approx(1.0)

    def test_integer_counts(self):
        assert unbiased_parity({"0": 3, "1": 1}, [0.0], [0.0]) == pytest.approx(0.5)

    def test_errors(self):
        with pytest.raises(ReadoutError):
            unbiased_parity({}, [0.1], [0.1])
        with pytest.raises(NonInvertibleError):
            unbiased_parity({"0": 1}, [0.5], [0.5])
