"""Tests for deterministic, batch-invariant kernels and execution profiles."""

import math
from fractions import Fraction

import numpy as np
import pytest

from src.errors import NonFiniteInputError, PrecisionOverflowError, ShapeMismatchError
from src.kernels import (
    CALIBRATED_MISMATCH,
    EXACT,
    PROFILES,
    ExecutionProfile,
    PrecisionMode,
    ReductionOrder,
    det_sum,
    fixed_point_logprobs,
    fold_sum,
    get_profile,
    log_softmax_bi,
    matmul_bi,
    prefix_sums,
    profile_name,
    quantize,
    quantize_array,
    rmsnorm_bi,
)

ORDERS = [ReductionOrder.sequential(), ReductionOrder.pairwise_tree(), ReductionOrder.blocked(3)]


class TestPrecision:
    """Rounding onto narrower grids."""

    def test_one_is_representable_everywhere(self):
        for mode in (PrecisionMode.full64(), PrecisionMode.full32(), PrecisionMode.emulated(4)):
            assert quantize(1.0, mode) == 1.0, f"quantize(1.0) changed under {mode.describe()}"

    def test_ties_round_to_even(self):
        """1 + 2^-9 sits halfway between 1 and 1 + 2^-8 with 8 mantissa bits."""
        assert quantize(1.0 + 2.0**-9, PrecisionMode.emulated(8)) == 1.0
        assert quantize(1.0 + 3 * 2.0**-9, PrecisionMode.emulated(8)) == 1.0 + 2.0**-7

    def test_idempotent(self, rng):
        x = rng.standard_normal(500) * 10.0 ** rng.integers(-5, 5, size=500)
        for mode in (PrecisionMode.full32(), PrecisionMode.emulated(7), PrecisionMode.emulated(10, 5)):
            once = quantize_array(x, mode)
            assert np.array_equal(quantize_array(once, mode), once), f"not idempotent: {mode.describe()}"

    def test_full32_matches_numpy_cast(self, rng):
        x = rng.standard_normal(100)
        assert np.array_equal(quantize_array(x, PrecisionMode.full32()), x.astype(np.float32).astype(np.float64))

    def test_overflow_is_an_error(self):
        with pytest.raises(PrecisionOverflowError):
            quantize(70000.0, PrecisionMode.emulated(10, exponent_bits=5))
        with pytest.raises(PrecisionOverflowError):
            quantize(1e39, PrecisionMode.full32())

    def test_text_forms(self):
        assert PrecisionMode.model_validate("emulated_reduced(7)") == PrecisionMode.emulated(7)
        assert PrecisionMode.model_validate("emulated_reduced(10, 5)") == PrecisionMode.emulated(10, 5)
        with pytest.raises(ValueError):
            PrecisionMode.model_validate("bfloat16")

    def test_mantissa_range(self):
        with pytest.raises(ValueError):
            PrecisionMode.emulated(3)
        with pytest.raises(ValueError):
            PrecisionMode.emulated(24)

    def test_fixed_point_probabilities_snap_to_grid(self):
        k = np.arange(1, 17, dtype=np.float64)
        out = fixed_point_logprobs(np.log(k / 16.0), 4)
        assert np.allclose(out, np.log(k / 16.0), rtol=0, atol=1e-14)
        assert fixed_point_logprobs(np.array([0.0]), 4)[0] == 0.0

    def test_fixed_point_floor_is_one_quantum(self):
        out = fixed_point_logprobs(np.array([-50.0, -8.0, np.log(0.4 / 16.0)]), 4)
        assert np.allclose(out, np.log(1.0 / 16.0), rtol=0, atol=1e-14), f"floored values {out}"

    def test_fixed_point_error_grows_for_rare_tokens(self):
        logp = np.log(np.array([0.9, 1e-3, 1e-5]))
        err = np.abs(fixed_point_logprobs(logp, 12) - logp)
        assert err[0] < 1e-3 < err[1] < err[2]
        assert err[2] > 3.0, "a floored 1e-5 token should gain several nats"


class TestDetSum:
    """Ordered reductions."""

    def test_small_integers(self):
        for order in ORDERS:
            assert det_sum([1, 2, 3], order, PrecisionMode.full64()) == 6.0

    def test_empty_is_zero(self):
        for order in ORDERS:
            assert det_sum([], order, PrecisionMode.emulated(7)) == 0.0

    def test_non_finite_names_index(self):
        with pytest.raises(NonFiniteInputError) as info:
            det_sum([1.0, 2.0, float("nan"), 4.0], ReductionOrder.sequential(), PrecisionMode.full64())
        assert info.value.index == (2,), f"wrong index reported: {info.value.index}"

    def test_orders_disagree_under_reduced_precision(self):
        """Sequential stalls at 2048 with 10 mantissa bits; tree and blocked stay exact."""
        values = [1.0] * 4096
        mode = PrecisionMode.emulated(10)
        exact = float(sum(Fraction(v) for v in values))
        assert exact == 4096.0
        assert det_sum(values, ReductionOrder.sequential(), mode) == 2048.0
        assert det_sum(values, ReductionOrder.pairwise_tree(), mode) == 4096.0
        assert det_sum(values, ReductionOrder.blocked(64), mode) == 4096.0

    def test_odd_tail_promoted(self):
        """[a, b, c] as a tree is (a + b) + c, not a + (b + c)."""
        values = [1.0, 2.0**-9, 2.0**-9]
        mode = PrecisionMode.emulated(8)
        # 1 + 2^-9 ties back to 1; pairing b + c first would give 1 + 2^-8
        assert det_sum(values, ReductionOrder.pairwise_tree(), mode) == 1.0
        assert det_sum([2.0**-9, 2.0**-9, 1.0], ReductionOrder.pairwise_tree(), mode) == 1.0 + 2.0**-8

    def test_orders_agree_at_full_precision(self, rng):
        values = rng.uniform(0.5, 2.0, size=1000)
        results = [det_sum(values, order, PrecisionMode.full64()) for order in ORDERS]
        for r in results[1:]:
            assert abs(r - results[0]) <= 1e-10 * abs(results[0])

    def test_repeatable(self, rng):
        values = rng.standard_normal(777)
        for order in ORDERS:
            mode = PrecisionMode.emulated(7)
            assert det_sum(values, order, mode) == det_sum(values.copy(), order, mode)

    def test_fold_sum_is_left_fold(self):
        assert fold_sum([1e16, 1.0, -1e16]) == 0.0
        assert fold_sum([1e16, -1e16, 1.0]) == 1.0

    def test_prefix_sums_are_left_fold_partials(self, rng):
        values = rng.exponential(1.0, size=33)
        cdf = prefix_sums(values)
        for k in (0, 1, 16, 32):
            assert cdf[k] == fold_sum(values[: k + 1]), f"partial {k}"
        assert prefix_sums([1e16, 1.0, -1e16]).tolist() == [1e16, 1e16, 0.0]
        assert prefix_sums([]).size == 0

    def test_block_size_must_be_positive(self):
        with pytest.raises(ValueError):
            ReductionOrder.blocked(0)


class TestMatmul:
    """matmul_bi values and batch invariance."""

    def test_identity(self, rng):
        b = rng.standard_normal((3, 2))
        assert np.array_equal(matmul_bi(np.eye(3), b, EXACT), b)

    def test_hand_case(self):
        out = matmul_bi([[1, 2], [3, 4]], [[5, 6], [7, 8]], EXACT)
        assert np.array_equal(out, np.array([[19.0, 22.0], [43.0, 50.0]]))

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeMismatchError) as info:
            matmul_bi(np.zeros((2, 3)), np.zeros((4, 2)), EXACT)
        assert "(2, 3)" in str(info.value) and "(4, 2)" in str(info.value)

    @pytest.mark.parametrize("name", sorted(PROFILES))
    def test_batch_invariance(self, name, rng):
        profile = PROFILES[name]
        a = rng.standard_normal((9, 41))
        b = rng.standard_normal((41, 6))
        full = matmul_bi(a, b, profile)
        for lo, hi in ((0, 1), (0, 2), (3, 9), (8, 9)):
            part = matmul_bi(a[lo:hi], b, profile)
            assert np.array_equal(part, full[lo:hi]), f"rows {lo}:{hi} differ under {name}"

    def test_profiles_close_but_not_equal(self, rng):
        a = rng.standard_normal((4, 40))
        b = rng.standard_normal((40, 5))
        exact = matmul_bi(a, b, EXACT)
        mismatch = matmul_bi(a, b, get_profile(CALIBRATED_MISMATCH))
        assert not np.array_equal(exact, mismatch)
        assert np.max(np.abs(exact - mismatch)) < 1.0


class TestLogSoftmax:
    """Row-wise log-softmax."""

    def test_uniform_row(self):
        out = log_softmax_bi([[0.0, 0.0, 0.0]], EXACT)
        assert np.allclose(out, -math.log(3.0), atol=1e-15)

    def test_matches_reference(self):
        out = log_softmax_bi([[1.0, 2.0, 3.0]], EXACT)[0]
        lse = 3.0 + math.log(math.exp(-2.0) + math.exp(-1.0) + 1.0)
        expected = [1.0 - lse, 2.0 - lse, 3.0 - lse]
        assert np.allclose(out, expected, rtol=0, atol=1e-12)

    def test_rows_normalise(self, rng):
        out = log_softmax_bi(rng.standard_normal((20, 17)) * 5, EXACT)
        lse = np.log(np.exp(out).sum(axis=1))
        assert np.max(np.abs(lse)) < 1e-12

    def test_empty_row_rejected(self):
        with pytest.raises(ShapeMismatchError):
            log_softmax_bi(np.zeros((2, 0)), EXACT)

    @pytest.mark.parametrize("name", sorted(PROFILES))
    def test_batch_invariance(self, name, rng):
        profile = PROFILES[name]
        logits = rng.standard_normal((7, 23)) * 3
        full = log_softmax_bi(logits, profile)
        for i in range(7):
            assert np.array_equal(log_softmax_bi(logits[i : i + 1], profile)[0], full[i])


class TestRmsNorm:
    """RMSNorm over the last axis."""

    def test_zeros(self):
        assert np.array_equal(rmsnorm_bi(np.zeros(4), np.ones(4), 1e-6, EXACT), np.zeros(4))

    def test_hand_case(self):
        out = rmsnorm_bi(np.array([3.0, 4.0]), np.ones(2), 1e-12, EXACT)
        assert np.allclose(out, [3 / math.sqrt(12.5), 4 / math.sqrt(12.5)], atol=1e-9)

    def test_length_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            rmsnorm_bi(np.ones(3), np.ones(4), 1e-6, EXACT)

    def test_eps_must_be_positive(self):
        with pytest.raises(ValueError):
            rmsnorm_bi(np.ones(3), np.ones(3), 0.0, EXACT)

    @pytest.mark.parametrize("name", sorted(PROFILES))
    def test_alone_equals_in_batch_of_64(self, name, rng):
        profile = PROFILES[name]
        rows = rng.standard_normal((64, 12))
        gamma = rng.uniform(0.5, 1.5, size=12)
        batch = rmsnorm_bi(rows, gamma, 1e-6, profile)
        assert np.array_equal(rmsnorm_bi(rows[17], gamma, 1e-6, profile), batch[17])


class TestProfiles:
    """Shipped execution profiles."""

    def test_names_round_trip(self):
        for name, profile in PROFILES.items():
            assert profile_name(profile) == name
            assert profile.describe()["name"] == name

    def test_custom_profile_name(self):
        assert profile_name(ExecutionProfile(tile=5)) == "custom"

    def test_profile_from_name(self):
        assert ExecutionProfile.model_validate("fp16_blocked") == PROFILES["fp16_blocked"]

    def test_unknown_profile(self):
        with pytest.raises(ValueError):
            get_profile("fp8")

    def test_exact_profile_is_plain_float64(self):
        assert EXACT.accum.is_exact
        assert not EXACT.intermediate_rounding
        assert EXACT.prob_frac_bits is None

    def test_fixed_point_profile(self):
        profile = get_profile(CALIBRATED_MISMATCH)
        assert profile.prob_frac_bits == 12
        assert profile.describe()["prob_frac_bits"] == 12
        for bits in (3, 31):
            with pytest.raises(ValueError):
                ExecutionProfile(prob_frac_bits=bits)

    def test_fixed_point_profile_puts_probabilities_on_grid(self, rng):
        logits = rng.standard_normal((4, 12)) * 3.0
        logp = log_softmax_bi(logits, get_profile(CALIBRATED_MISMATCH))
        units = np.exp(logp) * 2.0**12
        assert np.allclose(units, np.rint(units), rtol=0, atol=1e-6)
        assert np.all(units >= 1.0 - 1e-9)
