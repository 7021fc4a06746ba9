import numpy as np
import pytest

from fliqs.errors import FormatSpecError
from fliqs.formats import (
    BF16,
    SEARCH_SPACES,
    NumericFormat,
    float_format,
    int_format,
    max_representable,
    parse_format,
    representable_values,
    resolve_format,
    resolve_search_space,
    total_bitwidth,
)


class TestParsing:
    def test_int_grammar(self):
        f = parse_format("INT4")
        assert f.kind == "int" and f.bits == 4
        assert f.name == "INT4"

    def test_float_grammar(self):
        f = parse_format("E4M3")
        assert f.kind == "float"
        assert (f.exp_bits, f.mantissa_bits) == (4, 3)
        assert total_bitwidth(f) == 8

    def test_bf16_grammar(self):
        assert parse_format("BF16") is BF16
        assert parse_format("bf16") is BF16

    def test_round_trip_through_name(self):
        for name in ("INT2", "INT8", "INT16", "E1M1", "E6M7", "BF16"):
            assert parse_format(name).name == name

    def test_malformed_names_rejected(self):
        for bad in ("INT", "E4", "M3E4", "FP8", "", "INT4.5", "E4M3X"):
            with pytest.raises(FormatSpecError):
                parse_format(bad)

    def test_out_of_range_widths_rejected(self):
        with pytest.raises(FormatSpecError):
            parse_format("INT1")
        with pytest.raises(FormatSpecError):
            parse_format("INT33")
        with pytest.raises(FormatSpecError):
            parse_format("E7M1")
        with pytest.raises(FormatSpecError):
            parse_format("E4M8")
        with pytest.raises(FormatSpecError):
            parse_format("E0M3")

    def test_unknown_kind_rejected(self):
        with pytest.raises(FormatSpecError):
            NumericFormat("fixed", bits=8)

    def test_resolve_accepts_both(self):
        f = int_format(6)
        assert resolve_format(f) is f
        assert resolve_format("INT6") == f


class TestBitwidth:
    def test_int_width(self):
        assert total_bitwidth(int_format(4)) == 4
        assert total_bitwidth(int_format(16)) == 16

    def test_float_width_includes_sign(self):
        assert total_bitwidth(float_format(4, 3)) == 8
        assert total_bitwidth(float_format(2, 1)) == 4

    def test_bf16_width(self):
        assert total_bitwidth(BF16) == 16


class TestMaxRepresentable:
    def test_int_is_unit(self):
        assert max_representable(int_format(4)) == 1.0
        assert max_representable(int_format(8)) == 1.0

    def test_e4m3_is_240(self):
        assert max_representable(float_format(4, 3)) == 240.0

    def test_e2m1_is_3(self):
        assert max_representable(float_format(2, 1)) == 3.0

    def test_e5m2_matches_formula(self):
        # bias 16, top exponent code 31 -> 2^15, significand 2 - 2^-2
        assert max_representable(float_format(5, 2)) == 1.75 * 2.0**15

    def test_bf16_refuses(self):
        with pytest.raises(FormatSpecError):
            max_representable(BF16)


class TestEnumeration:
    def test_int4_grid(self):
        vals = representable_values(int_format(4))
        expected = np.arange(-7, 8) / 7.0
        assert np.array_equal(vals, expected)
        assert len(vals) == 15

    def test_e2m1_value_set(self):
        vals = representable_values(float_format(2, 1))
        mags = [0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0]
        expected = sorted([-m for m in mags[1:]] + mags)
        assert np.allclose(vals, expected)
        assert vals[-1] == 3.0
        assert len(vals) == 15

    def test_values_sorted_and_symmetric(self):
        for fmt in (int_format(5), float_format(3, 2), float_format(4, 3)):
            vals = representable_values(fmt)
            assert np.all(np.diff(vals) > 0)
            assert np.array_equal(vals, -vals[::-1])
            assert 0.0 in vals

    def test_subnormals_present(self):
        # E4M3: bias 8, so the subnormal step is 2^(1-8-3) = 2^-10
        vals = representable_values(float_format(4, 3))
        positive = vals[vals > 0]
        assert positive[0] == 2.0**-10
        # spacing in the subnormal binade is uniform
        assert np.allclose(np.diff(positive[:7]), 2.0**-10)

    def test_wide_formats_refuse_enumeration(self):
        with pytest.raises(FormatSpecError):
            representable_values(int_format(11))
        with pytest.raises(FormatSpecError):
            representable_values(BF16)
        # 10 bits is the widest allowed
        assert len(representable_values(int_format(10))) == 2**9 * 2 - 1


class TestSearchSpaces:
    def test_small_int_space(self):
        names = [f.name for f in resolve_search_space("FLIQS-S-int")]
        assert names == ["INT4", "INT8", "BF16"]

    def test_large_int_space(self):
        names = [f.name for f in resolve_search_space("FLIQS-L-int")]
        assert names == ["INT4", "INT5", "INT6", "INT7", "INT8", "BF16"]

    def test_small_fp_space(self):
        names = [f.name for f in resolve_search_space("FLIQS-S-fp")]
        assert names == ["E2M1", "E4M3", "BF16"]

    def test_large_fp_space_has_16_entries(self):
        space = resolve_search_space("FLIQS-L-fp")
        assert len(space) == 16
        assert space[-1] is BF16

    def test_explicit_list(self):
        space = resolve_search_space(["INT4", "E4M3"])
        assert [f.name for f in space] == ["INT4", "E4M3"]

    def test_unknown_space_name(self):
        with pytest.raises(FormatSpecError):
            resolve_search_space("FLIQS-XL")

    def test_empty_list_rejected(self):
        with pytest.raises(FormatSpecError):
            resolve_search_space([])

    def test_registry_names_parse(self):
        for names in SEARCH_SPACES.values():
            for n in names:
                parse_format(n)
