import itertools

import numpy as np
import pytest

from fmtlab import formats
from fmtlab.errors import ConfigError
from fmtlab.formats import (
    E2M1, E2M3, E4M3, FormatSpec, FpLayout, IntLayout, ScaleMode, SpecialCodes,
    build_codebook, lookup_format, register_format, unregister_format,
)

ml_dtypes = pytest.importorskip("ml_dtypes")


def _all_finite_values(dtype, bits):
    """Decode every bit pattern of an ml_dtypes float type."""
    # sub-byte types store their pattern in the low bits of one byte
    vals = np.arange(2**bits, dtype=np.uint8).view(dtype).astype(np.float64)
    vals = vals[np.isfinite(vals)]
    return np.unique(vals)


@pytest.mark.parametrize("layout, dtype, bits", [
    (E4M3, "float8_e4m3fn", 8),
    (E2M3, "float6_e2m3fn", 6),
    (E2M1, "float4_e2m1fn", 4),
])
def test_codebook_matches_ml_dtypes(layout, dtype, bits):
    expected = _all_finite_values(getattr(ml_dtypes, dtype), bits)
    cb = build_codebook(layout)
    np.testing.assert_array_equal(cb.values, expected)


@pytest.mark.parametrize("layout, qmax, nmin, smin", [
    (E4M3, 448.0, 2.0**-6, 2.0**-9),
    (E2M3, 7.5, 1.0, 0.125),
    (E2M1, 6.0, 1.0, 0.5),
])
def test_layout_constants(layout, qmax, nmin, smin):
    assert layout.q_max == qmax
    assert layout.n_min == nmin
    assert layout.s_min == smin
    assert layout.min_positive == smin
    assert layout.dynamic_range == pytest.approx(qmax / smin)


def test_codebook_is_symmetric_and_sorted():
    for layout in (E4M3, E2M3, E2M1):
        v = build_codebook(layout).values
        assert np.all(np.diff(v) > 0)
        np.testing.assert_array_equal(v, -v[::-1])
        assert 0.0 in v


def test_codebook_is_read_only():
    cb = build_codebook(E2M1)
    with pytest.raises(ValueError):
        cb.values[0] = 1.0


def test_even_flags_follow_mantissa_lsb():
    cb = build_codebook(E2M1)
    pos = cb.values >= 0
    # positive E2M1 magnitudes 0, .5, 1, 1.5, 2, 3, 4, 6 alternate even/odd encodings
    even_pos = dict(zip(cb.values[pos], cb.even[pos]))
    assert even_pos[4.0]
    assert not even_pos[3.0]
    assert not even_pos[6.0]
    assert even_pos[2.0]


def test_ieee_special_codes_drop_top_binade():
    e5m2 = FpLayout(5, 2, 15, SpecialCodes.IEEE)
    assert e5m2.q_max == 57344.0
    none = FpLayout(5, 2, 15, SpecialCodes.NONE)
    assert none.q_max == 114688.0


def test_int_layout():
    el = IntLayout(8)
    assert (el.q_max, el.q_min) == (127, -127)
    assert IntLayout(8, symmetric=False).q_min == -128
    assert IntLayout(4).q_max == 7


def test_builtin_table():
    rows = {n: lookup_format(n) for n in formats.BUILTIN_NAMES}
    assert rows["MXFP8"].block_size == 32
    assert rows["NVFP4"].block_size == 16
    assert rows["NVFP4"].scale_mode is ScaleMode.E4M3_TWO_LEVEL
    assert rows["MXINT8"].element.q_max == 127
    assert rows["MXFP6"].element.q_max == 7.5
    assert rows["MXFP8"].rho_model == 1.5
    assert rows["NVINT4"].rho_model == 1.0
    for spec in rows.values():
        d = spec.to_dict()
        assert d["name"] == spec.name
        assert d["max_value"] == float(spec.element.q_max)


def test_lookup_unknown_lists_names():
    with pytest.raises(ConfigError, match="MXFP8"):
        lookup_format("MXFP9")


def test_register_and_unregister():
    spec = FormatSpec("TESTINT3", IntLayout(3), 8, ScaleMode.EXACT)
    register_format(spec)
    try:
        assert lookup_format("TESTINT3") is spec
        with pytest.raises(ConfigError):
            register_format(spec)
        register_format(spec, overwrite=True)
    finally:
        unregister_format("TESTINT3")
    with pytest.raises(ConfigError):
        lookup_format("TESTINT3")


def test_builtins_protected():
    with pytest.raises(ConfigError):
        register_format(FormatSpec("MXFP8", E2M1, 32, ScaleMode.EXACT), overwrite=True)
    with pytest.raises(ConfigError):
        unregister_format("MXINT8")


@pytest.mark.parametrize("e, m", list(itertools.product([1, 2, 3, 4, 5], [0, 1, 2, 3])))
def test_codebook_size(e, m):
    cb = build_codebook(FpLayout(e, m, 2 ** (e - 1) - 1))
    # all patterns are finite: 2^(1+e+m) encodings, with +0/-0 merged
    assert len(cb.values) == 2 ** (1 + e + m) - 1
