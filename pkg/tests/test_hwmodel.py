import json

import numpy as np
import pytest

from fbmcsim.filters import freq_response, gen_filter, truncate_normalize
from fbmcsim.hwmodel import (
    COEFF_FMT,
    DATA_FMT,
    FixedPointFormat,
    complexity_report,
    csd_encode,
    csd_multiply,
    dequantize,
    error_bound,
    fs_filter_fixed,
    fs_filter_reference,
    quantize,
    quantize_taps,
    split_even_odd,
)

M = 512


def _rx(name="NPR1", n_g=7, m=M):
    return truncate_normalize(freq_response(gen_filter(name, m)), n_g)


def _bins(seed, m=M, amp=0.2):
    rng = np.random.default_rng(seed)
    x = amp * (rng.standard_normal(m) + 1j * rng.standard_normal(m))
    return quantize(x.real, DATA_FMT), quantize(x.imag, DATA_FMT)


# ---------------------------------------------------------------- formats


def test_format_validation_and_limits():
    assert (DATA_FMT.max_code, DATA_FMT.min_code, DATA_FMT.lsb) == (32767, -32768, 2**-15)
    assert COEFF_FMT.lsb == 2**-11
    with pytest.raises(ValueError):
        FixedPointFormat(40, 10)
    with pytest.raises(ValueError):
        FixedPointFormat(16, 16)
    with pytest.raises(ValueError):
        FixedPointFormat(16, 15, rounding="even")
    assert DATA_FMT.with_frac_bits(12) == FixedPointFormat(13, 12)


def test_quantize_examples():
    assert quantize(0.5644, COEFF_FMT) == 1156
    assert quantize(1.0, DATA_FMT) == 32767
    assert quantize(-1.0, DATA_FMT) == -32768
    assert quantize(0.5 * 2**-15, DATA_FMT) == 1
    assert quantize(-0.5 * 2**-15, DATA_FMT) == 0
    trunc = FixedPointFormat(16, 15, rounding="truncate")
    assert quantize(1.9 * 2**-15, trunc) == 1 and quantize(-0.1 * 2**-15, trunc) == -1
    with pytest.raises(OverflowError):
        quantize(1.0, FixedPointFormat(16, 15, saturation=False))
    np.testing.assert_array_equal(quantize([0.25, -0.25], DATA_FMT), [8192, -8192])


def test_dequantize_within_half_lsb():
    x = np.linspace(-0.99, 0.99, 1001)
    assert np.abs(dequantize(quantize(x, DATA_FMT), DATA_FMT) - x).max() <= DATA_FMT.lsb / 2


# -------------------------------------------------------------------- CSD


def test_csd_exhaustive_12_bit():
    for v in range(-2048, 2048):
        c = csd_encode(v)
        assert c.reconstruct() == v
        d = c.digits
        assert all(not (a and b) for a, b in zip(d, d[1:]))
        assert c.nonzero <= bin(abs(v)).count("1")
        for x in (0, 1, -7, 12345, -32768):
            assert csd_multiply(x, c) == x * v


def test_csd_known_codes():
    assert csd_encode(7).digits == (1, 0, 0, -1)
    assert csd_encode(0).digits == (0,) and csd_encode(0).nonzero == 0
    assert csd_encode(1156).nonzero == 3


# ---------------------------------------------------------------- taps


def test_split_even_odd():
    ev, od = split_even_odd(_rx(n_g=7))
    np.testing.assert_allclose(ev, [1.0, -0.08371], atol=5e-5)
    np.testing.assert_allclose(od, [-0.42019, 0.01071], atol=5e-5)


def test_quantize_taps_centre_is_exact_one():
    codes = quantize_taps(_rx(n_g=7))
    assert codes[0] == 2048
    np.testing.assert_array_equal(codes[1:], quantize(_rx(n_g=7).one_sided()[1:], COEFF_FMT))
    assert quantize_taps(_rx("TFL1", 31))[0] == 2048


# --------------------------------------------------------- fixed-point stage


@pytest.mark.parametrize("n", [0, 1, 2, 3])
def test_fixed_matches_quantized_coefficient_reference(n):
    rx = _rx(n_g=7)
    xr, xi = _bins(n)
    res = fs_filter_fixed(xr, xi, rx, n=n)
    taps_q = dequantize(quantize_taps(rx), COEFF_FMT)
    ref = fs_filter_reference(dequantize(xr, DATA_FMT) + 1j * dequantize(xi, DATA_FMT), taps_q, n)
    # only the final rounding separates the two
    assert np.abs(dequantize(res.output, DATA_FMT) - ref).max() <= DATA_FMT.lsb / 2 + 1e-15


def test_fixed_within_error_bound_of_float():
    rx = _rx(n_g=7)
    x = np.random.default_rng(3).standard_normal(M) * 0.2 + 1j * np.random.default_rng(4).standard_normal(M) * 0.2
    res = fs_filter_fixed(quantize(x.real, DATA_FMT), quantize(x.imag, DATA_FMT), rx)
    ref = fs_filter_reference(x, rx.one_sided())
    assert np.abs(dequantize(res.output, DATA_FMT) - ref).max() <= error_bound(rx)


def test_fixed_accumulator_is_exact_integer_convolution():
    rx = _rx(n_g=15)
    xr, xi = _bins(7)
    res = fs_filter_fixed(xr, xi, rx, n=1)
    codes = quantize_taps(rx)
    for mo in (0, 1, 100, M - 1):
        comp = np.asarray(xr if (1 + mo) % 2 == 0 else xi, dtype=object)
        acc = codes[0] * comp[mo]
        for l in range(1, codes.size):
            acc += int(codes[l]) * (comp[(mo - l) % M] + comp[(mo + l) % M])
        assert res.accumulator[mo] == acc


def test_fixed_linearity():
    rx = _rx(n_g=7)
    a, b = _bins(1, amp=0.1), _bins(2, amp=0.1)
    ra = fs_filter_fixed(*a, rx)
    rb = fs_filter_fixed(*b, rx)
    rs = fs_filter_fixed(a[0] + b[0], a[1] + b[1], rx)
    assert all(rs.accumulator[i] == ra.accumulator[i] + rb.accumulator[i] for i in range(M))
    assert np.abs(rs.output - ra.output - rb.output).max() <= 1


def test_fixed_single_tap_is_passthrough():
    rx = _rx(n_g=1)
    xr, xi = _bins(0)
    out = fs_filter_fixed(xr, xi, rx, n=0).output
    k = np.arange(M)
    expect = np.where(k % 2 == 0, xr, xi) * np.where((k // 2) % 2, -1, 1)
    np.testing.assert_array_equal(out, expect)


def test_fixed_rejects_delayed_filter_and_length_mismatch():
    with pytest.raises(ValueError):
        fs_filter_fixed(np.zeros(M, int), np.zeros(M, int), _rx("TFL1", 31))
    with pytest.raises(ValueError):
        fs_filter_fixed(np.zeros(M, int), np.zeros(M - 1, int), _rx())


def test_fixed_output_overflow_saturates_or_raises():
    # align input signs with the taps so output 0 reaches sum |G'| > 1
    rx = _rx(n_g=7, m=16)
    one = rx.one_sided()
    xr = np.zeros(16, dtype=int)
    for l, g in enumerate(one):
        xr[(-l) % 16] = xr[l] = 32767 if g >= 0 else -32768
    xi = np.zeros(16, dtype=int)
    assert fs_filter_fixed(xr, xi, rx).output[0] == 32767
    with pytest.raises(OverflowError):
        fs_filter_fixed(xr, xi, rx, fmt_data=FixedPointFormat(16, 15, saturation=False))


def test_trace_rows_and_csv(tmp_path):
    rx = _rx(n_g=7, m=16)
    xr, xi = _bins(0, m=16)
    res = fs_filter_fixed(xr, xi, rx, trace=True)
    assert len(res.trace) == 16 + 2 * rx.delta
    assert res.acc_bits == 16 + 12 + 3
    lines = res.write_trace_csv(tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "cycle,phase,erdp,eidp,ordp,oidp,accumulator,output"
    assert len(lines) == 1 + len(res.trace)
    assert fs_filter_fixed(xr, xi, rx).trace == []


# -------------------------------------------------------------- complexity


@pytest.mark.parametrize("name, n_g, ratio", [("NPR1", 7, 0.8789), ("TFL1", 31, 4.3945), ("QMF1", 41, 5.859)])
def test_complexity_ratio(name, n_g, ratio):
    rep = complexity_report(_rx(name, n_g), M, 300)
    assert rep.ratio_vs_ppn == pytest.approx(ratio, abs=1e-3)
    assert rep.ratio_vs_ppn == pytest.approx(rep.real_mults_per_symbol / rep.ppn_mults_per_symbol)


def test_complexity_counts():
    rx = _rx(n_g=7)
    rep = complexity_report(rx, M, 300)
    assert (rep.delta, rep.real_mults_per_symbol, rep.real_adds_per_symbol) == (3, 900, 1800)
    assert rep.registers == 16 and rep.ppn_mults_per_symbol == 1024
    codes = quantize_taps(rx)
    assert rep.csd_adders == sum(csd_encode(int(c)).nonzero - 1 for c in codes[1:] if c)
    assert json.loads(rep.to_json())["delta"] == 3
    assert complexity_report(_rx(n_g=1), M, 300).real_mults_per_symbol == 0


# --------------------------------------------------------- worked examples


def test_zero_quantizes_to_zero():
    for fmt in (DATA_FMT, COEFF_FMT, FixedPointFormat(8, 3, rounding="truncate")):
        assert quantize(0.0, fmt) == 0


def test_single_tap_split():
    ev, od = split_even_odd(_rx(n_g=1))
    assert ev.tolist() == [1.0] and od.size == 0


def test_split_reinterleaves_exactly():
    rx = _rx(n_g=15)
    ev, od = split_even_odd(rx)
    inter = np.empty(ev.size + od.size)
    inter[0::2], inter[1::2] = ev, od
    np.testing.assert_array_equal(inter, rx.one_sided())
    np.testing.assert_allclose(np.concatenate([inter[:0:-1], inter]), rx.taps, rtol=0, atol=1e-15)


def test_impulse_response_is_routed_tap_pattern():
    rx = _rx(n_g=7, m=64)
    codes = quantize_taps(rx)
    xr = np.zeros(64, dtype=int)
    xr[10] = DATA_FMT.max_code
    out = fs_filter_fixed(xr, np.zeros(64, dtype=int), rx, n=0).output
    expect = np.zeros(64, dtype=int)
    for l in range(-3, 4):
        mo = 10 + l
        if mo % 2 == 0:  # real bins reach only outputs whose parity selects Re
            v = (int(codes[abs(l)]) * DATA_FMT.max_code + 1024) >> 11
            expect[mo] = -v if (mo // 2) % 2 else v
    np.testing.assert_array_equal(out, expect)


def test_zero_input_zero_output():
    assert not fs_filter_fixed(np.zeros(64, int), np.zeros(64, int), _rx(n_g=7, m=64)).output.any()


def test_fixed_vs_float_stage_m64_within_bound():
    rx = _rx(n_g=7, m=64)
    rng = np.random.default_rng(12)
    worst = 0.0
    for n in range(200):
        x = rng.uniform(-0.4, 0.4, 64) + 1j * rng.uniform(-0.4, 0.4, 64)
        res = fs_filter_fixed(quantize(x.real, DATA_FMT), quantize(x.imag, DATA_FMT), rx, n=n)
        worst = max(worst, np.abs(dequantize(res.output, DATA_FMT) - fs_filter_reference(x, rx.one_sided(), n)).max())
    assert worst <= error_bound(rx, c=4.0)


def test_degenerate_single_tap_complexity():
    rep = complexity_report(_rx(n_g=1), M, 300)
    assert rep.delta == 0 and rep.real_mults_per_symbol == 0 and rep.ratio_vs_ppn == 0
