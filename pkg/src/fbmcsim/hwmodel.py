"""Bit-accurate model of the FS filter stage and abstract complexity counts.

The stage computes, for FBMC symbol ``n`` and output bin ``m``,
``a(m) = Re(i^-(n+m) * sum_l G'(l) X(m-l))`` on integer data.  Because
``G'`` is real and symmetric only one real component of each input bin is
needed per output parity, which gives four data paths:

=====  ================================  ============================
path   contents                          used by outputs with
=====  ================================  ============================
ERDP   Re X(j), ``n+j`` even             ``n+m`` even (even taps)
OIDP   Im X(j), ``n+j`` even             ``n+m`` odd  (odd taps)
EIDP   Im X(j), ``n+j`` odd              ``n+m`` odd  (even taps)
ORDP   Re X(j), ``n+j`` odd              ``n+m`` even (odd taps)
=====  ================================  ============================

Each input cycle enables one pair (ERDP/OIDP or EIDP/ORDP), so the stage
consumes one complex bin and emits one real value per cycle.  Constant
multipliers are CSD shift-and-add networks; the centre tap ``G'(0) = 1``
is a wire.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .filters import TruncatedFreqResponse

__all__ = [
    "FixedPointFormat",
    "CsdCode",
    "ComplexityReport",
    "FsFixedResult",
    "quantize",
    "dequantize",
    "csd_encode",
    "csd_multiply",
    "split_even_odd",
    "quantize_taps",
    "fs_filter_fixed",
    "fs_filter_reference",
    "error_bound",
    "complexity_report",
    "DATA_FMT",
    "COEFF_FMT",
]

ROUNDING = ("round-half-up", "truncate")


@dataclass(frozen=True)
class FixedPointFormat:
    """Two's complement format with ``frac_bits`` fractional bits."""

    total_bits: int = 16
    frac_bits: int = 15
    rounding: str = "round-half-up"
    saturation: bool = True

    def __post_init__(self):
        if not 2 <= self.total_bits <= 32:
            raise ValueError("total_bits must be in [2, 32]")
        if not 0 <= self.frac_bits < self.total_bits:
            raise ValueError("frac_bits must be in [0, total_bits)")
        if self.rounding not in ROUNDING:
            raise ValueError(f"rounding must be one of {ROUNDING}")

    @property
    def max_code(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    @property
    def min_code(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def lsb(self) -> float:
        return 2.0 ** -self.frac_bits

    def with_frac_bits(self, frac_bits: int, total_bits: int | None = None) -> "FixedPointFormat":
        tb = self.total_bits + frac_bits - self.frac_bits if total_bits is None else total_bits
        return FixedPointFormat(tb, frac_bits, self.rounding, self.saturation)


DATA_FMT = FixedPointFormat(16, 15)
COEFF_FMT = FixedPointFormat(12, 11)


def _round_shift(v: int, shift: int, rounding: str) -> int:
    """``v / 2**shift`` rounded per mode on Python integers."""
    if shift <= 0:
        return v << -shift
    if rounding == "truncate":
        return v >> shift
    return (v + (1 << (shift - 1))) >> shift


def _clip(code, fmt: FixedPointFormat):
    lo, hi = fmt.min_code, fmt.max_code
    arr = np.asarray(code)
    if np.any(arr > hi) or np.any(arr < lo):
        if not fmt.saturation:
            raise OverflowError(f"value outside [{lo}, {hi}] for {fmt}")
        arr = np.clip(arr, lo, hi)
    return arr


def quantize(x, fmt: FixedPointFormat):
    """Nearest code (round-half-up) or floor (truncate) of ``x * 2**frac_bits``."""
    scaled = np.asarray(x, dtype=float) * (1 << fmt.frac_bits)
    code = np.floor(scaled + 0.5) if fmt.rounding == "round-half-up" else np.floor(scaled)
    out = _clip(code.astype(np.int64), fmt)
    return int(out) if np.ndim(out) == 0 else out.astype(np.int64)


def dequantize(code, fmt: FixedPointFormat):
    return np.asarray(code, dtype=float) * fmt.lsb


@dataclass(frozen=True)
class CsdCode:
    """Canonical signed digits, most significant first."""

    digits: tuple
    value: int

    @property
    def nonzero(self) -> int:
        return sum(1 for d in self.digits if d)

    def reconstruct(self) -> int:
        v = 0
        for d in self.digits:
            v = 2 * v + d
        return v


def csd_encode(v: int) -> CsdCode:
    """Canonical signed-digit form of an integer."""
    v = int(v)
    x, lsb_first = v, []
    while x != 0:
        if x & 1:
            d = 2 - (x & 3)  # +1 if x = 1 mod 4, -1 if x = 3 mod 4
            x -= d
        else:
            d = 0
        lsb_first.append(d)
        x >>= 1
    if not lsb_first:
        lsb_first = [0]
    return CsdCode(tuple(reversed(lsb_first)), v)


def csd_multiply(x: int, code: CsdCode) -> int:
    """``x * code.value`` using only shifts and additions."""
    acc = 0
    n = len(code.digits)
    for i, d in enumerate(code.digits):
        if d:
            term = x << (n - 1 - i)
            acc = acc + term if d > 0 else acc - term
    return acc


def split_even_odd(rx: TruncatedFreqResponse) -> tuple[np.ndarray, np.ndarray]:
    """``G_even(l) = G'(2l)`` and ``G_odd(l) = G'(2l+1)`` over non-negative ``l``."""
    one = rx.one_sided()
    return one[0::2].copy(), one[1::2].copy()


def quantize_taps(rx: TruncatedFreqResponse, fmt: FixedPointFormat = COEFF_FMT) -> np.ndarray:
    """One-sided coefficient codes; the centre tap is fixed at ``2**frac_bits``."""
    one = rx.one_sided()
    codes = np.zeros(one.size, dtype=np.int64)
    codes[0] = 1 << fmt.frac_bits
    if one.size > 1:
        codes[1:] = quantize(one[1:], fmt)
    return codes


@dataclass
class FsFixedResult:
    output: np.ndarray
    accumulator: np.ndarray
    trace: list
    acc_bits: int

    def write_trace_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cycle", "phase", "erdp", "eidp", "ordp", "oidp", "accumulator", "output"])
            for row in self.trace:
                w.writerow(row)
        return path


def fs_filter_fixed(
    x_re,
    x_im,
    rx: TruncatedFreqResponse,
    fmt_coeff: FixedPointFormat = COEFF_FMT,
    fmt_data: FixedPointFormat = DATA_FMT,
    n: int = 0,
    trace: bool = False,
) -> FsFixedResult:
    """Cycle-accurate FS filter stage on one FBMC symbol.

    ``x_re``/``x_im`` are integer codes of the ``m`` equalized bins in
    ``fmt_data``.  Bins are streamed circularly from ``-delta`` to
    ``m-1+delta``; output ``m`` leaves the pipeline ``delta`` cycles after
    bin ``m`` enters.  ``n`` selects the phase schedule.
    """
    if rx.delay != 0:
        raise ValueError("the fixed-point stage needs a zero-delay filter (real bin rotation)")
    xr = [int(v) for v in np.asarray(x_re).ravel()]
    xi = [int(v) for v in np.asarray(x_im).ravel()]
    m = len(xr)
    if len(xi) != m:
        raise ValueError("x_re and x_im differ in length")
    codes = quantize_taps(rx, fmt_coeff)
    csd = [csd_encode(int(c)) for c in codes]
    delta = rx.delta
    width = 2 * delta + 1
    acc_bits = fmt_data.total_bits + fmt_coeff.total_bits + max(1, math.ceil(math.log2(width)))
    acc_lim = 1 << (acc_bits - 1)
    # four delay lines; index 0 holds the newest bin
    paths = {k: [0] * width for k in ("erdp", "eidp", "ordp", "oidp")}
    out = np.zeros(m, dtype=np.int64)
    accs = np.zeros(m, dtype=object)
    rows = []
    for cycle, j in enumerate(range(-delta, m + delta)):
        jj = j % m
        even_phase = (n + jj) % 2 == 0
        for k in paths:
            paths[k].insert(0, 0)
            paths[k].pop()
        if even_phase:
            paths["erdp"][0], paths["oidp"][0] = xr[jj], xi[jj]
        else:
            paths["eidp"][0], paths["ordp"][0] = xi[jj], xr[jj]
        if cycle < 2 * delta:
            if trace:
                rows.append([cycle, int(even_phase), int(even_phase), int(not even_phase),
                             int(not even_phase), int(even_phase), "", ""])
            continue
        mo = j - delta  # output bin whose window is centred in the lines
        out_even = (n + mo) % 2 == 0
        ev, od = (paths["erdp"], paths["ordp"]) if out_even else (paths["eidp"], paths["oidp"])
        acc = 0
        for l in range(delta + 1):
            line = ev if l % 2 == 0 else od
            pair = line[delta - l] if l == 0 else line[delta - l] + line[delta + l]
            acc += pair << fmt_coeff.frac_bits if l == 0 else csd_multiply(pair, csd[l])
            if not -acc_lim <= acc < acc_lim:
                raise OverflowError(f"accumulator exceeds {acc_bits} bits at cycle {cycle}")
        val = _round_shift(acc, fmt_coeff.frac_bits, fmt_data.rounding)
        if ((n + mo) // 2) % 2:
            val = -val
        val = int(_clip(val, fmt_data))
        out[mo] = val
        accs[mo] = acc
        if trace:
            rows.append([cycle, int(even_phase), int(even_phase), int(not even_phase),
                         int(not even_phase), int(even_phase), acc, val])
    return FsFixedResult(out, accs, rows, acc_bits)


def fs_filter_reference(x: np.ndarray, taps: np.ndarray, n: int = 0) -> np.ndarray:
    """Floating-point FS stage: circular convolution, de-rotation, real part.

    ``taps`` are the one-sided real coefficients ``G'(0..delta)``.
    """
    x = np.asarray(x, dtype=complex)
    m = x.size
    z = taps[0] * x
    for l in range(1, taps.size):
        z = z + taps[l] * (np.roll(x, l) + np.roll(x, -l))
    k = np.arange(m)
    return np.real(1j ** ((-(n + k)) % 4) * z)


def error_bound(rx: TruncatedFreqResponse, fmt_data: FixedPointFormat = DATA_FMT, c: float = 4.0) -> float:
    """``2**-frac_bits * (1 + sum |G'(l)|) * c``."""
    return fmt_data.lsb * (1.0 + float(np.sum(np.abs(rx.taps)))) * c


@dataclass(frozen=True)
class ComplexityReport:
    delta: int
    n_c: int
    m: int
    real_mults_per_symbol: int
    real_adds_per_symbol: int
    csd_adders: int
    registers: int
    ppn_mults_per_symbol: int
    ratio_vs_ppn: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def complexity_report(rx: TruncatedFreqResponse, m: int, n_c: int, fmt_coeff: FixedPointFormat = COEFF_FMT) -> ComplexityReport:
    """Multiplier-equivalent counts of the FS stage versus a short-filter PPN.

    FS needs ``delta * n_c`` real multiplications per FBMC symbol (one per
    symmetric tap pair and retained output), PPN ``2m``.  ``csd_adders``
    counts the adders of the constant multipliers, ``registers`` the delay
    line stages of the four data paths.
    """
    delta = rx.delta
    codes = quantize_taps(rx, fmt_coeff) if delta else np.array([1 << fmt_coeff.frac_bits])
    adders = sum(max(csd_encode(int(c)).nonzero - 1, 0) for c in codes[1:])
    mults = delta * n_c
    return ComplexityReport(
        delta=delta,
        n_c=n_c,
        m=m,
        real_mults_per_symbol=mults,
        real_adds_per_symbol=2 * delta * n_c,
        csd_adders=int(adders),
        registers=4 * (delta + 1),
        ppn_mults_per_symbol=2 * m,
        ratio_vs_ppn=(n_c / m) * delta / 2,
    )
