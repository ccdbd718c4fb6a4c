"""Short prototype filters (K=1) and their frequency-domain descriptions.

Three built-in filters are provided: QMF1 (sine window), TFL1 (closed-form
time-frequency localized filter) and NPR1 (near perfect reconstruction,
derived from the MMB4 filter-bank response).  All transforms use the
forward kernel ``exp(-2j*pi*k*l/N)`` without normalization; the inverse
carries ``1/N``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "PrototypeFilter",
    "FreqResponse",
    "TruncatedFreqResponse",
    "FilterBankResponse",
    "TFL1_X",
    "NPR1_PG",
    "gen_qmf1",
    "gen_tfl1",
    "gen_npr1",
    "gen_filter",
    "mmb4_fb_table",
    "gen_npr1_from_fb",
    "freq_response",
    "truncate_normalize",
    "truncated_time_response",
    "fb_impulse_response",
    "export_taps_csv",
    "export_response_csv",
]

# Closed-form constants of the TFL1 filter.
TFL1_X = (
    4.1284847578,
    1.9727736832,
    1.2781855004e-1,
    -1.4505800309e2,
    -2.1107642825e1,
    -6.6774831778e-3,
    -1.0150558822e2,
    1.9143799092e-2,
)

# Cosine weights of the NPR1 closed form.
NPR1_PG = (0.564447, -0.066754, 0.002300)

RADICAND_TOL = 1e-12


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PrototypeFilter:
    """Real prototype filter of length ``k_overlap * m``.

    ``delay`` is the position of the symmetry centre relative to ``m/2``.
    It is 0 for filters with ``g(k) = g(m-k)`` and -0.5 for filters with
    ``g(k) = g(m-1-k)``; modulators use it as the phase reference so that
    either family reconstructs correctly.
    """

    name: str
    m: int
    taps: np.ndarray
    k_overlap: int = 1
    delay: float = 0.0

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=float)
        if taps.ndim != 1 or taps.size != self.k_overlap * self.m:
            raise ValueError(
                f"taps length {taps.size} != k_overlap*m = {self.k_overlap * self.m}"
            )
        if not np.all(np.isfinite(taps)):
            raise ValueError("taps must be finite")
        object.__setattr__(self, "taps", _readonly(taps))

    @property
    def length(self) -> int:
        return self.taps.size

    @property
    def energy(self) -> float:
        return float(np.dot(self.taps, self.taps))

    def scaled(self, c: float) -> "PrototypeFilter":
        return PrototypeFilter(self.name, self.m, self.taps * c, self.k_overlap, self.delay)

    def unit_energy(self) -> np.ndarray:
        return self.taps / np.sqrt(self.energy)


def _check_m(m: int, minimum: int) -> None:
    if int(m) != m or m < minimum or m % 2:
        raise ValueError(f"m must be an even integer >= {minimum}, got {m}")


def gen_qmf1(m: int) -> PrototypeFilter:
    """Sine window ``g(k) = sin(pi k / m)``."""
    _check_m(m, 4)
    k = np.arange(m)
    return PrototypeFilter("QMF1", m, np.sin(np.pi * k / m))


def _tfl1_angle(x: np.ndarray, m: int) -> np.ndarray:
    X = TFL1_X
    t = 2.0 * x - 1.0
    gamma0 = 1.0 / (X[0] + X[1] * m / 2)
    beta1 = X[2] + 1.0 / (X[3] + X[4] * m / 2)
    beta2 = X[5] + 1.0 / (X[6] + X[7] * m / 2)
    return np.pi / 2 * (1 - x) + gamma0 * t + 2 * t * (t**2 - 1) * (beta1 + 4 * beta2 * t**2)


def gen_tfl1(m: int) -> PrototypeFilter:
    """TFL1 filter from its closed-form angle parametrization.

    The closed form gives the lattice angle of the power-complementary
    pair ``(g(k), g(k + m/2))``; the tap is its cosine.  The first half is
    evaluated at ``x = (2k+1)/m`` and mirrored with ``g(k) = g(m-1-k)``.
    The result is scaled to unit peak.
    """
    _check_m(m, 4)
    k = np.arange(m // 2)
    half = np.cos(_tfl1_angle((2 * k + 1) / m, m))
    taps = np.concatenate([half, half[::-1]])
    taps /= taps.max()
    return PrototypeFilter("TFL1", m, taps, delay=-0.5)


def gen_npr1(m: int) -> PrototypeFilter:
    """NPR1 filter, ``g(k) = sqrt(1 - 2 sum_l P_g(l) cos(2 pi k (2l+1) / m))``."""
    _check_m(m, 8)
    k = np.arange(m)
    rad = 1.0 - 2.0 * sum(
        p * np.cos(2 * np.pi * k * (2 * l + 1) / m) for l, p in enumerate(NPR1_PG)
    )
    if rad.min() < -RADICAND_TOL:
        raise ValueError(f"negative radicand {rad.min():.3e}: corrupted P_g constants")
    return PrototypeFilter("NPR1", m, np.sqrt(np.clip(rad, 0.0, None)))


_GENERATORS = {"QMF1": gen_qmf1, "TFL1": gen_tfl1, "NPR1": gen_npr1}


def gen_filter(name: str, m: int) -> PrototypeFilter:
    """Built-in filter by (case-insensitive) name."""
    try:
        return _GENERATORS[name.upper()](m)
    except KeyError:
        raise ValueError(f"unknown filter {name!r}; expected one of {sorted(_GENERATORS)}") from None


@dataclass(frozen=True)
class FilterBankResponse:
    """Complex table ``F(p, q)``: frequency offset ``p`` by sample offset ``q``.

    ``q`` values are plain sample offsets.  For the MMB4 table they are
    expressed in units of ``m/2`` (``q_unit = m/2`` with ``m`` symbolic),
    which is why ``m`` may be ``None``.
    """

    p: np.ndarray
    q: np.ndarray
    table: np.ndarray
    m: int | None = None
    q_max: int = 1
    q_unit: str = "samples"

    def __post_init__(self):
        p = np.asarray(self.p)
        q = np.asarray(self.q)
        table = np.asarray(self.table, dtype=complex)
        if table.shape != (p.size, q.size):
            raise ValueError(f"table shape {table.shape} != ({p.size}, {q.size})")
        object.__setattr__(self, "p", _readonly(p))
        object.__setattr__(self, "q", _readonly(q))
        object.__setattr__(self, "table", _readonly(table))

    def at(self, p, q) -> complex:
        i = np.flatnonzero(np.isclose(self.p, p))
        j = np.flatnonzero(np.isclose(self.q, q))
        if i.size == 0 or j.size == 0:
            raise KeyError((p, q))
        return complex(self.table[i[0], j[0]])


def mmb4_fb_table() -> FilterBankResponse:
    """Filter-bank impulse response of the MMB4 filter (3-decimal table).

    Rows are ``p`` in {-1, 0, 1}; columns are ``q`` in units of ``m/2``
    from -3 to 3.
    """
    # rows q = -3..3 (units of m/2), columns p = -1, 0, 1
    rows = [
        [0.043j, -0.067, -0.043j],
        [-0.125, 0.0, -0.125],
        [-0.206j, 0.564, 0.206j],
        [0.239, 1.0, 0.239],
        [0.206j, 0.564, -0.206j],
        [-0.125, 0.0, -0.125],
        [-0.043j, -0.067, 0.043j],
    ]
    table = np.array(rows, dtype=complex).T
    return FilterBankResponse(
        p=np.array([-1, 0, 1]), q=np.arange(-3, 4), table=table, q_max=3, q_unit="m/2"
    )


def gen_npr1_from_fb(m: int, fb: FilterBankResponse | None = None) -> PrototypeFilter:
    """Rebuild NPR1 from the ``p = 0`` column of a filter-bank table.

    The column value at ``q = l * m/2`` is placed at DFT harmonic ``l``;
    the squared filter is the inverse transform of that column.  Odd
    harmonics are sign-flipped, i.e. the result is circularly shifted by
    ``m/2`` so that the filter peaks at the centre of its support like the
    closed form.
    """
    _check_m(m, 8)
    fb = mmb4_fb_table() if fb is None else fb
    col = fb.table[np.flatnonzero(fb.p == 0)[0]]
    k = np.arange(m)
    rad = np.zeros(m, dtype=complex)
    for qi, v in zip(fb.q, col):
        l = int(qi)
        rad += v * (-1) ** abs(l) * np.exp(2j * np.pi * k * l / m)
    scale = max(np.abs(rad).max(), 1.0)
    if np.abs(rad.imag).max() > 1e-9 * scale:
        raise ValueError("radicand is not real: wrong harmonic mapping of the table")
    rad = rad.real
    if rad.min() < -RADICAND_TOL:
        raise ValueError(f"negative radicand {rad.min():.3e}")
    return PrototypeFilter("Custom", m, np.sqrt(np.clip(rad, 0.0, None)))


@dataclass(frozen=True)
class FreqResponse:
    """Full DFT of a filter, indexed by centred bin ``l`` in [-n/2, n/2-1]."""

    values: np.ndarray
    delay: float = 0.0

    @property
    def n_points(self) -> int:
        return self.values.size

    @property
    def bins(self) -> np.ndarray:
        n = self.n_points
        return np.arange(-(n // 2), n - n // 2)

    def at(self, l) -> np.ndarray:
        """Value(s) at integer bin(s) ``l``, taken modulo the DFT length."""
        return self.values[np.mod(l, self.n_points)]

    def centered(self) -> np.ndarray:
        return np.fft.fftshift(self.values)


def freq_response(filt: PrototypeFilter, n_points: int | None = None) -> FreqResponse:
    """Unnormalized DFT of the taps, zero-padded to ``n_points``."""
    n = filt.length if n_points is None else int(n_points)
    if n < filt.length:
        raise ValueError("n_points must be >= filter length")
    return FreqResponse(np.fft.fft(filt.taps, n), delay=filt.delay)


@dataclass(frozen=True)
class TruncatedFreqResponse:
    """Centred, rescaled tap set ``G'(-delta..delta)`` with ``G'(0) = 1``.

    ``taps`` are real after compensating the linear phase of the filter's
    symmetry centre; the complex response actually used for filtering is
    ``G'(l) * exp(-2j*pi*l*delay/m)`` (see :meth:`complex_taps`).  A full
    response (``n_g == m``, even) keeps bins -m/2..m/2-1.
    """

    taps: np.ndarray
    scale: complex
    m: int
    delay: float = 0.0

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=float)
        object.__setattr__(self, "taps", _readonly(taps))

    @property
    def n_g(self) -> int:
        return self.taps.size

    @property
    def delta(self) -> int:
        return (self.n_g - 1) // 2

    @property
    def bins(self) -> np.ndarray:
        n = self.n_g
        if n % 2:
            return np.arange(-self.delta, self.delta + 1)
        return np.arange(-(n // 2), n // 2)

    def at(self, l: int) -> float:
        return float(self.taps[np.flatnonzero(self.bins == l)[0]])

    def complex_taps(self) -> np.ndarray:
        if self.delay == 0:
            return self.taps.astype(complex)
        return self.taps * np.exp(-2j * np.pi * self.bins * self.delay / self.m)

    def one_sided(self) -> np.ndarray:
        """Taps ``G'(0), G'(1), ..., G'(delta)``."""
        return self.taps[self.bins >= 0]


def truncate_normalize(G: FreqResponse, n_g: int) -> TruncatedFreqResponse:
    """Keep bins ``-delta..delta`` of ``G`` and divide by ``G(0)``.

    ``n_g`` must be odd, or equal to the DFT length to keep every bin.
    """
    n = G.n_points
    if not (1 <= n_g <= n) or (n_g % 2 == 0 and n_g != n):
        raise ValueError(f"n_g must be odd in [1, {n}] (or equal to {n}), got {n_g}")
    g0 = G.values[0]
    if abs(g0) == 0:
        raise ValueError("G(0) = 0, cannot rescale")
    if n_g % 2:
        d = (n_g - 1) // 2
        bins = np.arange(-d, d + 1)
    else:
        bins = np.arange(-(n // 2), n // 2)
    vals = G.at(bins) * np.exp(2j * np.pi * bins * G.delay / n) / g0
    bad = np.abs(vals.imag).max()
    if bad > 1e-9:
        raise ValueError(f"truncated taps are not real (|imag| up to {bad:.2e})")
    return TruncatedFreqResponse(vals.real, scale=g0, m=n, delay=G.delay)


def truncated_time_response(rx: TruncatedFreqResponse) -> np.ndarray:
    """Receive window ``g~(k) = sum_l G(l) exp(2j pi k l / m)`` for k in [0, m).

    Includes the ``scale`` factor so that a full-length response returns
    ``m`` times the original taps.
    """
    m = rx.m
    spectrum = np.zeros(m, dtype=complex)
    np.add.at(spectrum, np.mod(rx.bins, m), rx.complex_taps() * rx.scale)
    g = np.fft.ifft(spectrum) * m
    return g


def _as_taps(g) -> np.ndarray:
    if isinstance(g, PrototypeFilter):
        return g.taps
    return np.asarray(g)


def _unit(g: np.ndarray) -> np.ndarray:
    e = np.sqrt(np.sum(np.abs(g) ** 2))
    if e == 0:
        raise ValueError("zero-energy filter")
    return g / e


def fb_impulse_response(
    g_tx,
    g_rx_time=None,
    q_range: Iterable[int] = (0,),
    p_range: Sequence[int] | None = None,
    freq_offset: float = 0.0,
) -> FilterBankResponse:
    """Filter-bank impulse response ``F(p, q)`` of a transmit/receive pair.

    ``F(p, q) = sum_{k=0}^{m-1} g_tx(k+q) g_rx(k) exp(-2j pi (p+freq_offset) k / m)``
    with both filters scaled to unit energy and ``g_tx`` read as zero
    outside its support.  ``p_range`` defaults to the full range
    ``[-m/2, m/2-1]``.
    """
    gt = _unit(np.asarray(_as_taps(g_tx), dtype=float))
    gr = gt if g_rx_time is None else _unit(np.asarray(_as_taps(g_rx_time)))
    if gr.size != gt.size:
        raise ValueError(f"filter lengths differ: {gt.size} vs {gr.size}")
    m = gt.size
    k = np.arange(m)
    p_all = np.arange(-(m // 2), m - m // 2)
    p = p_all if p_range is None else np.asarray(p_range, dtype=int)
    q = np.asarray(list(q_range), dtype=int)
    rot = np.exp(-2j * np.pi * freq_offset * k / m) if freq_offset else 1.0
    table = np.empty((p.size, q.size), dtype=complex)
    for j, qq in enumerate(q):
        idx = k + qq
        valid = (idx >= 0) & (idx < m)
        shifted = np.zeros(m)
        shifted[valid] = gt[idx[valid]]
        spectrum = np.fft.fft(shifted * gr * rot)
        table[:, j] = spectrum[np.mod(p, m)]
    return FilterBankResponse(p=p, q=q, table=table, m=m)


def export_taps_csv(filt: PrototypeFilter, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "value"])
        for i, v in enumerate(filt.taps):
            w.writerow([i, repr(float(v))])
    return path


def export_response_csv(G: FreqResponse, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin", "real", "imag"])
        for l, v in zip(G.bins, G.centered()):
            w.writerow([int(l), repr(float(v.real)), repr(float(v.imag))])
    return path
