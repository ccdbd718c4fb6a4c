"""Analytical SIR evaluators and Monte-Carlo SIR, BER and PSD measurement.

Interference sums run over the full frequency-offset range ``p`` unless
``p_max`` is given.  Phases of ``F(p, q)`` are referenced to the filter's
symmetry centre so that filters with a half-sample centre (TFL1) are
treated like the others.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import welch

from . import channel as ch
from .filters import (
    PrototypeFilter,
    TruncatedFreqResponse,
    fb_impulse_response,
    freq_response,
    gen_filter,
    truncate_normalize,
    truncated_time_response,
)
from .modem import (
    BasebandSignal,
    ModemParams,
    fs_demodulate,
    ofdm_demodulate,
    ofdm_modulate,
    oqam_to_qam,
    ppn_demodulate,
    ppn_modulate,
    qam_to_oqam,
)

__all__ = [
    "SIR_CAP_DB",
    "SirReport",
    "CurvePoint",
    "Curve",
    "LinkConfig",
    "Impairments",
    "sir_nominal",
    "sir_truncation",
    "sir_timing_ppn",
    "sir_timing_fs",
    "sir_cfo",
    "sir_cfo_ofdm",
    "measure_sir",
    "sir_per_subcarrier",
    "estimate_psd",
    "qam16_map",
    "qam16_demap",
    "measure_ber",
    "write_curves_csv",
    "content_hash",
    "write_manifest",
]

SIR_CAP_DB = 300.0


@dataclass
class SirReport:
    sir_db: float
    numerator: float
    interference_terms: dict = field(default_factory=dict, repr=False)
    omega_q: int = 1
    interference: float = 0.0

    @classmethod
    def build(cls, numerator: float, terms: dict, omega_q: int, interference=None) -> "SirReport":
        if numerator <= 0:
            raise ValueError("zero signal term")
        den = float(sum(terms.values())) if interference is None else float(interference)
        if den <= numerator * 10 ** (-SIR_CAP_DB / 10):
            sir = SIR_CAP_DB
        else:
            sir = 10 * math.log10(numerator / den)
        return cls(sir, float(numerator), terms, omega_q, den)


@dataclass(frozen=True)
class CurvePoint:
    x: float
    y: float
    meta: dict = field(default_factory=dict)


@dataclass
class Curve:
    """A named series of (x, y) values."""

    x: np.ndarray
    y: np.ndarray
    series: str = ""
    meta: dict = field(default_factory=dict)

    def points(self) -> list[CurvePoint]:
        return [CurvePoint(float(a), float(b), {"series": self.series}) for a, b in zip(self.x, self.y)]


# ---------------------------------------------------------------- analytic


def _phase_i(e):
    return 1j ** (np.asarray(e) % 4)


def _interference(F: dict, m: int, delay: float, p_max, numerator_at=(0, 0), extra_phase=None):
    """Signal and interference terms from ``{q: F(p, q*m/2 + offset) over all p}``."""
    p = np.fft.fftfreq(m, 1.0 / m).astype(int)
    ref = np.exp(2j * np.pi * p * delay / m)
    if extra_phase is not None:
        ref = ref * extra_phase
    keep = np.ones(m, dtype=bool) if p_max is None else np.abs(p) <= p_max
    terms, num = {}, None
    for q, row in F.items():
        v = np.real(_phase_i(p + q) * row * ref) ** 2
        if q == 0:
            num = v[0]
            v = v.copy()
            v[0] = 0.0
        for pp, vv in zip(p[keep], v[keep]):
            if vv > 0:
                terms[(int(pp), int(q))] = float(vv)
    return num, terms


def _rows(gt, gr, qs, offset=0, freq_offset=0.0) -> dict:
    m = len(gt)
    F = fb_impulse_response(
        gt, gr, q_range=[q * m // 2 + offset for q in qs], p_range=np.fft.fftfreq(m, 1 / m).astype(int),
        freq_offset=freq_offset,
    )
    return {q: F.table[:, i] for i, q in enumerate(qs)}


def sir_nominal(F, q_max: int = 1, p_max: int | None = None, delay: float | None = None) -> SirReport:
    """Nominal SIR of a filter (or of a precomputed full-range response).

    ``F`` is either a :class:`PrototypeFilter` or a
    :class:`FilterBankResponse` whose ``q`` axis holds ``q*m/2`` samples for
    ``q`` in ``-q_max..q_max`` and whose ``p`` axis covers every offset.
    """
    if isinstance(F, PrototypeFilter):
        d = F.delay if delay is None else delay
        rows = _rows(F.taps, None, range(-q_max, q_max + 1))
        m = F.m
    else:
        d = 0.0 if delay is None else delay
        m = F.m
        order = np.mod(F.p, m)
        rows = {}
        for q in range(-q_max, q_max + 1):
            col = np.flatnonzero(F.q == q * m // 2)[0]
            full = np.zeros(m, dtype=complex)
            full[order] = F.table[:, col]
            rows[q] = full
    num, terms = _interference(rows, m, d, p_max)
    return SirReport.build(num, terms, q_max)


def _rx_time(rx: TruncatedFreqResponse) -> np.ndarray:
    g = truncated_time_response(rx)
    return g.real


def sir_truncation(g: PrototypeFilter, rx: TruncatedFreqResponse, p_max=None) -> SirReport:
    """SIR left by a receiver using the truncated response ``rx``."""
    rows = _rows(g.taps, _rx_time(rx), (-1, 0, 1))
    num, terms = _interference(rows, g.m, g.delay, p_max)
    return SirReport.build(num, terms, 1)


def sir_timing_ppn(g: PrototypeFilter, l_d: int, q_max: int = 2, p_max=None) -> SirReport:
    """PPN receiver SIR with a timing offset compensated in frequency."""
    m = g.m
    rows = _rows(g.taps, None, range(-q_max, q_max + 1), offset=int(l_d))
    p = np.fft.fftfreq(m, 1 / m)
    comp = np.exp(-2j * np.pi * p * l_d / m)
    num, terms = _interference(rows, m, g.delay, p_max, extra_phase=comp)
    return SirReport.build(num, terms, q_max)


def sir_timing_fs(g: PrototypeFilter, rx: TruncatedFreqResponse, l_d: int, p_max=None) -> SirReport:
    """FS receiver SIR: truncation floor plus the energy of ``|l_d|`` edge samples."""
    base = sir_truncation(g, rx, p_max)
    floor = base.interference / base.numerator
    gu = g.unit_energy()
    extra = 2.0 * float(np.sum(gu[: abs(int(l_d))] ** 2))
    return SirReport.build(1.0, {**{k: v / base.numerator for k, v in base.interference_terms.items()},
                                 ("edge", int(l_d)): extra}, 1, interference=floor + extra)


def sir_cfo(g: PrototypeFilter, r: float, rx: TruncatedFreqResponse | None = None, p_max=None) -> SirReport:
    """SIR under a relative CFO ``r`` after common-phase compensation.

    ``F(r+p, q)`` is evaluated at fractional frequency; the common phase is
    removed at the filter's symmetry centre.  With ``rx`` the truncated
    receive response replaces the matched filter.
    """
    m = g.m
    gr = None if rx is None else _rx_time(rx)
    rows = _rows(g.taps, gr, (-1, 0, 1), freq_offset=-r)
    centre = np.exp(-2j * np.pi * r * (m / 2 + g.delay) / m)
    # fb_impulse_response applies exp(-2j pi f k / m); a receive-side CFO
    # contributes exp(+2j pi r k / m), hence freq_offset = -r above
    num, terms = _interference(rows, m, g.delay, p_max, extra_phase=centre)
    return SirReport.build(num, terms, 1)


def sir_cfo_ofdm(m: int, r: float) -> SirReport:
    """Inter-carrier interference of CP-OFDM under CFO ``r``, centre-phase compensated."""
    k = np.arange(m)
    F = np.fft.fft(np.exp(2j * np.pi * r * (k - (m - 1) / 2) / m)) / m
    terms = {(int(i), 0): float(abs(F[i]) ** 2) for i in range(1, m)}
    return SirReport.build(float(abs(F[0]) ** 2), terms, 0)


# ------------------------------------------------------------ Monte-Carlo


WAVEFORMS = ("ofdm", "fbmc-ppn", "fbmc-fs")


@dataclass(frozen=True)
class LinkConfig:
    """Transmitter/receiver pair.

    ``ofdm_window`` is the FFT start inside each OFDM block (``None`` means
    mid-CP).
    """

    waveform: str = "fbmc-ppn"
    filter: str = "NPR1"
    m: int = 512
    n_g: int | None = None
    cp_len: int = 36
    active_set: tuple | None = None
    ofdm_window: int | None = None

    def __post_init__(self):
        if self.waveform not in WAVEFORMS:
            raise ValueError(f"waveform must be one of {WAVEFORMS}, got {self.waveform!r}")
        if self.waveform == "fbmc-fs" and self.n_g is not None:
            if self.n_g % 2 == 0 and self.n_g != self.m:
                raise ValueError("n_g must be odd (or equal to m)")

    @property
    def is_fbmc(self) -> bool:
        return self.waveform != "ofdm"

    @property
    def label(self) -> str:
        if not self.is_fbmc:
            return "OFDM"
        rx = "PPN" if self.waveform == "fbmc-ppn" else f"FS(N_G={self.n_g or self.m})"
        return f"{self.filter.upper()}-{rx}"

    def params(self, n_symbols: int) -> ModemParams:
        if not self.is_fbmc:
            return ModemParams(self.m, n_symbols, self.active_set, self.cp_len)
        f = gen_filter(self.filter, self.m)
        rx = None
        if self.waveform == "fbmc-fs":
            rx = truncate_normalize(freq_response(f), self.n_g or self.m)
        return ModemParams(self.m, n_symbols, self.active_set, 0, f, rx)


@dataclass(frozen=True)
class Impairments:
    timing: int = 0
    cfo: float = 0.0
    realization: ch.ChannelRealization | None = None
    ebn0_db: float = math.inf


def _tx_rx(link: LinkConfig, imp: Impairments, qam: np.ndarray, rng, bits_per_symbol=4):
    """Transmit a QAM grid through the impairments and return the receiver output grid."""
    n_qam = qam.shape[0]
    m = link.m
    if link.is_fbmc:
        p = link.params(2 * n_qam)
        s = ppn_modulate(qam_to_oqam(qam), p)
        overhead = 1.0
    else:
        p = link.params(n_qam)
        s = ofdm_modulate(qam, p)
        overhead = (m + link.cp_len) / m
    if imp.realization is not None:
        s = ch.apply_multipath(s, imp.realization)
    if imp.cfo:
        s = ch.apply_cfo(s, imp.cfo, m)
    if imp.timing:
        s = ch.apply_timing_offset(s, imp.timing)
    if not math.isinf(imp.ebn0_db):
        s = ch.add_awgn(s, imp.ebn0_db, bits_per_symbol, rng=rng, overhead=overhead)

    eq = np.ones(m, dtype=complex)
    if imp.realization is not None:
        H = imp.realization.frequency_response(m)
        eq = eq / H
    if imp.timing:
        eq = eq * ch.timing_compensation(np.arange(m), imp.timing, m)
    eq = np.broadcast_to(eq, (p.n_symbols, m)).copy()
    if link.is_fbmc:
        if imp.cfo:
            eq *= ch.cfo_equalizer(m, p.n_symbols, imp.cfo, p.filter.delay)
        demod = ppn_demodulate if link.waveform == "fbmc-ppn" else fs_demodulate
        return oqam_to_qam(demod(s, p, eq))
    start = link.cp_len // 2 if link.ofdm_window is None else link.ofdm_window
    if imp.cfo:
        n = np.arange(n_qam)
        pos = n * (m + link.cp_len) + start + (m - 1) / 2
        eq *= np.exp(-2j * np.pi * imp.cfo * pos / m)[:, None]
    return ofdm_demodulate(s, p, eq, n_symbols=n_qam, window_start=start)


def _active_mask(link: LinkConfig) -> np.ndarray:
    mask = np.zeros(link.m, dtype=bool)
    mask[list(range(link.m) if link.active_set is None else link.active_set)] = True
    return mask


def measure_sir(link: LinkConfig, imp: Impairments, n_symbols: int = 40, seed: int = 0) -> SirReport:
    """Simulated SIR of recovered symbols; edge symbols are excluded.

    ``n_symbols`` counts FBMC (real) symbols; OFDM uses half as many complex
    symbols so both carry the same data.  Symbols are QPSK with unit energy.
    """
    rng = ch.trial_rng(seed, 0)
    n_qam = max(n_symbols // 2, 3)
    qam = (rng.choice([-1.0, 1.0], (n_qam, link.m)) + 1j * rng.choice([-1.0, 1.0], (n_qam, link.m))) / math.sqrt(2)
    mask = _active_mask(link)
    qam[:, ~mask] = 0
    out = _tx_rx(link, imp, qam, rng)
    sl = slice(1, -1)
    err = (out - qam)[sl][:, mask]
    sig = qam[sl][:, mask]
    return SirReport.build(float(np.mean(np.abs(sig) ** 2)), {}, 0, float(np.mean(np.abs(err) ** 2)))


def sir_per_subcarrier(
    link: LinkConfig, realization: ch.ChannelRealization | None, n_symbols: int = 200, seed: int = 0
) -> list[CurvePoint]:
    """Per-subcarrier simulated SIR with ZF equalization of a fixed realization."""
    rng = ch.trial_rng(seed, 1)
    n_qam = max(n_symbols // 2, 3)
    qam = (rng.choice([-1.0, 1.0], (n_qam, link.m)) + 1j * rng.choice([-1.0, 1.0], (n_qam, link.m))) / math.sqrt(2)
    mask = _active_mask(link)
    qam[:, ~mask] = 0
    out = _tx_rx(link, Impairments(realization=realization), qam, rng)
    err = np.mean(np.abs(out - qam)[1:-1] ** 2, axis=0)
    sig = np.mean(np.abs(qam)[1:-1] ** 2, axis=0)
    pts = []
    for m in np.flatnonzero(mask):
        v = SIR_CAP_DB if err[m] <= sig[m] * 10 ** (-SIR_CAP_DB / 10) else 10 * math.log10(sig[m] / err[m])
        pts.append(CurvePoint(float(m), v, {"series": link.label}))
    return pts


def estimate_psd(
    s,
    segment_len: int,
    overlap: float = 0.5,
    window: str = "blackmanharris",
    fs: float | None = None,
    in_band=None,
    series: str = "",
) -> Curve:
    """Averaged windowed periodogram, two-sided and centred.

    ``fs`` defaults to ``segment_len``-independent unit bins: with
    ``fs = m`` the frequency axis is in subcarrier units.  ``y`` is in dB,
    normalized to a 0 dB mean over ``in_band`` frequencies (integers in the
    same units, taken modulo ``fs``) or to the peak if ``in_band`` is None.
    ``meta['linear']`` holds the un-normalized density.
    """
    x = s.samples if isinstance(s, BasebandSignal) else np.asarray(s)
    fs = float(fs or (s.meta.get("m") if isinstance(s, BasebandSignal) else None) or 1.0)
    f, P = welch(
        x, fs=fs, window=window, nperseg=segment_len, noverlap=int(segment_len * overlap),
        return_onesided=False, detrend=False, scaling="density",
    )
    f = np.fft.fftshift(f)
    P = np.fft.fftshift(P)
    if in_band is None:
        ref = P.max()
    else:
        sel = np.isin(np.mod(np.rint(f).astype(int), int(round(fs))), np.mod(np.asarray(list(in_band)), int(round(fs))))
        sel &= np.abs(f - np.rint(f)) < 1e-9
        ref = P[sel].mean()
    y = 10 * np.log10(np.maximum(P, 1e-300) / ref)
    return Curve(f, y, series, {"linear": P, "fs": fs})


# ------------------------------------------------------------------- BER

_GRAY4 = np.array([-3.0, -1.0, 3.0, 1.0])  # index b0b1 -> level, Gray ordered
_QAM16_SCALE = 1.0 / math.sqrt(10.0)


def qam16_map(bits: np.ndarray) -> np.ndarray:
    """Gray-mapped unit-energy 16-QAM; four bits per symbol (I pair, Q pair)."""
    b = np.asarray(bits, dtype=np.int8).reshape(-1, 4)
    i = _GRAY4[2 * b[:, 0] + b[:, 1]]
    q = _GRAY4[2 * b[:, 2] + b[:, 3]]
    return (i + 1j * q) * _QAM16_SCALE


def _pam4_bits(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    b0 = (v > 0).astype(np.int8)
    b1 = (np.abs(v) < 2).astype(np.int8)
    return b0, b1


def qam16_demap(sym: np.ndarray) -> np.ndarray:
    s = np.asarray(sym).ravel() / _QAM16_SCALE
    i0, i1 = _pam4_bits(s.real)
    q0, q1 = _pam4_bits(s.imag)
    return np.stack([i0, i1, q0, q1], axis=1).ravel()


def _ber_point(link, profile, ebn0, target_errors, max_bits, seed, point, n_qam, fixed):
    mask = _active_mask(link)
    n_act = int(mask.sum())
    guard = link.cp_len if not link.is_fbmc else None
    errors = bits = trial = 0
    while errors < target_errors and bits < max_bits:
        rng = ch.trial_rng(seed, point, trial)
        if fixed is not None:
            real = fixed
        elif profile is not None:
            real = ch.realize_multipath(profile, rng=rng, guard=guard)
        else:
            real = None
        tx_bits = rng.integers(0, 2, size=n_qam * n_act * 4, dtype=np.int8)
        qam = np.zeros((n_qam, link.m), dtype=complex)
        qam[:, mask] = qam16_map(tx_bits).reshape(n_qam, n_act)
        out = _tx_rx(link, Impairments(realization=real, ebn0_db=ebn0), qam, rng)
        rx_bits = qam16_demap(out[1:-1][:, mask])
        ref = tx_bits.reshape(n_qam, n_act * 4)[1:-1].ravel()
        errors += int(np.count_nonzero(rx_bits != ref))
        bits += ref.size
        trial += 1
    return errors, bits


def measure_ber(
    link: LinkConfig,
    profile: ch.ChannelProfile | None,
    ebn0_list,
    target_errors: int = 200,
    seed: int = 0,
    max_bits: float = 2e7,
    n_symbols: int = 40,
    realization: ch.ChannelRealization | None = None,
    jobs: int = 1,
) -> list[CurvePoint]:
    """Uncoded 16-QAM BER per Eb/N0 with perfect-CSI ZF equalization.

    Each trial draws a fresh static realization of ``profile`` (or uses
    ``realization`` when given) and fresh noise from
    ``trial_rng(seed, point, trial)``.  A point stops after
    ``target_errors`` bit errors or ``max_bits`` bits.
    """
    if link.is_fbmc and link.waveform == "fbmc-fs" and link.n_g is None:
        raise ValueError("fbmc-fs needs n_g")
    n_qam = max(n_symbols // 2, 3)
    args = [
        (link, profile, float(e), target_errors, max_bits, seed, i, n_qam, realization)
        for i, e in enumerate(ebn0_list)
    ]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            res = list(ex.map(_ber_point_star, args))
    else:
        res = [_ber_point(*a) for a in args]
    pts = []
    for (e, b), a in zip(res, args):
        pts.append(CurvePoint(a[2], e / b if b else float("nan"), {"series": link.label, "errors": e, "bits": b}))
    return pts


def _ber_point_star(a):
    return _ber_point(*a)


# ---------------------------------------------------------------- output


def write_curves_csv(path, curves) -> Path:
    """Write ``x,y,series`` rows for curves or lists of :class:`CurvePoint`."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "series"])
        for c in curves:
            pts = c.points() if isinstance(c, Curve) else c
            for pt in pts:
                w.writerow([repr(float(pt.x)), repr(float(pt.y)), pt.meta.get("series", "")])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if hasattr(obj, "__dataclass_fields__"):
        return _jsonable(asdict(obj))
    return obj


def content_hash(obj) -> str:
    """SHA-256 of the canonical JSON encoding of ``obj``."""
    blob = json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def write_manifest(path, config: dict, seeds, outputs=(), extra=None) -> Path:
    from . import __version__

    man = {
        "schema": 1,
        "library": {"name": "fbmcsim", "version": __version__},
        "config": _jsonable(config),
        "seeds": _jsonable(seeds),
        "input_hash": content_hash({"config": config, "seeds": seeds}),
        "outputs": [str(o) for o in outputs],
    }
    if extra:
        man.update(_jsonable(extra))
    path = Path(path)
    path.write_text(json.dumps(man, indent=2, sort_keys=True))
    return path
