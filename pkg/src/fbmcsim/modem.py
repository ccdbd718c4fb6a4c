"""FBMC/OQAM and CP-OFDM modems over a shared grid/burst data model.

Grids are ``(n_symbols, m)`` arrays indexed ``[n, m]``.  All transforms are
unitary (``sqrt(m) * ifft`` at the transmitter, ``fft / sqrt(m)`` at the
receiver).  The FBMC modem scales the prototype filter to ``sum g^2 = m`` so
that a noiseless round trip returns the transmitted PAM amplitudes.

FBMC symbol ``n`` occupies samples ``[n m/2, n m/2 + m)``; each subcarrier
carries the phase ``i^(n+m) (-1)^(n m)`` and, for filters whose symmetry
centre is not ``m/2``, the linear phase ``exp(-2j pi m delay / m)``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .filters import PrototypeFilter, TruncatedFreqResponse

__all__ = [
    "ModemParams",
    "OqamGrid",
    "BasebandSignal",
    "qam_to_oqam",
    "oqam_to_qam",
    "ppn_modulate",
    "ppn_demodulate",
    "fs_demodulate",
    "ofdm_modulate",
    "ofdm_demodulate",
    "zf_equalizer_coeffs",
    "fbmc_burst_length",
    "write_burst",
    "read_burst",
    "write_grid_csv",
    "read_grid_csv",
]


@dataclass(frozen=True)
class ModemParams:
    """Modem configuration.

    ``active_set`` defaults to every subcarrier.  ``filter`` is required by
    the FBMC paths, ``rx_taps`` by the FS receiver only.
    """

    m: int
    n_symbols: int
    active_set: tuple = None
    cp_len: int = 0
    filter: PrototypeFilter | None = None
    rx_taps: TruncatedFreqResponse | None = None
    k_overlap: int = 1

    def __post_init__(self):
        if self.m < 2 or self.m % 2:
            raise ValueError(f"m must be a positive even integer, got {self.m}")
        if self.n_symbols < 1:
            raise ValueError("n_symbols must be >= 1")
        if not 0 <= self.cp_len < self.m:
            raise ValueError(f"cp_len must be in [0, m), got {self.cp_len}")
        act = range(self.m) if self.active_set is None else self.active_set
        act = tuple(sorted(set(int(a) for a in act)))
        if act and (act[0] < 0 or act[-1] >= self.m):
            raise ValueError("active_set must lie in [0, m-1]")
        object.__setattr__(self, "active_set", act)
        if self.filter is not None and self.filter.m != self.m:
            raise ValueError("filter.m does not match m")
        if self.rx_taps is not None and self.rx_taps.m != self.m:
            raise ValueError("rx_taps.m does not match m")

    @property
    def n_active(self) -> int:
        return len(self.active_set)

    @property
    def active_mask(self) -> np.ndarray:
        mask = np.zeros(self.m, dtype=bool)
        mask[list(self.active_set)] = True
        return mask


@dataclass
class OqamGrid:
    """Real PAM amplitudes ``a_n(m)``, shape ``(n_symbols, m)``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if np.iscomplexobj(v):
            if np.any(v.imag != 0):
                raise ValueError("OQAM grid must be real")
            v = v.real
        v = np.asarray(v, dtype=float)
        if v.ndim != 2:
            raise ValueError("OQAM grid must be 2-D (n_symbols, m)")
        if not np.all(np.isfinite(v)):
            raise ValueError("OQAM grid must be finite")
        self.values = v

    @property
    def n_symbols(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]


@dataclass
class BasebandSignal:
    """Complex samples; sample 0 corresponds to grid time ``-origin``."""

    samples: np.ndarray
    origin: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=complex)
        if self.samples.ndim != 1:
            raise ValueError("samples must be 1-D")

    def __len__(self) -> int:
        return self.samples.size

    def with_samples(self, samples) -> "BasebandSignal":
        return BasebandSignal(np.asarray(samples, dtype=complex), self.origin, dict(self.meta))


def qam_to_oqam(qam) -> OqamGrid:
    """Stagger QAM symbol ``t`` onto FBMC symbols ``2t`` (real) and ``2t+1`` (imag)."""
    q = np.atleast_2d(np.asarray(qam, dtype=complex))
    out = np.empty((2 * q.shape[0], q.shape[1]))
    out[0::2] = q.real
    out[1::2] = q.imag
    return OqamGrid(out)


def oqam_to_qam(pam) -> np.ndarray:
    v = pam.values if isinstance(pam, OqamGrid) else np.asarray(pam, dtype=float)
    if v.shape[0] % 2:
        raise ValueError("n_symbols must be even to rebuild QAM symbols")
    return v[0::2] + 1j * v[1::2]


def _phase(n_symbols: int, m: int) -> np.ndarray:
    """``i^(n+m) (-1)^(n m)`` for every lattice point."""
    n = np.arange(n_symbols)[:, None]
    k = np.arange(m)[None, :]
    return (1j ** ((n + k) % 4)) * (1 - 2 * ((n * k) % 2))


def _delay_phase(m: int, delay: float) -> np.ndarray:
    if delay == 0:
        return np.ones(m)
    return np.exp(-2j * np.pi * np.arange(m) * delay / m)


def _window(filt: PrototypeFilter) -> np.ndarray:
    g = filt.taps
    return g * np.sqrt(filt.m / np.dot(g, g))


def _require_filter(p: ModemParams) -> PrototypeFilter:
    if p.filter is None:
        raise ValueError("ModemParams.filter is required for FBMC")
    if p.k_overlap != 1 or p.filter.k_overlap != 1:
        raise ValueError("only k_overlap = 1 is supported")
    return p.filter


def fbmc_burst_length(p: ModemParams) -> int:
    return (p.n_symbols - 1) * p.m // 2 + p.m


def _masked(grid: OqamGrid, p: ModemParams) -> np.ndarray:
    a = grid.values
    if a.shape != (p.n_symbols, p.m):
        raise ValueError(f"grid shape {a.shape} != ({p.n_symbols}, {p.m})")
    return np.where(p.active_mask[None, :], a, 0.0)


def ppn_modulate(grid: OqamGrid, p: ModemParams) -> BasebandSignal:
    """PPN transmitter: per-symbol IFFT, windowing, overlap-add at ``m/2``."""
    filt = _require_filter(p)
    m = p.m
    w = _window(filt)
    X = _masked(grid, p) * _phase(p.n_symbols, m) * _delay_phase(m, filt.delay)[None, :]
    blocks = np.fft.ifft(X, axis=1) * np.sqrt(m) * w[None, :]
    s = np.zeros(fbmc_burst_length(p), dtype=complex)
    half = m // 2
    for n in range(p.n_symbols):
        s[n * half : n * half + m] += blocks[n]
    return BasebandSignal(s, 0, {"waveform": "fbmc", "m": m, "n_symbols": p.n_symbols})


def _frames(r: BasebandSignal, p: ModemParams) -> np.ndarray:
    """``(n_symbols, m)`` matrix of receive windows (zero-padded past the end)."""
    m, half = p.m, p.m // 2
    need = fbmc_burst_length(p)
    x = r.samples
    if x.size < need:
        x = np.concatenate([x, np.zeros(need - x.size, dtype=complex)])
    idx = np.arange(p.n_symbols)[:, None] * half + np.arange(m)[None, :]
    return x[idx]


def _eq_matrix(eq, p: ModemParams) -> np.ndarray:
    if eq is None:
        return np.ones((1, p.m))
    e = np.asarray(eq, dtype=complex)
    if e.ndim == 0:
        return np.full((1, p.m), complex(e))
    if e.ndim == 1:
        if e.size != p.m:
            raise ValueError(f"equalizer length {e.size} != m")
        return e[None, :]
    if e.shape != (p.n_symbols, p.m):
        raise ValueError(f"equalizer shape {e.shape} != ({p.n_symbols}, {p.m})")
    return e


def _detect(U: np.ndarray, p: ModemParams, delay: float) -> OqamGrid:
    ph = _phase(p.n_symbols, p.m) * _delay_phase(p.m, delay)[None, :]
    a = np.real(np.conj(ph) * U)
    return OqamGrid(np.where(p.active_mask[None, :], a, 0.0))


def ppn_demodulate(r: BasebandSignal, p: ModemParams, eq=None) -> OqamGrid:
    """PPN receiver: windowing, FFT, equalization, de-rotation, real part."""
    filt = _require_filter(p)
    w = _window(filt)
    U = np.fft.fft(_frames(r, p) * w[None, :], axis=1) / np.sqrt(p.m)
    return _detect(U * _eq_matrix(eq, p), p, filt.delay)


def fs_demodulate(r: BasebandSignal, p: ModemParams, eq=None) -> OqamGrid:
    """FS receiver: FFT, equalization, circular convolution with ``G'``.

    The ``G(0)`` factor removed by the rescaling (together with the filter
    energy normalization) is folded into the equalizer.
    """
    filt = _require_filter(p)
    rx = p.rx_taps
    if rx is None:
        raise ValueError("fs_demodulate requires ModemParams.rx_taps")
    m = p.m
    Y = np.fft.fft(_frames(r, p), axis=1) / np.sqrt(m)
    gain = rx.scale * np.sqrt(m / filt.energy) / m
    Y = Y * (_eq_matrix(eq, p) * gain)
    taps = rx.complex_taps()
    Z = np.zeros_like(Y)
    for l, c in zip(rx.bins, taps):
        # Z(m) += G'(l) Y(m - l)
        Z += c * np.roll(Y, l, axis=1)
    return _detect(Z, p, rx.delay)


def ofdm_modulate(qam, p: ModemParams) -> BasebandSignal:
    """CP-OFDM transmitter; ``qam`` has shape ``(n_ofdm_symbols, m)``."""
    X = np.atleast_2d(np.asarray(qam, dtype=complex))
    if X.shape[1] != p.m:
        raise ValueError(f"grid width {X.shape[1]} != m")
    X = np.where(p.active_mask[None, :], X, 0)
    x = np.fft.ifft(X, axis=1) * np.sqrt(p.m)
    if p.cp_len:
        x = np.concatenate([x[:, -p.cp_len :], x], axis=1)
    return BasebandSignal(
        x.ravel(), 0, {"waveform": "ofdm", "m": p.m, "n_symbols": X.shape[0], "cp_len": p.cp_len}
    )


def ofdm_demodulate(r: BasebandSignal, p: ModemParams, eq=None, n_symbols=None, window_start=None):
    """CP-OFDM receiver.

    ``window_start`` is the FFT window position within each ``m + cp_len``
    block; it defaults to the middle of the cyclic prefix.  The resulting
    known rotation is removed so the output is referenced to the CP end.
    """
    m, cp = p.m, p.cp_len
    step = m + cp
    ns = r.samples.size // step if n_symbols is None else int(n_symbols)
    start = cp // 2 if window_start is None else int(window_start)
    x = r.samples
    need = (ns - 1) * step + start + m
    if x.size < need:
        x = np.concatenate([x, np.zeros(need - x.size, dtype=complex)])
    idx = np.arange(ns)[:, None] * step + start + np.arange(m)[None, :]
    Y = np.fft.fft(x[idx], axis=1) / np.sqrt(m)
    Y *= np.exp(2j * np.pi * np.arange(m) * (cp - start) / m)[None, :]
    if eq is not None:
        e = np.asarray(eq, dtype=complex)
        Y = Y * (e if e.ndim == 2 else e[None, ...] if e.ndim == 1 else e)
    return np.where(p.active_mask[None, :], Y, 0)


def zf_equalizer_coeffs(channel_taps, p: ModemParams) -> np.ndarray:
    """Per-subcarrier zero-forcing coefficients ``1 / H(m)``."""
    h = np.asarray(channel_taps, dtype=complex)
    if h.size > p.m:
        raise ValueError("channel longer than m")
    H = np.fft.fft(h, p.m)
    if np.abs(H).min() < 1e-12:
        raise ValueError("channel response has a null below 1e-12")
    return 1.0 / H


def write_burst(sig: BasebandSignal, path, m: int, n_symbols: int) -> tuple[Path, Path]:
    """Interleaved float64 little-endian I/Q samples plus a JSON sidecar."""
    path = Path(path)
    inter = np.empty(2 * len(sig), dtype="<f8")
    inter[0::2] = sig.samples.real
    inter[1::2] = sig.samples.imag
    path.write_bytes(inter.tobytes())
    side = path.with_suffix(path.suffix + ".json")
    side.write_text(json.dumps({"m": m, "n_symbols": n_symbols, "origin": sig.origin}, indent=2))
    return path, side


def read_burst(path) -> tuple[BasebandSignal, dict]:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    inter = np.frombuffer(path.read_bytes(), dtype="<f8")
    if inter.size % 2:
        raise ValueError("burst file has an odd number of float64 values")
    return BasebandSignal(inter[0::2] + 1j * inter[1::2], int(meta.get("origin", 0))), meta


def write_grid_csv(grid: OqamGrid, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "m", "value"])
        for n, row in enumerate(grid.values):
            for k, v in enumerate(row):
                w.writerow([n, k, repr(float(v))])
    return path


def read_grid_csv(path) -> OqamGrid:
    rows = []
    with Path(path).open(newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append((int(rec["n"]), int(rec["m"]), float(rec["value"])))
    if not rows:
        raise ValueError("empty grid file")
    ns = max(r[0] for r in rows) + 1
    ms = max(r[1] for r in rows) + 1
    v = np.zeros((ns, ms))
    for n, k, x in rows:
        v[n, k] = x
    return OqamGrid(v)
