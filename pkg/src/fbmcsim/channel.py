"""Channel impairments and their frequency-domain compensation terms.

Conventions: a timing offset ``l_d`` makes the receiver window start
``l_d`` samples late; a CFO ``r`` (fraction of the subcarrier spacing)
multiplies sample ``k`` by ``exp(2j pi k r / m)``.  Compensators are the
conjugates of the impairment.

Monte-Carlo seeds are split with :class:`numpy.random.SeedSequence`: the
generator for a trial is ``default_rng(SeedSequence([master, *keys]))``
with non-negative integer keys such as ``(point_index, trial_index)``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .modem import BasebandSignal

__all__ = [
    "SUBCARRIER_SPACING",
    "ChannelProfile",
    "ChannelRealization",
    "trial_rng",
    "load_profile",
    "apply_timing_offset",
    "timing_compensation",
    "apply_cfo",
    "cpe_compensation",
    "cfo_equalizer",
    "realize_multipath",
    "apply_multipath",
    "noise_variance",
    "add_awgn",
]

log = logging.getLogger(__name__)

SUBCARRIER_SPACING = 15e3
BUILTIN_PROFILES = ("EPA", "EVA", "ETU")


def trial_rng(master: int, *keys: int) -> np.random.Generator:
    """Independent generator for ``keys`` under a master seed."""
    return np.random.default_rng(np.random.SeedSequence([int(master), *map(int, keys)]))


@dataclass(frozen=True)
class ChannelProfile:
    """Tapped delay line: ``(delay [s], mean power [dB])`` pairs."""

    taps: tuple
    name: str = "Custom"
    sample_rate: float = 512 * SUBCARRIER_SPACING

    def __post_init__(self):
        taps = tuple((float(d), float(p)) for d, p in self.taps)
        if not taps:
            raise ValueError("profile needs at least one tap")
        d = np.array([t[0] for t in taps])
        pw = np.array([t[1] for t in taps])
        if d[0] < 0 or np.any(np.diff(d) <= 0):
            raise ValueError("delays must be non-negative and increasing")
        if not np.all(np.isfinite(pw)):
            raise ValueError("powers must be finite")
        object.__setattr__(self, "taps", taps)

    @property
    def delays(self) -> np.ndarray:
        return np.array([t[0] for t in self.taps])

    @property
    def powers_db(self) -> np.ndarray:
        return np.array([t[1] for t in self.taps])

    @property
    def delay_spread(self) -> float:
        """Maximum excess delay in seconds."""
        return float(self.delays[-1] - self.delays[0])

    def with_sample_rate(self, fs: float) -> "ChannelProfile":
        return ChannelProfile(self.taps, self.name, fs)

    def sample_delays(self) -> np.ndarray:
        return np.rint(self.delays * self.sample_rate).astype(int)

    def tap_variances(self) -> np.ndarray:
        """Per-tap variances on the sample grid, summing to 1."""
        lin = 10.0 ** (self.powers_db / 10)
        lin /= lin.sum()
        var = np.zeros(self.sample_delays().max() + 1)
        np.add.at(var, self.sample_delays(), lin)
        return var


def load_profile(name_or_path, sample_rate: float = 512 * SUBCARRIER_SPACING) -> ChannelProfile:
    """Load a bundled profile (EPA/EVA/ETU) or a CSV with ``delay_ns,power_db``."""
    key = str(name_or_path)
    if key.upper() in BUILTIN_PROFILES:
        src = resources.files("fbmcsim") / "data" / "profiles" / f"{key.upper()}.csv"
        text, name = src.read_text(), key.upper()
    else:
        path = Path(key)
        text, name = path.read_text(), path.stem
    rows = list(csv.reader(text.splitlines()))
    header = [h.strip() for h in rows[0]]
    if header != ["delay_ns", "power_db"]:
        raise ValueError(f"profile header must be delay_ns,power_db, got {header}")
    taps = [(float(d) * 1e-9, float(p)) for d, p in rows[1:] if d.strip()]
    return ChannelProfile(taps, name, sample_rate)


@dataclass
class ChannelRealization:
    """Static complex tap gains on the sample grid."""

    taps: np.ndarray
    rng_seed: int | None = None
    profile: str = "Custom"
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=complex)

    def frequency_response(self, m: int) -> np.ndarray:
        return np.fft.fft(self.taps, m)


def apply_timing_offset(s: BasebandSignal, l_d: int) -> BasebandSignal:
    """Return ``r(k) = s(k + l_d)`` with zero fill, i.e. a window ``l_d`` late."""
    l_d = int(l_d)
    x = s.samples
    if abs(l_d) >= x.size:
        raise ValueError("|l_d| must be smaller than the signal length")
    out = np.zeros_like(x)
    if l_d >= 0:
        out[: x.size - l_d] = x[l_d:]
    else:
        out[-l_d:] = x[: x.size + l_d]
    return s.with_samples(out)


def timing_compensation(m, l_d, m_total: int):
    """``C_TO(m) = exp(-2j pi m l_d / M)``."""
    return np.exp(-2j * np.pi * np.asarray(m) * l_d / m_total)


def apply_cfo(s: BasebandSignal, r: float, m: int | None = None) -> BasebandSignal:
    """Rotate sample ``k`` by ``exp(2j pi k r / m)``."""
    m = int(s.meta.get("m")) if m is None else int(m)
    k = np.arange(len(s))
    return s.with_samples(s.samples * np.exp(2j * np.pi * k * r / m))


def cpe_compensation(n, r: float):
    """Common phase ``C_CPE(n) = exp(j pi n r)`` accrued by FBMC symbol ``n``."""
    return np.exp(1j * np.pi * np.asarray(n) * r)


def cfo_equalizer(m: int, n_symbols: int, r: float, delay: float = 0.0) -> np.ndarray:
    """FBMC receive coefficients removing the CFO common phase.

    The phase is referenced to the filter's symmetry centre
    ``m/2 + delay`` inside each window, so the residual rotation across the
    window is odd-symmetric around the filter peak.
    """
    n = np.arange(n_symbols)
    centre = np.exp(2j * np.pi * r * (m / 2 + delay) / m)
    c = np.conj(cpe_compensation(n, r) * centre)
    return np.repeat(c[:, None], m, axis=1)


def realize_multipath(
    profile: ChannelProfile, seed: int | None = None, guard: int | None = None, rng=None
) -> ChannelRealization:
    """Draw static Rayleigh tap gains with unit total mean power.

    ``guard`` (samples) only produces a warning record when exceeded.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    var = profile.tap_variances()
    g = (rng.standard_normal(var.size) + 1j * rng.standard_normal(var.size)) * np.sqrt(var / 2)
    real = ChannelRealization(g, seed, profile.name)
    if guard is not None and var.size - 1 > guard:
        msg = f"{profile.name}: max delay {var.size - 1} samples exceeds guard {guard}"
        real.warnings.append(msg)
        log.debug(msg)
    return real


def apply_multipath(s: BasebandSignal, realization: ChannelRealization) -> BasebandSignal:
    """Linear convolution with the tap gains (output keeps the channel tail)."""
    return s.with_samples(np.convolve(s.samples, realization.taps))


def noise_variance(
    ebn0_db: float, bits_per_symbol: int, code_rate: float = 1.0, es: float = 1.0, overhead: float = 1.0
) -> float:
    """Complex noise variance per sample for unitary-DFT modems.

    ``es`` is the mean energy of one complex symbol on an active
    subcarrier and ``overhead`` the transmit-energy overhead factor, e.g.
    ``(m + cp_len) / m`` for CP-OFDM.  With unitary transforms the per-sample
    variance equals the per-subcarrier ``N0``, so the active-subcarrier
    fraction cancels.
    """
    eb = es * overhead / (bits_per_symbol * code_rate)
    return eb / 10.0 ** (ebn0_db / 10.0)


def add_awgn(
    s: BasebandSignal,
    ebn0_db: float,
    bits_per_symbol: int,
    code_rate: float = 1.0,
    seed: int | None = None,
    es: float = 1.0,
    overhead: float = 1.0,
    rng=None,
) -> BasebandSignal:
    """Add circular white Gaussian noise; ``ebn0_db = inf`` is the identity."""
    if np.isposinf(ebn0_db):
        return s.with_samples(s.samples.copy())
    if rng is None:
        rng = np.random.default_rng(seed)
    var = noise_variance(ebn0_db, bits_per_symbol, code_rate, es, overhead)
    n = len(s)
    w = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * np.sqrt(var / 2)
    return s.with_samples(s.samples + w)
