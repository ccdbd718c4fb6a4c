"""Experiment runner: ``fbmcsim {filters,psd,sir,ber,hw}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import shutil
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis as an
from . import channel as ch
from . import filters as fl
from . import hwmodel as hw
from . import modem as md

log = logging.getLogger("fbmcsim")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
COMMANDS = ("filters", "psd", "sir", "ber", "hw")
FILTERS = ("qmf1", "tfl1", "npr1")
WAVEFORMS = ("ofdm", "fbmc-ppn", "fbmc-fs")
RB_SIZE = 12


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class ExperimentConfig:
    waveform: str = "fbmc-fs"
    filter: str = "npr1"
    filters: list = field(default_factory=lambda: list(FILTERS))
    m: int = 512
    n_symbols: int = 40
    n_g: int = 7
    n_g_by_filter: dict = field(default_factory=lambda: {"npr1": 7, "tfl1": 31, "qmf1": 41})
    cp_len: int = 36
    active_rbs: int = 25
    notch_subcarriers: int = 12
    timing_pct: list = field(default_factory=lambda: [0, 0.5, 1, 2, 3, 3.5, 4, 5])
    cfo: list = field(default_factory=lambda: [0.0, 0.02, 0.05, 0.1, 0.15, 0.2])
    profile: str = "EPA"
    ebn0: list = field(default_factory=lambda: [10, 15, 20, 25, 28])
    target_errors: int = 200
    max_bits: float = 2e7
    psd_symbols: int = 800
    table_ng_max: int = 161
    seed: int = 0
    out: str = "out"
    jobs: int = 1

    def validate(self, command: str | None = None) -> "ExperimentConfig":
        def bad(name, why):
            raise ConfigError(f"{name}: {why} (got {getattr(self, name)!r})")

        if self.waveform not in WAVEFORMS:
            bad("waveform", f"must be one of {WAVEFORMS}")
        if self.filter.lower() not in FILTERS:
            bad("filter", f"must be one of {FILTERS}")
        self.filter = self.filter.lower()
        if not self.filters or any(str(f).lower() not in FILTERS for f in self.filters):
            bad("filters", f"entries must be in {FILTERS}")
        self.filters = [str(f).lower() for f in self.filters]
        if not isinstance(self.m, int) or self.m < 4 or self.m & (self.m - 1):
            bad("m", "must be a power of two >= 4")
        if self.m < 8 and (command != "filters" or "npr1" in self.filters):
            bad("m", "must be >= 8 for NPR1 and for modem experiments")
        if not isinstance(self.n_symbols, int) or self.n_symbols < 4 or self.n_symbols % 2:
            bad("n_symbols", "must be an even integer >= 4")
        for name, ng in [("n_g", self.n_g), *((f"n_g_by_filter.{k}", v) for k, v in self.n_g_by_filter.items())]:
            if command == "filters":
                break
            if not isinstance(ng, int) or ng < 1 or ng > self.m or (ng % 2 == 0 and ng != self.m):
                raise ConfigError(f"{name}: must be odd in [1, m] or equal to m (got {ng!r})")
        if command != "filters":
            if not isinstance(self.cp_len, int) or not 0 <= self.cp_len < self.m:
                bad("cp_len", "must be in [0, m)")
            if not isinstance(self.active_rbs, int) or self.active_rbs < 1 or self.active_rbs * RB_SIZE >= self.m:
                bad("active_rbs", "must satisfy 1 <= 12*active_rbs < m")
            if not 0 <= self.notch_subcarriers < self.active_rbs * RB_SIZE:
                bad("notch_subcarriers", "must be smaller than the allocation")
        if any(not 0 <= float(t) < 50 for t in self.timing_pct):
            bad("timing_pct", "entries must be in [0, 50)")
        if any(not -0.5 < float(r) <= 0.5 for r in self.cfo):
            bad("cfo", "entries must be in (-0.5, 0.5]")
        if str(self.profile).upper() not in ch.BUILTIN_PROFILES and not Path(self.profile).is_file():
            bad("profile", f"must be one of {ch.BUILTIN_PROFILES} or a CSV path")
        if not self.ebn0 or any(not math.isfinite(float(e)) for e in self.ebn0):
            bad("ebn0", "must be a non-empty list of finite values")
        if not isinstance(self.target_errors, int) or self.target_errors < 1:
            bad("target_errors", "must be a positive integer")
        if not self.max_bits > 0:
            bad("max_bits", "must be positive")
        if not isinstance(self.seed, int) or self.seed < 0:
            bad("seed", "must be a non-negative integer")
        if not isinstance(self.jobs, int) or self.jobs < 1:
            bad("jobs", "must be >= 1")
        return self

    def active_set(self, notch: bool = False) -> tuple:
        """Centred allocation of ``12*active_rbs`` bins, optionally with a central notch."""
        n = self.active_rbs * RB_SIZE
        bins = list(range(-(n // 2), n - n // 2))
        if notch and self.notch_subcarriers:
            w = self.notch_subcarriers
            bins = [b for b in bins if not -(w // 2) <= b < w - w // 2]
        return tuple(sorted(b % self.m for b in bins))

    def ng_for(self, name: str) -> int:
        return int(self.n_g_by_filter.get(name, self.n_g))


PRESETS = {
    "lte25rb": dict(m=512, active_rbs=25, cp_len=36, notch_subcarriers=12, filter="npr1",
                    n_g_by_filter={"npr1": 7, "tfl1": 31, "qmf1": 41}),
}


def build_config(args, command: str | None = None) -> ExperimentConfig:
    data: dict = {}
    if args.preset:
        if args.preset not in PRESETS:
            raise ConfigError(f"preset: unknown preset {args.preset!r}; known: {sorted(PRESETS)}")
        data.update(PRESETS[args.preset])
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config: file not found: {args.config}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config: invalid JSON ({e})") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config: top level must be a JSON object")
        data.update(loaded)
    for key, val in (("seed", args.seed), ("out", args.out), ("jobs", args.jobs)):
        if val is not None:
            data[key] = val
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown configuration field")
    try:
        cfg = ExperimentConfig(**data)
    except TypeError as e:
        raise ConfigError(f"config: {e}") from None
    return cfg.validate(command)


# ------------------------------------------------------------- commands


def _filter(cfg, name) -> fl.PrototypeFilter:
    return fl.gen_filter(name, cfg.m)


def cmd_filters(cfg: ExperimentConfig, work: Path) -> dict:
    targets = [50, 55, 60, 65, 70]
    rows, table = [], {}
    for name in cfg.filters:
        f = _filter(cfg, name)
        G = fl.freq_response(f)
        fl.export_taps_csv(f, work / f"taps_{name}.csv")
        fl.export_response_csv(G, work / f"response_{name}.csv")
        sirs = {}
        for ng in range(1, min(cfg.table_ng_max, cfg.m) + 1, 2):
            sirs[ng] = an.sir_truncation(f, fl.truncate_normalize(G, ng)).sir_db
            rows.append((name, ng, sirs[ng]))
        table[name] = {t: next((ng for ng, s in sirs.items() if s >= t), None) for t in targets}
    with (work / "truncation_sir.csv").open("w") as fh:
        fh.write("filter,n_g,sir_db\n")
        for name, ng, s in rows:
            fh.write(f"{name},{ng},{s!r}\n")
    with (work / "ng_table.csv").open("w") as fh:
        fh.write("target_db," + ",".join(cfg.filters) + "\n")
        for t in targets:
            fh.write(f"{t}," + ",".join(str(table[n][t] or "") for n in cfg.filters) + "\n")
    return {"ng_table": table}


def _psd_signal(cfg, waveform, name, act, rng):
    if waveform == "ofdm":
        p = md.ModemParams(cfg.m, cfg.psd_symbols // 2, act, cfg.cp_len)
        q = (rng.choice([-1.0, 1.0], (p.n_symbols, cfg.m)) + 1j * rng.choice([-1.0, 1.0], (p.n_symbols, cfg.m)))
        return md.ofdm_modulate(q / math.sqrt(2), p)
    p = md.ModemParams(cfg.m, cfg.psd_symbols, act, filter=_filter(cfg, name))
    a = md.OqamGrid(rng.choice([-1.0, 1.0], (cfg.psd_symbols, cfg.m)) / math.sqrt(2))
    return md.ppn_modulate(a, p)


def psd_gaps(curves: dict, cfg) -> dict:
    """Band-edge and in-notch PSD levels (dB) per series."""
    out = {}
    for label, c in curves.items():
        f, y = c.x, c.y
        edge = np.abs(f) >= 0.98 * (cfg.m / 2)
        notch = np.abs(f + 0.5) <= 0.5
        out[label] = {"edge_db": float(np.mean(y[edge])), "notch_db": float(np.mean(y[notch]))}
    return out


def cmd_psd(cfg: ExperimentConfig, work: Path) -> dict:
    act = cfg.active_set(notch=True)
    curves = {}
    series = [("ofdm", None)] + [("fbmc", n) for n in cfg.filters]
    for i, (wf, name) in enumerate(series):
        rng = ch.trial_rng(cfg.seed, 10, i)
        s = _psd_signal(cfg, wf, name, act, rng)
        label = "OFDM" if wf == "ofdm" else name.upper()
        curves[label] = an.estimate_psd(s, 4 * cfg.m, 0.5, "blackmanharris", fs=cfg.m, in_band=act, series=label)
    an.write_curves_csv(work / "psd.csv", curves.values())
    levels = psd_gaps(curves, cfg)
    (work / "psd_levels.json").write_text(json.dumps(levels, indent=2))
    return {"psd_levels": levels}


def cmd_sir(cfg: ExperimentConfig, work: Path) -> dict:
    act = cfg.active_set()
    timing, cfo = [], []
    for name in cfg.filters:
        f = _filter(cfg, name)
        ng = cfg.ng_for(name)
        rx = fl.truncate_normalize(fl.freq_response(f), ng)
        fs_link = an.LinkConfig("fbmc-fs", name, cfg.m, ng, cfg.cp_len, act)
        ppn_link = an.LinkConfig("fbmc-ppn", name, cfg.m, None, cfg.cp_len, act)
        for pct in cfg.timing_pct:
            ld = int(round(pct * cfg.m / 100))
            imp = an.Impairments(timing=ld)
            timing.append((pct, an.sir_timing_fs(f, rx, ld).sir_db, f"{name.upper()}-FS analytic"))
            timing.append((pct, an.measure_sir(fs_link, imp, cfg.n_symbols, cfg.seed).sir_db, f"{name.upper()}-FS simulated"))
            timing.append((pct, an.sir_timing_ppn(f, ld).sir_db, f"{name.upper()}-PPN analytic"))
            timing.append((pct, an.measure_sir(ppn_link, imp, cfg.n_symbols, cfg.seed).sir_db, f"{name.upper()}-PPN simulated"))
        for r in cfg.cfo:
            imp = an.Impairments(cfo=float(r))
            cfo.append((r, an.sir_cfo(f, r).sir_db, f"{name.upper()} analytic"))
            cfo.append((r, an.measure_sir(ppn_link, imp, cfg.n_symbols, cfg.seed).sir_db, f"{name.upper()}-PPN simulated"))
            cfo.append((r, an.measure_sir(fs_link, imp, cfg.n_symbols, cfg.seed).sir_db, f"{name.upper()}-FS simulated"))
    ofdm = an.LinkConfig("ofdm", m=cfg.m, cp_len=cfg.cp_len, active_set=act)
    for pct in cfg.timing_pct:
        ld = int(round(pct * cfg.m / 100))
        timing.append((pct, an.measure_sir(ofdm, an.Impairments(timing=ld), cfg.n_symbols, cfg.seed).sir_db, "OFDM simulated"))
    for r in cfg.cfo:
        cfo.append((r, an.sir_cfo_ofdm(cfg.m, r).sir_db, "OFDM analytic"))
        cfo.append((r, an.measure_sir(ofdm, an.Impairments(cfo=float(r)), cfg.n_symbols, cfg.seed).sir_db, "OFDM simulated"))
    for fname, rows in (("sir_timing.csv", timing), ("sir_cfo.csv", cfo)):
        pts = [an.CurvePoint(float(x), float(y), {"series": s}) for x, y, s in rows]
        an.write_curves_csv(work / fname, [pts])
    return {"points": len(timing) + len(cfo)}


def cmd_ber(cfg: ExperimentConfig, work: Path) -> dict:
    act = cfg.active_set()
    prof = ch.load_profile(cfg.profile, sample_rate=cfg.m * ch.SUBCARRIER_SPACING)
    links = [an.LinkConfig("ofdm", m=cfg.m, cp_len=cfg.cp_len, active_set=act, ofdm_window=cfg.cp_len)]
    for name in cfg.filters:
        links.append(an.LinkConfig("fbmc-ppn", name, cfg.m, None, cfg.cp_len, act))
        links.append(an.LinkConfig("fbmc-fs", name, cfg.m, cfg.ng_for(name), cfg.cp_len, act))
    curves = []
    for link in links:
        pts = an.measure_ber(link, prof, cfg.ebn0, cfg.target_errors, cfg.seed, cfg.max_bits,
                             cfg.n_symbols, jobs=cfg.jobs)
        curves.append(pts)
    an.write_curves_csv(work / "ber.csv", curves)
    return {"profile": prof.name, "series": [l.label for l in links]}


def cmd_hw(cfg: ExperimentConfig, work: Path) -> dict:
    reports = {}
    n_c = cfg.active_rbs * RB_SIZE
    for name in cfg.filters:
        f = _filter(cfg, name)
        rx = fl.truncate_normalize(fl.freq_response(f), cfg.ng_for(name))
        reports[name] = dataclasses.asdict(hw.complexity_report(rx, cfg.m, n_c))
    (work / "complexity.json").write_text(json.dumps(reports, indent=2))

    f = _filter(cfg, "npr1")
    rx = fl.truncate_normalize(fl.freq_response(f), cfg.ng_for("npr1"))
    rng = ch.trial_rng(cfg.seed, 20)
    taps = hw.dequantize(hw.quantize_taps(rx), hw.COEFF_FMT)
    worst = 0.0
    for n in range(cfg.n_symbols):
        x = rng.uniform(-0.4, 0.4, cfg.m) + 1j * rng.uniform(-0.4, 0.4, cfg.m)
        xr, xi = hw.quantize(x.real, hw.DATA_FMT), hw.quantize(x.imag, hw.DATA_FMT)
        res = hw.fs_filter_fixed(xr, xi, rx, n=n, trace=(n == 0))
        if n == 0:
            res.write_trace_csv(work / "fs_trace.csv")
        ref = hw.fs_filter_reference(hw.dequantize(xr, hw.DATA_FMT) + 1j * hw.dequantize(xi, hw.DATA_FMT), taps, n)
        worst = max(worst, float(np.max(np.abs(hw.dequantize(res.output, hw.DATA_FMT) - ref))))
    bound = hw.error_bound(rx)
    summary = {"max_abs_error": worst, "bound": bound, "within_bound": worst <= bound,
               "bins": cfg.n_symbols * cfg.m}
    (work / "hw_error.json").write_text(json.dumps(summary, indent=2))
    if not summary["within_bound"]:
        raise FloatingPointError(f"fixed-point error {worst:.3e} exceeds bound {bound:.3e}")
    return {"complexity": reports, "error": summary}


RUNNERS = {"filters": cmd_filters, "psd": cmd_psd, "sir": cmd_sir, "ber": cmd_ber, "hw": cmd_hw}


def run(command: str, cfg: ExperimentConfig) -> dict:
    """Run a command, writing all outputs atomically into ``cfg.out``."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    work = Path(tempfile.mkdtemp(prefix=f".{command}-", dir=out))
    try:
        summary = RUNNERS[command](cfg, work)
        files = sorted(p.name for p in work.iterdir())
        an.write_manifest(
            work / "manifest.json",
            {"command": command, **dataclasses.asdict(cfg)},
            {"master": cfg.seed, "rule": "SeedSequence([master, *keys])"},
            outputs=files,
            extra={"summary": summary},
        )
        for p in work.iterdir():
            p.replace(out / p.name)
    finally:
        shutil.rmtree(work, ignore_errors=True)
    return summary


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fbmcsim", description="FBMC/OQAM short-filter experiments")
    ap.add_argument("--version", action="version", version=f"fbmcsim {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=RUNNERS[name].__name__.replace("cmd_", "") + " experiment")
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--preset", help="named preset, e.g. lte25rb")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--jobs", type=int, help="parallel workers")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = make_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = build_config(args, args.command)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        summary = run(args.command, cfg)
    except (ArithmeticError, np.linalg.LinAlgError, ValueError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    log.info(json.dumps(summary, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
