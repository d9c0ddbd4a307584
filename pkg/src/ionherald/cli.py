"""Batch front-end: simulate runs, correlate event files, fit fringes,
reconstruct the two-photon state, and reproduce all published numbers.

Exit codes: 0 success, 2 configuration error, 3 data/validation error,
4 convergence error.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, ConvergenceError, DataError
from . import polarization as pol
from . import presets
from .biphoton import (SourceModel, absorber_for, fringe_params,
                       scan_analyzer)
from .correlate import (DEFAULT_BIN_US, DEFAULT_WINDOW_BINS, extract,
                        histogram_from_stream, write_histogram)
from .fringes import (FringeScan, ScanPoint, fit_fringe, write_fit_record,
                      write_plot_data, write_scan)
from .sim import (RateConfig, RunManifest, SequenceConfig, read_events,
                  simulate_run, write_events)
from . import tomography as tom

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CONVERGENCE = 4


# --- config files -------------------------------------------------------------

_CONFIG_KEYS = {
    "run": {"seed", "duration_s"},
    "source": {"singlet_weight", "pair_rate"},
    "sequence": {"rep_rate", "cooling_ms", "prep_ms", "detect_ms"},
    "rates": {"pair_rate", "eta_trigger", "eta_herald", "branching_s",
              "dark_trigger_rate", "false_onset_rate", "onset_latency_us",
              "onset_jitter_ns"},
    "absorber": {"basis", "allowed"},
    "analyzer": {"basis", "hwp_deg", "theta_ref_deg"},
}


def load_manifest_config(path) -> RunManifest:
    """Build a RunManifest from a flat sectioned key=value config file."""
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    for section in cp.sections():
        if section not in _CONFIG_KEYS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key in cp[section]:
            if key not in _CONFIG_KEYS[section]:
                raise ConfigError(f"{path}: unknown key {section}.{key}")

    def getf(section, key, default):
        return cp.getfloat(section, key, fallback=default) \
            if cp.has_section(section) else default

    seed = int(getf("run", "seed", 0))
    duration_s = getf("run", "duration_s", 60.0)
    sequence = SequenceConfig(
        rep_rate=getf("sequence", "rep_rate", 10.0),
        cooling_ms=getf("sequence", "cooling_ms", 30.0),
        prep_ms=getf("sequence", "prep_ms", 20.0),
        detect_ms=getf("sequence", "detect_ms", 50.0))
    pair_rate = getf("source", "pair_rate", 1.0)
    source = SourceModel(pol.singlet(),
                         getf("source", "singlet_weight", 1.0), pair_rate)
    rates = RateConfig(
        pair_rate=getf("rates", "pair_rate", pair_rate),
        eta_trigger=getf("rates", "eta_trigger", 0.1),
        eta_herald=getf("rates", "eta_herald", 0.07),
        branching_s=getf("rates", "branching_s", 0.94),
        dark_trigger_rate=getf("rates", "dark_trigger_rate", 0.0),
        false_onset_rate=getf("rates", "false_onset_rate", 0.0),
        onset_latency_us=getf("rates", "onset_latency_us", 1.0),
        onset_jitter_ns=getf("rates", "onset_jitter_ns", 100.0))

    ab_basis = cp.get("absorber", "basis", fallback="RL")
    if ab_basis not in pol.BASES:
        raise ConfigError(f"{path}: absorber.basis must be one of RL/HV/DA")
    absorber = absorber_for(pol.BASES[ab_basis],
                            cp.get("absorber", "allowed", fallback="plus"))
    an_basis = cp.get("analyzer", "basis", fallback=ab_basis)
    if an_basis not in pol.BASES:
        raise ConfigError(f"{path}: analyzer.basis must be one of RL/HV/DA")
    analyzer = scan_analyzer(pol.BASES[an_basis],
                             getf("analyzer", "hwp_deg", 45.0),
                             getf("analyzer", "theta_ref_deg", 0.0))
    return RunManifest(seed, duration_s, absorber, analyzer, source,
                       sequence, rates)


def _apply_overrides(manifest: RunManifest, overrides: dict) -> RunManifest:
    """Apply `section.key=value` overrides to a manifest."""
    source, rates, sequence = manifest.source, manifest.rates, manifest.sequence
    for dotted, value in overrides.items():
        try:
            section, key = dotted.split(".", 1)
        except ValueError:
            raise ConfigError(f"override {dotted!r} is not section.key=value")
        v = float(value)
        if section == "rates" and key in _CONFIG_KEYS["rates"]:
            rates = replace(rates, **{key: v})
        elif section == "source" and key in _CONFIG_KEYS["source"]:
            source = replace(source, **{key: v})
        elif section == "sequence" and key in _CONFIG_KEYS["sequence"]:
            sequence = replace(sequence, **{key: v})
        else:
            raise ConfigError(f"unknown override key {dotted!r}")
    if "source.pair_rate" in overrides and "rates.pair_rate" not in overrides:
        rates = replace(rates, pair_rate=source.pair_rate)
    if "rates.pair_rate" in overrides and "source.pair_rate" not in overrides:
        source = replace(source, pair_rate=rates.pair_rate)
    return replace(manifest, source=source, rates=rates, sequence=sequence)


def _parse_override_args(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--override needs key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


# --- commands -------------------------------------------------------------------

def cmd_simulate(args) -> int:
    if args.config:
        manifest = load_manifest_config(args.config)
        if args.seed is not None:
            manifest = replace(manifest, seed=args.seed)
    elif args.preset:
        manifest = presets.preset_manifest(
            args.preset, args.seed if args.seed is not None else 0,
            angle_deg=args.angle, minutes=args.minutes)
    else:
        raise ConfigError("simulate needs --config or --preset")
    manifest = _apply_overrides(manifest, _parse_override_args(args.override))
    stream = simulate_run(manifest)
    write_events(stream, args.out)
    print(f"simulated {manifest.n_trials} trials: "
          f"{len(stream.apd_times())} APD, {len(stream.onset_times())} onsets "
          f"-> {args.out}")
    return EXIT_OK


def cmd_g2(args) -> int:
    stream = read_events(args.events)
    hist = histogram_from_stream(stream, args.bin_us, args.window_bins)
    result = extract(hist)
    write_histogram(hist, args.out_prefix + ".hist.txt")
    manifest = stream.manifest
    record = {
        "coincidences": result.coincidences,
        "coincidence_err": f"{result.coincidence_err:.9g}",
        "background_per_bin": f"{result.background_per_bin:.9g}",
        "background_err": f"{result.background_err:.9g}",
        "signal_is_peak": result.signal_is_peak,
        "total_apd": hist.total_apd,
        "total_onsets": hist.total_onsets,
        "duration_s": manifest.duration_s,
        "basis": manifest.absorber.basis.label,
        "hwp_angle_deg": manifest.analyzer.hwp_angle,
    }
    with open(args.out_prefix + ".res.txt", "w", encoding="utf-8") as fh:
        for k, v in record.items():
            fh.write(f"{k}={v}\n")
    print(f"tau=0 coincidences {result.coincidences} "
          f"(background {result.background_per_bin:.2f}/bin) "
          f"-> {args.out_prefix}.res.txt")
    return EXIT_OK


def _read_kv(path) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and "=" in line:
                k, v = line.split("=", 1)
                out[k] = v
    return out


def cmd_fringe(args) -> int:
    res_files = sorted(Path(args.scan_dir).glob("*.res.txt"))
    if len(res_files) < 4:
        raise DataError(f"{args.scan_dir}: found {len(res_files)} scan points,"
                        " need at least 4")
    pts, basis_label = [], None
    for f in res_files:
        kv = _read_kv(f)
        try:
            pts.append(ScanPoint(float(kv["hwp_angle_deg"]),
                                 float(kv["coincidences"]),
                                 float(kv["background_per_bin"]),
                                 float(kv["duration_s"])))
        except (KeyError, ValueError) as exc:
            raise DataError(f"{f}: incomplete scan-point record: {exc}")
        basis_label = kv.get("basis", basis_label)
    scan = FringeScan(pol.BASES.get(basis_label, pol.RL), tuple(pts))
    fit = fit_fringe(scan, args.theta0)
    write_fit_record(fit, args.out_prefix + ".fit.txt",
                     extra={"basis": basis_label})
    write_plot_data(scan, fit, args.out_prefix + ".plot.txt")
    print(f"visibility {fit.visibility:.3f} +- {fit.visibility_err:.3f} "
          f"(amplitude {fit.amplitude:.1f}, offset {fit.offset:.1f}) "
          f"-> {args.out_prefix}.fit.txt")
    return EXIT_OK


def cmd_tomo(args) -> int:
    counts = tom.read_counts_table(args.counts)
    if args.bootstrap > 0:
        m = tom.bootstrap_metrics(counts, args.bootstrap, args.seed)
        rho = tom.mle_reconstruct(counts)
    else:
        rho = tom.mle_reconstruct(counts)
        m = tom.metrics(rho)
    tom.write_density_matrix(rho, args.out_prefix + ".rho.txt")
    with open(args.out_prefix + ".metrics.txt", "w", encoding="utf-8") as fh:
        fh.write(f"fidelity_singlet={m.fidelity_singlet:.9g}\n")
        fh.write(f"concurrence={m.concurrence:.9g}\n")
        fh.write(f"tangle={m.tangle:.9g}\n")
        if m.fidelity_err is not None:
            fh.write(f"fidelity_err={m.fidelity_err:.9g}\n")
            fh.write(f"concurrence_err={m.concurrence_err:.9g}\n")
            fh.write(f"tangle_err={m.tangle_err:.9g}\n")
    print(f"F = {m.fidelity_singlet:.3f}  C = {m.concurrence:.3f}  "
          f"T = {m.tangle:.3f} -> {args.out_prefix}.metrics.txt")
    return EXIT_OK


# --- reproduce: the full published-number pipeline -----------------------------

def _spawned_seeds(master_seed: int, n: int, stream_id: int) -> list[int]:
    """Deterministic per-run seeds: one spawned child per (stage, run)."""
    children = np.random.SeedSequence(master_seed).spawn(stream_id + 1)
    grand = children[stream_id].spawn(n)
    return [int(c.generate_state(1, np.uint64)[0]) for c in grand]


def _verdict(measured: float, target: float, tol: float) -> str:
    return "PASS" if abs(measured - target) <= tol else "FAIL"


def reproduce_paper(master_seed: int, out_dir, scale: float = 1.0,
                    overrides: dict | None = None, quiet: bool = False):
    """Run the calibrated fringe scans and the 16-setting tomography, compare
    every reproduced number against its published value, and write a report.

    ``scale`` shrinks all run durations (and the count targets with them) for
    cheap smoke runs; 1.0 is the paper scale. Returns the report rows.
    """
    if scale <= 0.0:
        raise ConfigError("scale must be > 0")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    overrides = overrides or {}
    rows = []

    def log(msg):
        if not quiet:
            print(msg)

    for stage, name in enumerate(("rl", "hv", "da")):
        plan = presets.fringe_plan(name)
        minutes = plan.point_minutes * scale
        seeds = _spawned_seeds(master_seed, len(plan.angles), stage)
        pts = []
        for ang, seed in zip(plan.angles, seeds):
            manifest = _apply_overrides(
                presets.manifest_for_angle(plan, ang, seed, minutes),
                overrides)
            res = extract(histogram_from_stream(simulate_run(manifest)))
            pts.append(ScanPoint(ang, res.coincidences,
                                 res.background_per_bin, minutes * 60.0))
        scan = FringeScan(plan.absorber.basis, tuple(pts))
        write_scan(scan, out / f"scan_{name}.txt")
        theta0 = fringe_params(plan.source, plan.absorber, plan.rates,
                               plan.sequence, plan.theta_ref_deg).theta0_deg
        fit = fit_fringe(scan, theta0)
        write_fit_record(fit, out / f"fit_{name}.txt",
                         extra={"basis": plan.basis_label})
        write_plot_data(scan, fit, out / f"fit_{name}.plot.txt")

        t = plan.targets
        at_max = pts[list(plan.angles).index(presets.ORTHOGONAL_ANGLE_DEG)]
        c_target = t.coincidences * scale
        b_target = t.background * scale
        rows.append((f"{name}_coincidences", at_max.coincidences, c_target,
                     3.0 * np.sqrt(c_target)))
        rows.append((f"{name}_background", at_max.background, b_target,
                     3.0 * np.sqrt(b_target)))
        rows.append((f"{name}_visibility", fit.visibility, t.visibility,
                     3.0 * presets.PAPER_VISIBILITY_QUOTED_ERR[name]))
        log(f"[{name}] max point {at_max.coincidences:.0f} counts, "
            f"background {at_max.background:.1f}, "
            f"visibility {fit.visibility:.3f}")

    plan = presets.tomo_plan()
    minutes = plan.setting_minutes * scale
    seeds = _spawned_seeds(master_seed, len(plan.settings), 3)
    rows_t = []
    for setting, seed in zip(plan.settings, seeds):
        manifest = _apply_overrides(
            presets.manifest_for_setting(plan, setting, seed, minutes),
            overrides)
        res = extract(histogram_from_stream(simulate_run(manifest)))
        corrected = max(0.0, res.coincidences - res.background_per_bin)
        rows_t.append(tom.CountsRow(setting, corrected, res.coincidences,
                                    res.background_per_bin, minutes * 60.0))
    counts = tom.CountsTable(tuple(rows_t))
    tom.write_counts_table(counts, out / "tomo_counts.txt")
    try:
        rho = tom.mle_reconstruct(counts)
        tom.write_density_matrix(rho, out / "tomo_rho.txt")
        m = tom.metrics(rho)
        measured_metrics = (("fidelity", m.fidelity_singlet),
                            ("concurrence", m.concurrence),
                            ("tangle", m.tangle))
        log(f"[tomo] F = {m.fidelity_singlet:.3f}, C = {m.concurrence:.3f}, "
            f"T = {m.tangle:.3f}")
    except (DataError, ConvergenceError) as exc:
        # unreconstructable counts (e.g. no signal at all) fail the rows
        log(f"[tomo] reconstruction failed: {exc}")
        measured_metrics = (("fidelity", float("nan")),
                            ("concurrence", float("nan")),
                            ("tangle", float("nan")))
    for key, measured in measured_metrics:
        rows.append((key, measured, presets.PAPER_METRIC_TARGETS[key],
                     3.0 * presets.PAPER_METRIC_QUOTED_ERR[key]))

    lines = [f"{'quantity':<18}{'measured':>12}{'published':>12}"
             f"{'tolerance':>12}  verdict"]
    kv_lines = [f"master_seed={master_seed}", f"scale={scale:.9g}"]
    all_pass = True
    for key, measured, target, tol in rows:
        verdict = _verdict(measured, target, tol)
        all_pass &= verdict == "PASS"
        lines.append(f"{key:<18}{measured:>12.3f}{target:>12.3f}"
                     f"{tol:>12.3f}  {verdict}")
        kv_lines += [f"{key}_measured={measured:.9g}",
                     f"{key}_target={target:.9g}",
                     f"{key}_tol={tol:.9g}",
                     f"{key}_verdict={verdict}"]
    kv_lines.append(f"all_pass={all_pass}")
    report = "\n".join(lines)
    (out / "report.txt").write_text(report + "\n", encoding="utf-8")
    (out / "report.kv").write_text("\n".join(kv_lines) + "\n",
                                   encoding="utf-8")
    log(report)
    return rows


def cmd_reproduce(args) -> int:
    reproduce_paper(args.seed, args.out_dir, args.scale,
                    _parse_override_args(args.override), quiet=args.quiet)
    return EXIT_OK


# --- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ionherald",
        description="Simulate and analyze heralded single-photon absorption "
                    "of polarization-entangled pairs by a trapped ion.")
    sub = p.add_subparsers(dest="command", required=True)

    config_help = "config file sections and keys: " + "; ".join(
        f"[{sec}] {', '.join(sorted(keys))}"
        for sec, keys in _CONFIG_KEYS.items())
    ps = sub.add_parser("simulate", help="generate a time-tagged event file",
                        epilog=config_help)
    ps.add_argument("--config", help="sectioned key=value config file")
    ps.add_argument("--preset", help="named preset (paper-rl, paper-hv, paper-da)")
    ps.add_argument("--angle", type=float, default=None,
                    help="HWP dial angle in degrees (presets only)")
    ps.add_argument("--minutes", type=float, default=None,
                    help="run duration in minutes (presets only)")
    ps.add_argument("--seed", type=int, default=None)
    ps.add_argument("--override", action="append", metavar="SECTION.KEY=V")
    ps.add_argument("--out", required=True)
    ps.set_defaults(func=cmd_simulate)

    pg = sub.add_parser("g2", help="coincidence histogram from an event file")
    pg.add_argument("--events", required=True)
    pg.add_argument("--bin-us", type=float, default=DEFAULT_BIN_US)
    pg.add_argument("--window-bins", type=int, default=DEFAULT_WINDOW_BINS)
    pg.add_argument("--out-prefix", required=True)
    pg.set_defaults(func=cmd_g2)

    pf = sub.add_parser("fringe", help="fit a scan directory of g2 results")
    pf.add_argument("--scan-dir", required=True)
    pf.add_argument("--theta0", type=float, default=0.0,
                    help="fixed offset angle of the fit in degrees")
    pf.add_argument("--out-prefix", required=True)
    pf.set_defaults(func=cmd_fringe)

    pt = sub.add_parser("tomo", help="reconstruct the state from a counts table")
    pt.add_argument("--counts", required=True)
    pt.add_argument("--bootstrap", type=int, default=0,
                    help="parametric bootstrap replicas for error bars")
    pt.add_argument("--seed", type=int, default=0)
    pt.add_argument("--out-prefix", required=True)
    pt.set_defaults(func=cmd_tomo)

    pr = sub.add_parser("reproduce",
                        help="run all paper presets and compare to the "
                             "published numbers")
    pr.add_argument("--seed", type=int, default=42)
    pr.add_argument("--out-dir", required=True)
    pr.add_argument("--scale", type=float, default=1.0,
                    help="duration scale factor (1.0 = paper scale)")
    pr.add_argument("--override", action="append", metavar="SECTION.KEY=V")
    pr.add_argument("--quiet", action="store_true")
    pr.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConvergenceError as exc:
        print(f"convergence error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
