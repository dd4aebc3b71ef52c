"""Command-line pipeline: simulate -> detect -> od, plus link-budget sweeps.

Exit codes: 0 success, 2 configuration or input error, 3 numerical
non-convergence.
"""

import argparse
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .constants import SPEED_OF_LIGHT
from .dynamics import StateVector, propagate_states
from .errors import ConfigError, ConvergenceError, GeometryError, UnderdeterminedError
from .od import _measurements_from_states, _residuals, batch_least_squares, iod_candidates
from .radar import OrbitMatchedDetector, pulse_compress
from .sim import incident_power_grid, render_scene

log = logging.getLogger("orbitradar")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3

CUBE_MEMORY_LIMIT = 2 * 1024**3
MAX_BISTATIC_RANGE_RATE = 3e4  # m/s, generous bound for LEO


@dataclass
class RunManifest:
    """What a subcommand read, wrote and how long it took."""

    subcommand: str
    config: str
    seed: int = None
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    timings_s: dict = field(default_factory=dict)

    def write(self, out_dir):
        d = asdict(self)
        d["outputs"] = [str(p) for p in self.outputs]
        d["inputs"] = [str(p) for p in self.inputs]
        return io.write_json(Path(out_dir) / f"{self.subcommand}_manifest.json", d)


def _threads(args):
    return max(1, args.threads or os.cpu_count() or 1)


# ---------------------------------------------------------------- simulate


def recording_dir(out_dir, tx_id):
    return Path(out_dir) / "recordings" / tx_id


def cmd_simulate(args, cfg):
    sc = cfg.scenario
    if args.seed is not None:
        sc.seed = args.seed
    out = Path(args.out)
    man = RunManifest("simulate", str(cfg.source), sc.seed)
    t0 = time.perf_counter()
    rendered = render_scene(sc)
    man.timings_s["render"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    for tx_id in sc.scene.transmitters:
        d = recording_dir(out, tx_id)
        man.outputs += io.write_recording(d, rendered.surveillance[tx_id], prefix="surv_")
        man.outputs += io.write_recording(d, rendered.references[tx_id], prefix="ref_")
    man.outputs.append(io.write_truth(out / "truth.csv", rendered.truth))
    man.outputs.append(io.write_json(out / "scenario.json", io.scenario_to_dict(sc)))
    man.timings_s["write"] = time.perf_counter() - t0
    man.write(out)

    print(f"rendered {sc.n_samples} samples x {len(sc.scene.tiles)} tiles for {len(sc.scene.transmitters)} transmitter(s)")
    for pt in rendered.truth.pulses:
        vis = pt.visible
        if vis.any():
            print(f"  {pt.target_id} via {pt.tx_id}: visible {pt.time[vis].min():.2f} .. {pt.time[vis].max():.2f} s")
        else:
            print(f"  {pt.target_id} via {pt.tx_id}: never visible")
    return EXIT_OK


# ---------------------------------------------------------------- detect


def _hypotheses(args, cfg):
    sc = cfg.scenario
    if args.hypotheses == "truth":
        if not sc.targets:
            raise ConfigError("targets", "truth hypotheses requested but the config lists no targets")
        return {t.id: t.state for t in sc.targets}
    if args.hypotheses == "file":
        if not args.hypotheses_file:
            raise ConfigError("--hypotheses-file", "required with --hypotheses file")
        import json

        with open(args.hypotheses_file) as fh:
            data = json.load(fh)
        out = {}
        for i, h in enumerate(data):
            sec = io._Section(h, f"{args.hypotheses_file}[{i}]")
            out[str(sec.raw("id", i))] = StateVector(sec.vector("r"), sec.vector("v"), sec.number("epoch", 0.0))
        return out
    g = cfg.detect.grid
    if g is None:
        raise ConfigError("detect.grid", "grid hypotheses requested but no grid is configured")
    t = g.time_s if g.time_s is not None else sc.start_time + 0.5 * sc.duration
    headings = np.arange(g.n_headings) * 2.0 * np.pi / g.n_headings
    cands = iod_candidates(np.radians(g.azimuth_deg), np.radians(g.elevation_deg), np.array(g.altitudes_km) * 1e3, headings, sc.scene.receiver, t, sc.scene.epoch_angle)
    return {f"grid{i:04d}": c for i, c in enumerate(cands)}


def _predicted(hyps, t, tx_id, scene):
    """Predicted delay and elevation of every hypothesis at time ``t``."""
    by_epoch = {}
    for hid, h in hyps.items():
        by_epoch.setdefault(h.epoch, []).append(hid)
    delay, elev = {}, {}
    for epoch, ids in by_epoch.items():
        X = np.array([hyps[i].as_array() for i in ids])
        Y = propagate_states(X, [t - epoch])  # (1, K, 6)
        z = _measurements_from_states(Y[0][:, None, :], [t], [tx_id], scene)[:, 0, :]
        for i, row in zip(ids, z):
            delay[i], elev[i] = row[0], row[3]
    return delay, elev


def _delay_window(cfg, hyps, t_mid, tx_id):
    d = cfg.detect
    lo, hi = d.min_delay_s, d.max_delay_s
    if lo is not None and hi is not None:
        return lo, hi
    delay, elev = _predicted(hyps, t_mid, tx_id, cfg.scene)
    keep = [delay[h] for h in hyps if elev[h] >= np.radians(d.min_elevation_deg)]
    if not keep:
        return None
    # range migration over half a CPI
    slack = d.delay_margin_s + 0.5 * cfg.scenario.cpi * MAX_BISTATIC_RANGE_RATE / SPEED_OF_LIGHT
    lo = max(0.0, min(keep) - slack) if lo is None else lo
    hi = max(keep) + slack if hi is None else hi
    return lo, hi


def cmd_detect(args, cfg):
    sc = cfg.scenario
    out = Path(args.out)
    rec_root = Path(args.recordings) if args.recordings else out / "recordings"
    man = RunManifest("detect", str(cfg.source), sc.seed)
    hyps = _hypotheses(args, cfg)
    ds = cfg.detect
    detector = OrbitMatchedDetector(
        guard_cells=ds.guard_cells,
        train_cells=ds.train_cells,
        threshold_db=ds.threshold_db,
        window_bins=ds.window_bins,
        range_migration=ds.range_migration,
        min_elevation=np.radians(ds.min_elevation_deg),
        n_jobs=_threads(args),
    )
    recs = {}
    for tx_id in sc.scene.transmitters:
        d = rec_root / tx_id
        surv = sorted(d.glob("surv_*.iq"))
        ref = sorted(d.glob("ref_*.iq"))
        if not surv or not ref:
            raise ConfigError(str(d), "expected surv_*.iq and ref_*.iq channel files")
        s_rec, r_rec = io.read_recording(surv), io.read_recording(ref)
        missing = [t for t in sc.scene.tiles.ids if t not in s_rec.channel_ids]
        if missing:
            raise ConfigError(str(d), f"no recording for tile(s) {missing[:5]}")
        order = [s_rec.channel_ids.index(t) for t in sc.scene.tiles.ids]
        s_rec.samples = s_rec.samples[order]
        s_rec.channel_ids = sc.scene.tiles.ids
        recs[tx_id] = (s_rec, r_rec)
        man.inputs += surv + ref

    detections, timing = [], {h: 0.0 for h in hyps}
    n_cpi = min(int(np.floor(s.duration / sc.cpi + 1e-9)) for s, _ in recs.values())
    for k in range(n_cpi):
        cubes = {}
        for tx_id, (s_rec, r_rec) in recs.items():
            t0 = s_rec.start_time + sc.cpi_start_sample(k) / sc.sample_rate
            win = _delay_window(cfg, hyps, t0 + 0.5 * sc.cpi, tx_id)
            if win is None:
                continue
            n_bins = int(np.ceil((win[1] - win[0]) * sc.sample_rate)) + 1
            need = len(sc.scene.tiles) * n_bins * sc.pulses * 16
            if need > CUBE_MEMORY_LIMIT:
                raise ConfigError("detect.max_delay_s", f"delay window needs a {need / 1e9:.1f} GB pulse cube; narrow it")
            seg_s = s_rec.segment(t0, sc.cpi)
            seg_r = r_rec.segment(t0, sc.cpi)
            cubes[tx_id] = pulse_compress(seg_s, seg_r, sc.tau, max_delay=win[1], M=sc.pulses, min_delay=win[0])
        if not cubes:
            continue
        detector.fit(cubes, sc.scene)
        matches = detector.match(hyps)
        for hid, res in matches.items():
            timing[hid] += detector.timings_[hid]
            detections += [m.detection for m in res.values() if m.detection is not None]
    path = io.write_detections(out / "detections.csv", detections)
    man.outputs.append(path)
    man.outputs.append(io.write_csv(out / "detect_timing.csv", ("hypothesis_id", "seconds"), [{"hypothesis_id": h, "seconds": s} for h, s in timing.items()]))
    man.timings_s["total"] = float(sum(timing.values()))
    man.write(out)
    print(f"{len(detections)} detection(s) from {len(hyps)} hypothesis(es) over {n_cpi} CPI(s)")
    if timing:
        print(f"mean matching time per hypothesis: {np.mean(list(timing.values())) / max(n_cpi, 1) * 1e3:.1f} ms per CPI")
    return EXIT_OK


# ---------------------------------------------------------------- od


def _x0(args, cfg, rng):
    sc = cfg.scenario
    if args.x0 == "file":
        if not args.x0_file:
            raise ConfigError("--x0-file", "required with --x0 file")
        import json

        with open(args.x0_file) as fh:
            data = json.load(fh)
        sec = io._Section(data.get("state", data) if isinstance(data, dict) else data, str(args.x0_file))
        return StateVector(sec.vector("r"), sec.vector("v"), sec.number("epoch", 0.0))
    if not sc.targets:
        raise ConfigError("targets", "x0 from truth requested but the config lists no targets")
    tgt = sc.targets[0]
    if args.target:
        match = [t for t in sc.targets if t.id == args.target]
        if not match:
            raise ConfigError("--target", f"unknown target {args.target!r}")
        tgt = match[0]
    x = tgt.state
    dp, dv = cfg.od.perturbation_m, cfg.od.perturbation_m_s
    if dp or dv:
        u = rng.standard_normal(3)
        w = rng.standard_normal(3)
        x = StateVector(x.r + dp * u / np.linalg.norm(u), x.v + dv * w / np.linalg.norm(w), x.epoch)
    return x


def covariance_history(track, x, scene, **fit_kwargs):
    """Refit on growing prefixes of ``track``; one row per prefix length."""
    rows = []
    for n in range(2, len(track) + 1):
        sub = track.prefix(n)
        row = {"n_measurements": n, "time_s": sub.times[-1], "converged": True}
        try:
            est = batch_least_squares(sub, x, scene, **fit_kwargs)
        except ConvergenceError as exc:
            est, row["converged"] = exc.estimate, False
        except UnderdeterminedError:
            est, row["converged"] = None, False
        sig = np.full(6, np.nan) if est is None else np.sqrt(np.diag(est.covariance))
        for name, s in zip(("sigma_x_m", "sigma_y_m", "sigma_z_m", "sigma_vx_m_s", "sigma_vy_m_s", "sigma_vz_m_s"), sig):
            row[name] = s
        row["sigma_pos_m"] = float(np.sqrt(np.sum(sig[:3] ** 2)))
        row["sigma_vel_m_s"] = float(np.sqrt(np.sum(sig[3:] ** 2)))
        rows.append(row)
    return rows


COV_COLUMNS = (
    "n_measurements", "time_s", "converged", "sigma_x_m", "sigma_y_m", "sigma_z_m",
    "sigma_vx_m_s", "sigma_vy_m_s", "sigma_vz_m_s", "sigma_pos_m", "sigma_vel_m_s",
)
RESIDUAL_COLUMNS = (
    "time_s", "tx_id", "delay_s", "doppler_hz", "azimuth_rad", "elevation_rad",
    "norm_delay", "norm_doppler", "norm_azimuth", "norm_elevation",
)


def residual_rows(track, estimate, scene):
    from .od import predict_measurements

    r = _residuals(track.z, predict_measurements(estimate.x, track.times, track.tx_ids, scene))
    n = r / track.sigma
    for m, ri, ni in zip(track, r, n):
        yield {
            "time_s": m.time, "tx_id": m.tx_id,
            "delay_s": ri[0], "doppler_hz": ri[1], "azimuth_rad": ri[2], "elevation_rad": ri[3],
            "norm_delay": ni[0], "norm_doppler": ni[1], "norm_azimuth": ni[2], "norm_elevation": ni[3],
        }


def cmd_od(args, cfg):
    sc = cfg.scenario
    out = Path(args.out)
    det = Path(args.detections) if args.detections else out / "detections.csv"
    if not det.exists():
        raise ConfigError("--detections", f"{det} does not exist")
    seed = args.seed if args.seed is not None else sc.seed
    man = RunManifest("od", str(cfg.source), seed, inputs=[det])
    tx_ids = args.tx or cfg.od.tx_ids
    track = io.read_track(det, cfg.sigma_fn(), tx_ids, args.hypothesis)
    if len(np.unique(track.times)) < 2:
        raise ConfigError(str(det), f"need detections at >= 2 epochs, found {len(np.unique(track.times))}")
    x0 = _x0(args, cfg, np.random.default_rng(seed))
    kw = dict(max_iter=cfg.od.max_iter, snr_weighting=cfg.od.snr_weighting)
    t0 = time.perf_counter()
    code = EXIT_OK
    try:
        est = batch_least_squares(track, x0, sc.scene, **kw)
    except ConvergenceError as exc:
        est, code = exc.estimate, EXIT_CONVERGENCE
    except UnderdeterminedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    man.timings_s["fit"] = time.perf_counter() - t0
    man.outputs.append(io.write_od_report(out / "od_report.json", est))
    if code != EXIT_OK:
        man.write(out)
        print("error: orbit fit did not converge; last iterate written to od_report.json", file=sys.stderr)
        return code
    man.outputs.append(io.write_csv(out / "od_residuals.csv", RESIDUAL_COLUMNS, residual_rows(track, est, sc.scene)))
    t0 = time.perf_counter()
    hist = covariance_history(track, est.x, sc.scene, **kw)
    man.timings_s["covariance_history"] = time.perf_counter() - t0
    man.outputs.append(io.write_csv(out / "od_covariance.csv", COV_COLUMNS, hist))
    man.write(out)
    ps, vs = est.position_sigma, est.velocity_sigma
    print(f"fit {len(track)} measurement(s) in {est.iterations} iteration(s); normalised residual rms {est.residual_rms:.3f}")
    print(f"position sigma {np.round(ps, 1).tolist()} m, velocity sigma {np.round(vs, 3).tolist()} m/s")
    return EXIT_OK


# ---------------------------------------------------------------- linkbudget


LINK_COLUMNS = ("baseline_km", "altitude_km", "incident_power_w_m2", "elevation_deg", "range_km", "shadowed")


def cmd_linkbudget(args, cfg):
    lb = cfg.linkbudget
    tx = cfg.scene.tx(lb.tx_id)
    b = np.linspace(*lb.baselines_km)
    h = np.linspace(*lb.altitudes_km)
    ill = incident_power_grid(tx, b * 1e3, h * 1e3, np.radians(lb.horizon_allowance_deg))
    rows = [
        {
            "baseline_km": b[i], "altitude_km": h[j], "incident_power_w_m2": ill.power[i, j],
            "elevation_deg": np.degrees(ill.elevation[i, j]), "range_km": ill.range[i, j] / 1e3, "shadowed": bool(ill.shadowed[i, j]),
        }
        for i in range(b.size)
        for j in range(h.size)
    ]
    out = Path(args.out)
    man = RunManifest("linkbudget", str(cfg.source), None)
    man.outputs.append(io.write_csv(out / "linkbudget.csv", LINK_COLUMNS, rows))
    man.write(out)
    print(f"{b.size} x {h.size} grid for {tx.id}: {int(ill.shadowed.sum())} shadowed cell(s)")
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="scenario config JSON")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="orbitradar", description="Passive radar space surveillance pipeline")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="render recordings and truth for a scenario")
    d = sub.add_parser("detect", parents=[common], help="orbit-matched detection over recordings")
    d.add_argument("--recordings", default=None, help="recordings directory (default: OUT/recordings)")
    d.add_argument("--hypotheses", choices=("truth", "grid", "file"), default="truth")
    d.add_argument("--hypotheses-file", default=None, help="JSON list of {id, r, v, epoch}")
    o = sub.add_parser("od", parents=[common], help="batch least-squares orbit fit to detections")
    o.add_argument("--detections", default=None, help="detections CSV (default: OUT/detections.csv)")
    o.add_argument("--x0", choices=("truth", "file"), default="truth")
    o.add_argument("--x0-file", default=None, help="JSON state {r, v, epoch} or an OD report")
    o.add_argument("--target", default=None, help="target id for --x0 truth")
    o.add_argument("--tx", action="append", default=None, help="only use this transmitter (repeatable)")
    o.add_argument("--hypothesis", default=None, help="only use detections from this hypothesis id")
    sub.add_parser("linkbudget", parents=[common], help="incident power over a baseline x altitude grid")
    return p


COMMANDS = {"simulate": cmd_simulate, "detect": cmd_detect, "od": cmd_od, "linkbudget": cmd_linkbudget}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = io.load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, GeometryError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
