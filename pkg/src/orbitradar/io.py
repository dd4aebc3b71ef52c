"""File formats: IQ recordings with JSON sidecars, CSV tables, reports and scenario configs.

Every writer goes through a temporary file in the destination directory
followed by an atomic rename, so a crashed run never leaves half a file.
"""

import csv
import io as _io
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import StateVector
from .errors import ConfigError
from .frames import GeodeticSite
from .od import Measurement, OrbitEstimate, Track, default_sigmas
from .phasing import TileArray
from .radar import IQRecording
from .scene import ElevationPattern, Scene, TransmitterModel
from .sim import DEFAULT_HORIZON_ALLOWANCE, ScenarioConfig, TargetSpec

SCHEMA_VERSION = 1

DETECTION_COLUMNS = ("time_s", "tx_id", "hypothesis_id", "snr_db", "delay_s", "doppler_hz", "azimuth_rad", "elevation_rad")
TRUTH_COLUMNS = ("time_s", "target_id", "tx_id", "delay_s", "doppler_hz", "azimuth_rad", "elevation_rad", "visible")


# ---------------------------------------------------------------- atomic writes


def atomic_write_bytes(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text):
    return atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj):
    return atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_csv(path, columns, rows):
    buf = _io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: _fmt(row[k]) for k in columns})
    return atomic_write_text(path, buf.getvalue())


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def read_csv(path, required):
    """Rows of a CSV as dicts; missing columns are reported by name."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        have = reader.fieldnames or []
        missing = [c for c in required if c not in have]
        if missing:
            raise ConfigError(str(path), f"missing column(s) {', '.join(missing)}")
        return list(reader)


def _float_cell(row, col, line, path):
    try:
        return float(row[col])
    except (TypeError, ValueError):
        raise ConfigError(f"{path}:{line}:{col}", f"not a number: {row[col]!r}") from None


# ---------------------------------------------------------------- IQ recordings


def write_iq_channel(path, samples, sample_rate, start_time, channel_id, center_freq=0.0):
    """One channel as interleaved little-endian float32 I/Q plus a ``.json`` sidecar."""
    path = Path(path)
    x = np.asarray(samples, dtype=np.complex128).ravel()
    inter = np.empty(2 * x.size, dtype="<f4")
    inter[0::2] = x.real
    inter[1::2] = x.imag
    atomic_write_bytes(path, inter.tobytes())
    write_json(
        sidecar_path(path),
        {"sample_rate_hz": float(sample_rate), "start_time_s": float(start_time), "channel_id": str(channel_id), "center_freq_hz": float(center_freq)},
    )
    return path


def sidecar_path(path):
    return Path(path).with_suffix(".json")


def write_recording(directory, rec, prefix=""):
    """Write every channel of ``rec`` as ``<prefix><channel_id>.iq``; returns the paths."""
    return [
        write_iq_channel(Path(directory) / f"{prefix}{cid}.iq", rec.samples[i], rec.sample_rate, rec.start_time, cid, rec.center_freq)
        for i, cid in enumerate(rec.channel_ids)
    ]


def read_iq_channel(path):
    path = Path(path)
    side = sidecar_path(path)
    if not side.exists():
        raise ConfigError(str(side), "sidecar file is missing")
    with open(side) as fh:
        meta = json.load(fh)
    for key in ("sample_rate_hz", "start_time_s", "channel_id"):
        if key not in meta:
            raise ConfigError(f"{side}:{key}", "missing")
    raw = np.fromfile(path, dtype="<f4")
    if raw.size % 2:
        raise ConfigError(str(path), "odd number of float32 values; expected I/Q pairs")
    return raw[0::2].astype(np.float64) + 1j * raw[1::2].astype(np.float64), meta


def read_recording(paths):
    """Stack single-channel files into one :class:`IQRecording`.

    All sidecars must agree on sample rate and start time.
    """
    paths = [Path(p) for p in paths]
    if not paths:
        raise ConfigError("recording", "no channel files given")
    rows, metas = zip(*(read_iq_channel(p) for p in paths))
    m0 = metas[0]
    for p, m in zip(paths, metas):
        if m["sample_rate_hz"] != m0["sample_rate_hz"] or m["start_time_s"] != m0["start_time_s"]:
            raise ConfigError(str(sidecar_path(p)), "sample rate or start time differs from the other channels")
    n = min(r.size for r in rows)
    return IQRecording(
        np.stack([r[:n] for r in rows]),
        m0["sample_rate_hz"],
        m0["start_time_s"],
        tuple(m["channel_id"] for m in metas),
        m0.get("center_freq_hz", 0.0),
    )


# ---------------------------------------------------------------- detections / tracks


def detection_rows(detections):
    for d in detections:
        m = d.measurement
        yield {
            "time_s": m.time,
            "tx_id": m.tx_id,
            "hypothesis_id": d.hypothesis_id,
            "snr_db": d.snr_db,
            "delay_s": m.t_D,
            "doppler_hz": m.f_D,
            "azimuth_rad": m.theta,
            "elevation_rad": m.phi,
        }


def write_detections(path, detections):
    rows = sorted(detection_rows(detections), key=lambda r: (r["time_s"], r["tx_id"], r["hypothesis_id"]))
    return write_csv(path, DETECTION_COLUMNS, rows)


def read_detections(path, sigma_fn=None):
    """Measurements from a detections CSV.

    ``sigma_fn(tx_id, snr_db)`` supplies the per-row 1-sigma errors; unit
    sigmas are used when it is omitted.
    """
    rows = read_csv(path, DETECTION_COLUMNS)
    out = []
    for i, row in enumerate(rows, start=2):
        v = {c: _float_cell(row, c, i, path) for c in DETECTION_COLUMNS if c not in ("tx_id", "hypothesis_id")}
        sigma = sigma_fn(row["tx_id"], v["snr_db"]) if sigma_fn else np.ones(4)
        out.append(
            Measurement(
                v["delay_s"], v["doppler_hz"], v["azimuth_rad"], v["elevation_rad"], v["time_s"],
                row["tx_id"], sigma, v["snr_db"], row["hypothesis_id"],
            )
        )
    return out


def read_track(path, sigma_fn=None, tx_ids=None, hypothesis_id=None):
    """Detections CSV -> :class:`Track`, optionally filtered by transmitter and hypothesis."""
    ms = read_detections(path, sigma_fn)
    if tx_ids:
        ms = [m for m in ms if m.tx_id in set(tx_ids)]
    if hypothesis_id is not None:
        ms = [m for m in ms if m.hypothesis_id == hypothesis_id]
    return Track(ms)


def write_truth(path, truth_log):
    return write_csv(path, TRUTH_COLUMNS, truth_log.cpi_rows)


def read_truth(path):
    rows = read_csv(path, TRUTH_COLUMNS)
    out = []
    for i, row in enumerate(rows, start=2):
        r = {c: _float_cell(row, c, i, path) for c in TRUTH_COLUMNS if c not in ("target_id", "tx_id", "visible")}
        r.update(target_id=row["target_id"], tx_id=row["tx_id"], visible=row["visible"].strip().lower() == "true")
        out.append(r)
    return out


def write_od_report(path, estimate):
    return write_json(path, estimate.to_dict())


def read_od_report(path):
    with open(path) as fh:
        return OrbitEstimate.from_dict(json.load(fh))


# ---------------------------------------------------------------- scenario config


@dataclass
class GridSettings:
    azimuth_deg: float
    elevation_deg: float
    altitudes_km: list
    n_headings: int = 36
    time_s: float = None


@dataclass
class DetectSettings:
    guard_cells: int = 4
    train_cells: int = 32
    threshold_db: float = 16.0
    window_bins: int = 201
    range_migration: bool = True
    min_elevation_deg: float = 0.0
    delay_margin_s: float = 2e-4
    min_delay_s: float = None
    max_delay_s: float = None
    grid: GridSettings = None


@dataclass
class ODSettings:
    max_iter: int = 25
    tx_ids: list = None
    snr_weighting: bool = False
    perturbation_m: float = 0.0
    perturbation_m_s: float = 0.0


@dataclass
class LinkBudgetSettings:
    tx_id: str = None
    baselines_km: tuple = (0.0, 3000.0, 31)
    altitudes_km: tuple = (200.0, 2000.0, 19)
    horizon_allowance_deg: float = float(np.degrees(DEFAULT_HORIZON_ALLOWANCE))


@dataclass
class RunConfig:
    """A parsed scenario config plus the per-stage settings."""

    scenario: ScenarioConfig
    detect: DetectSettings = field(default_factory=DetectSettings)
    od: ODSettings = field(default_factory=ODSettings)
    linkbudget: LinkBudgetSettings = field(default_factory=LinkBudgetSettings)
    source: Path = None

    @property
    def scene(self):
        return self.scenario.scene

    def sigma_fn(self):
        """Resolution-derived measurement errors for a detection of the given SNR."""
        cfg = self.scenario

        def fn(tx_id, snr_db):
            return default_sigmas(cfg.sample_rate, cfg.cpi, cfg.scene.beamwidth(tx_id), snr_db)

        return fn


class _Section:
    """Typed access into one JSON object, naming fields in every error."""

    def __init__(self, data, path):
        if not isinstance(data, dict):
            raise ConfigError(path or "<root>", "expected a JSON object")
        self.data = data
        self.path = path

    def name(self, key):
        return f"{self.path}.{key}" if self.path else key

    def has(self, key):
        return key in self.data

    def raw(self, key, default=..., required=False):
        if key not in self.data:
            if required or default is ...:
                raise ConfigError(self.name(key), "required field is missing")
            return default
        return self.data[key]

    def number(self, key, default=..., positive=False, integer=False, minimum=None):
        v = self.raw(key, default)
        if v is None:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(self.name(key), f"expected a number, got {v!r}")
        if integer and int(v) != v:
            raise ConfigError(self.name(key), f"expected an integer, got {v!r}")
        if not np.isfinite(v):
            raise ConfigError(self.name(key), "must be finite")
        if positive and not v > 0:
            raise ConfigError(self.name(key), f"must be positive, got {v!r}")
        if minimum is not None and v < minimum:
            raise ConfigError(self.name(key), f"must be >= {minimum}, got {v!r}")
        return int(v) if integer else float(v)

    def boolean(self, key, default=...):
        v = self.raw(key, default)
        if not isinstance(v, bool):
            raise ConfigError(self.name(key), f"expected true/false, got {v!r}")
        return v

    def text(self, key, default=...):
        v = self.raw(key, default)
        if v is not None and not isinstance(v, str):
            raise ConfigError(self.name(key), f"expected a string, got {v!r}")
        return v

    def vector(self, key, n=3):
        v = self.raw(key)
        try:
            arr = np.asarray(v, dtype=float)
        except (TypeError, ValueError):
            arr = None
        if arr is None or arr.shape != (n,) or not np.all(np.isfinite(arr)):
            raise ConfigError(self.name(key), f"expected {n} finite numbers, got {v!r}")
        return arr

    def sub(self, key, default=...):
        v = self.raw(key, default)
        return None if v is None else _Section(v, self.name(key))

    def items(self, key):
        v = self.raw(key)
        if not isinstance(v, list) or not v:
            raise ConfigError(self.name(key), "expected a non-empty list")
        return [_Section(x, f"{self.name(key)}[{i}]") for i, x in enumerate(v)]


def _site(sec):
    lat = sec.number("lat_deg")
    if not -90.0 <= lat <= 90.0:
        raise ConfigError(sec.name("lat_deg"), "latitude must lie within [-90, 90]")
    return GeodeticSite.from_degrees(lat, sec.number("lon_deg"), sec.number("height_m", 0.0), sec.text("id", ""))


def _tiles(root, base):
    v = root.raw("tiles")
    name = root.name("tiles")
    if isinstance(v, list):
        recs = v
    elif isinstance(v, dict) and "grid" in v:
        g = _Section(v["grid"], f"{name}.grid")
        return TileArray.grid(g.number("n_side", integer=True, positive=True), g.number("spacing_m", positive=True))
    elif isinstance(v, dict) and "file" in v:
        p = Path(v["file"])
        p = p if p.is_absolute() else base / p
        if not p.exists():
            raise ConfigError(f"{name}.file", f"tile layout {p} not found")
        with open(p) as fh:
            recs = json.load(fh)
    else:
        raise ConfigError(name, "expected a list of tiles, {grid: ...} or {file: ...}")
    for i, r in enumerate(recs):
        s = _Section(r, f"{name}[{i}]")
        for k in ("east_m", "north_m", "up_m"):
            s.number(k)
        s.raw("id")
    try:
        return TileArray.from_records(recs)
    except ValueError as exc:
        raise ConfigError(name, str(exc)) from None


def _transmitter(sec):
    site = _site(sec.sub("site"))
    if not site.id:
        raise ConfigError(sec.name("site.id"), "transmitters need an id")
    try:
        pattern = ElevationPattern.from_json(sec.raw("pattern", "isotropic"))
    except (ValueError, IndexError, TypeError) as exc:
        raise ConfigError(sec.name("pattern"), str(exc)) from None
    return TransmitterModel(
        site,
        eirp=sec.number("eirp_w", 1e5, positive=True),
        pattern=pattern,
        carrier=sec.number("carrier_hz", 98e6, positive=True),
        bandwidth=sec.number("bandwidth_hz", 50e3, positive=True),
    )


def _target(sec, scene):
    from .od import iod_candidates

    tid = sec.text("id")
    if sec.has("state"):
        st = sec.sub("state")
        state = StateVector(st.vector("r"), st.vector("v"), st.number("epoch", 0.0))
    elif sec.has("pass"):
        p = sec.sub("pass")
        try:
            state = iod_candidates(
                np.radians(p.number("azimuth_deg")),
                np.radians(p.number("elevation_deg")),
                p.number("altitude_km", positive=True) * 1e3,
                np.radians(p.number("heading_deg")),
                scene.receiver,
                p.number("time_s", 0.0),
                scene.epoch_angle,
            )[0]
        except ValueError as exc:
            raise ConfigError(p.path, str(exc)) from None
    else:
        raise ConfigError(sec.path, "target needs either 'state' or 'pass'")
    return TargetSpec(tid, state, sec.number("rcs_m2", 1.0, minimum=0.0), sec.number("snr_db", None))


def parse_config(data, base=Path(".")):
    """Build a :class:`RunConfig` from parsed JSON, raising :class:`ConfigError` on bad fields."""
    root = _Section(data, "")
    version = root.number("schema_version", integer=True)
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {version}; this build reads {SCHEMA_VERSION}")
    receiver = _site(root.sub("receiver"))
    tiles = _tiles(root, Path(base))
    txs = [_transmitter(s) for s in root.items("transmitters")]
    ids = [t.id for t in txs]
    if len(set(ids)) != len(ids):
        raise ConfigError("transmitters", f"transmitter ids must be unique, got {ids}")
    scene = Scene(receiver, tiles, {t.id: t for t in txs}, np.radians(root.number("epoch_angle_deg", 0.0)))
    targets = [_target(s, scene) for s in root.items("targets")] if root.has("targets") else []
    sr = root.number("sample_rate_hz", 1e5, positive=True)
    for t in txs:
        if t.bandwidth > sr:
            raise ConfigError(f"transmitters[{ids.index(t.id)}].bandwidth_hz", "exceeds sample_rate_hz")
    pulses = root.number("pulses", 40001, integer=True, positive=True)
    if pulses % 2 == 0:
        raise ConfigError("pulses", f"must be odd, got {pulses}")
    cpi = root.number("cpi_s", 3.0, positive=True)
    if sr * cpi / pulses < 1:
        raise ConfigError("pulses", "pulse length cpi_s / pulses is shorter than one sample")
    scenario = ScenarioConfig(
        scene,
        targets,
        cpi=cpi,
        pulses=pulses,
        sample_rate=sr,
        n_cpi=root.number("n_cpi", 1, integer=True, positive=True),
        start_time=root.number("start_time_s", 0.0),
        seed=root.number("seed", 0, integer=True, minimum=0),
        noise_temperature=root.number("noise_temperature_k", 1000.0, positive=True),
        tile_area=root.number("tile_area_m2", 20.0, positive=True),
        reference_snr_db=root.number("reference_snr_db", None),
        horizon_allowance=np.radians(root.number("horizon_allowance_deg", float(np.degrees(DEFAULT_HORIZON_ALLOWANCE)))),
        noise=root.boolean("noise", True),
    )
    return RunConfig(scenario, _detect(root.sub("detect", None)), _od(root.sub("od", None), ids), _linkbudget(root.sub("linkbudget", None), ids))


def _detect(sec):
    if sec is None:
        return DetectSettings()
    grid = None
    g = sec.sub("grid", None)
    if g is not None:
        alts = g.raw("altitudes_km")
        if not isinstance(alts, list) or not alts or not all(isinstance(a, (int, float)) for a in alts):
            raise ConfigError(g.name("altitudes_km"), "expected a non-empty list of numbers")
        if min(alts) < 200 or max(alts) > 2000:
            raise ConfigError(g.name("altitudes_km"), "altitudes must lie within 200-2000 km")
        grid = GridSettings(
            g.number("azimuth_deg"), g.number("elevation_deg"), [float(a) for a in alts],
            g.number("n_headings", 36, integer=True, positive=True), g.number("time_s", None),
        )
    s = DetectSettings(
        guard_cells=sec.number("guard_cells", 4, integer=True, minimum=0),
        train_cells=sec.number("train_cells", 32, integer=True, positive=True),
        threshold_db=sec.number("threshold_db", 16.0),
        window_bins=sec.number("window_bins", 201, integer=True, positive=True),
        range_migration=sec.boolean("range_migration", True),
        min_elevation_deg=sec.number("min_elevation_deg", 0.0),
        delay_margin_s=sec.number("delay_margin_s", 2e-4, minimum=0.0),
        min_delay_s=sec.number("min_delay_s", None),
        max_delay_s=sec.number("max_delay_s", None),
        grid=grid,
    )
    if s.window_bins % 2 == 0:
        raise ConfigError(sec.name("window_bins"), "must be odd")
    if s.window_bins < 2 * (s.guard_cells + s.train_cells) + 1:
        raise ConfigError(sec.name("window_bins"), "too small for the guard and training cells")
    return s


def _od(sec, ids):
    if sec is None:
        return ODSettings()
    tx = sec.raw("tx_ids", None)
    if tx is not None and (not isinstance(tx, list) or any(t not in ids for t in tx)):
        raise ConfigError(sec.name("tx_ids"), f"expected a list drawn from {ids}")
    return ODSettings(
        max_iter=sec.number("max_iter", 25, integer=True, positive=True),
        tx_ids=tx,
        snr_weighting=sec.boolean("snr_weighting", False),
        perturbation_m=sec.number("perturbation_m", 0.0, minimum=0.0),
        perturbation_m_s=sec.number("perturbation_m_s", 0.0, minimum=0.0),
    )


def _sweep(sec, key, default):
    v = sec.raw(key, list(default))
    if not isinstance(v, list) or len(v) != 3:
        raise ConfigError(sec.name(key), "expected [start, stop, count]")
    a, b, n = v
    if not all(isinstance(x, (int, float)) for x in v) or int(n) != n or n < 1:
        raise ConfigError(sec.name(key), "expected numeric [start, stop, count] with integer count >= 1")
    return (float(a), float(b), int(n))


def _linkbudget(sec, ids):
    if sec is None:
        return LinkBudgetSettings(tx_id=ids[0])
    tx = sec.text("tx_id", ids[0])
    if tx not in ids:
        raise ConfigError(sec.name("tx_id"), f"unknown transmitter {tx!r}; known: {ids}")
    s = LinkBudgetSettings(
        tx_id=tx,
        baselines_km=_sweep(sec, "baselines_km", LinkBudgetSettings.baselines_km),
        altitudes_km=_sweep(sec, "altitudes_km", LinkBudgetSettings.altitudes_km),
        horizon_allowance_deg=sec.number("horizon_allowance_deg", LinkBudgetSettings.horizon_allowance_deg, minimum=0.0),
    )
    if s.altitudes_km[0] <= 0 or s.altitudes_km[1] <= 0:
        raise ConfigError(sec.name("altitudes_km"), "altitudes must be positive")
    return s


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError("--config", f"{path} does not exist")
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON: {exc}") from None
    cfg = parse_config(data, path.parent)
    cfg.source = path.resolve()
    return cfg


def scenario_to_dict(cfg):
    """Inverse of :func:`parse_config` for the scenario part (targets as explicit states)."""
    sc = cfg.scene
    return {
        "schema_version": SCHEMA_VERSION,
        "epoch_angle_deg": float(np.degrees(sc.epoch_angle)),
        "receiver": sc.receiver.to_dict(),
        "tiles": sc.tiles.to_records(),
        "transmitters": [
            {
                "site": t.site.to_dict(),
                "eirp_w": t.eirp,
                "pattern": t.pattern.to_json(),
                "carrier_hz": t.carrier,
                "bandwidth_hz": t.bandwidth,
            }
            for t in sc.transmitters.values()
        ],
        "targets": [
            {"id": t.id, "state": t.state.to_dict(), "rcs_m2": t.rcs, "snr_db": t.snr_db} for t in cfg.targets
        ],
        "cpi_s": cfg.cpi,
        "pulses": cfg.pulses,
        "sample_rate_hz": cfg.sample_rate,
        "n_cpi": cfg.n_cpi,
        "start_time_s": cfg.start_time,
        "seed": cfg.seed,
        "noise_temperature_k": cfg.noise_temperature,
        "tile_area_m2": cfg.tile_area,
        "reference_snr_db": cfg.reference_snr_db,
        "horizon_allowance_deg": float(np.degrees(cfg.horizon_allowance)),
        "noise": cfg.noise,
    }
