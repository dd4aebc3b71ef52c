"""Synthetic scenes: FM-like references, rendered satellite echoes and link budgets."""

from dataclasses import dataclass, field

import numpy as np

from .constants import BOLTZMANN, R_EARTH_MEAN, SPEED_OF_LIGHT
from .dynamics import StateVector, propagate_states, relative, target_kinematics
from .frames import eci_to_ecef, sez_matrix, to_sez
from .od import _measurements_from_states
from .radar import IQRecording, pulse_edges
from .scene import ElevationPattern, Scene, TransmitterModel  # noqa: F401  (re-exported)
from .validation import check_odd, check_positive

DEFAULT_HORIZON_ALLOWANCE = np.radians(2.0)
MAX_RENDER_DELAY = 0.1  # s, about 30000 km of excess path


def channel_rng(seed, *stream):
    """Independent, order-free random stream for one channel."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *[int(s) for s in stream]])))


def band_limited_noise(n, bandwidth, sample_rate, rng):
    """Unit-power complex Gaussian noise confined to ``|f| <= bandwidth / 2``."""
    x = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)
    X = np.fft.fft(x)
    f = np.fft.fftfreq(n, 1.0 / sample_rate)
    X[np.abs(f) > bandwidth / 2.0] = 0.0
    y = np.fft.ifft(X)
    return y / np.sqrt(np.mean(np.abs(y) ** 2))


def synth_fm_reference(bandwidth, duration, sample_rate, seed, channel_id="ref", start_time=0.0, stream=0):
    """Band-limited Gaussian stand-in for a broadcast FM reference signal."""
    sample_rate = check_positive(sample_rate, "sample_rate")
    if not 0 < bandwidth <= sample_rate:
        raise ValueError("bandwidth must lie in (0, sample_rate]")
    n = int(np.floor(duration * sample_rate + 0.5))
    y = band_limited_noise(n, bandwidth, sample_rate, channel_rng(seed, 0, stream))
    return IQRecording(y[None, :], sample_rate, start_time, (channel_id,))


@dataclass(frozen=True)
class TargetSpec:
    id: str
    state: StateVector
    rcs: float = 1.0
    snr_db: float = None


@dataclass
class ScenarioConfig:
    """Everything needed to render a synthetic observation."""

    scene: Scene
    targets: list
    cpi: float = 3.0
    pulses: int = 40001
    sample_rate: float = 1e5
    n_cpi: int = 1
    start_time: float = 0.0
    seed: int = 0
    noise_temperature: float = 1000.0
    tile_area: float = 20.0
    reference_snr_db: float = None
    horizon_allowance: float = DEFAULT_HORIZON_ALLOWANCE
    noise: bool = True

    def __post_init__(self):
        check_odd(self.pulses, "pulses")
        check_positive(self.cpi, "cpi")
        check_positive(self.sample_rate, "sample_rate")
        if self.sample_rate * self.tau < 1:
            raise ValueError("pulse length must span at least one sample")
        for tx in self.scene.transmitters.values():
            if tx.bandwidth > self.sample_rate:
                raise ValueError(f"transmitter {tx.id!r} bandwidth exceeds the sample rate")

    @property
    def tau(self):
        return self.cpi / self.pulses

    @property
    def duration(self):
        return self.n_cpi * self.cpi

    def cpi_start_sample(self, k):
        return int(np.floor(k * self.cpi * self.sample_rate + 0.5))

    def cpi_starts(self):
        return [self.start_time + self.cpi_start_sample(k) / self.sample_rate for k in range(self.n_cpi)]

    @property
    def n_samples(self):
        return self.cpi_start_sample(self.n_cpi)


@dataclass(frozen=True)
class Illumination:
    power: np.ndarray
    elevation: np.ndarray
    range: np.ndarray
    shadowed: np.ndarray


def spherical_site_position(site):
    """Site on the spherical Earth used by the link budget."""
    cl = np.cos(site.latitude)
    return (R_EARTH_MEAN + site.height) * np.array([cl * np.cos(site.longitude), cl * np.sin(site.longitude), np.sin(site.latitude)])


def incident_power(tx, target_ecef, horizon_allowance=DEFAULT_HORIZON_ALLOWANCE):
    """Power density (W/m^2) arriving at the target from transmitter ``tx``.

    ``S = EIRP g(el) / (4 pi rho_tx^2)`` on a spherical Earth, with ``el`` the
    elevation seen from the transmitter. Targets more than
    ``horizon_allowance`` below the transmitter horizon are shadowed (S = 0).
    """
    p = spherical_site_position(tx.site)
    rho = np.asarray(target_ecef, dtype=float) - p
    rng = np.linalg.norm(rho, axis=-1)
    up = p / np.linalg.norm(p)
    el = np.arcsin(np.clip(rho @ up / rng, -1.0, 1.0))
    shadowed = el < -horizon_allowance
    S = tx.eirp * tx.pattern.gain(el) / (4.0 * np.pi * rng**2)
    S = np.where(shadowed, 0.0, S)
    return Illumination(S, el, rng, shadowed)


def incident_power_grid(tx, baselines, altitudes, horizon_allowance=DEFAULT_HORIZON_ALLOWANCE):
    """Incident power over a (ground distance from transmitter x altitude) grid.

    The target sits ``altitude`` above the point at great-circle distance
    ``baseline`` from the transmitter (spherical Earth). Returns an
    :class:`Illumination` whose arrays have shape ``(len(baselines), len(altitudes))``.
    """
    b = np.atleast_1d(np.asarray(baselines, dtype=float))
    h = np.atleast_1d(np.asarray(altitudes, dtype=float))
    p = spherical_site_position(tx.site)
    up = p / np.linalg.norm(p)
    north = np.cross(np.cross(up, [0.0, 0.0, 1.0]), up)
    if np.linalg.norm(north) < 1e-12:
        north = np.cross(up, [0.0, 1.0, 0.0])
    north /= np.linalg.norm(north)
    gamma = b / R_EARTH_MEAN
    dirs = np.cos(gamma)[:, None] * up + np.sin(gamma)[:, None] * north
    target = (R_EARTH_MEAN + h)[None, :, None] * dirs[:, None, :]
    return incident_power(tx, target, horizon_allowance)


def echo_power(tx, target_ecef, rcs, receiver, aperture_area, horizon_allowance=DEFAULT_HORIZON_ALLOWANCE):
    """Received echo power (W) on an aperture of ``aperture_area`` m^2 at ``receiver``."""
    ill = incident_power(tx, target_ecef, horizon_allowance)
    rx = spherical_site_position(receiver)
    rho_rx = np.linalg.norm(np.asarray(target_ecef, dtype=float) - rx, axis=-1)
    return ill.power * rcs / (4.0 * np.pi * rho_rx**2) * aperture_area


def integrated_snr_db(received_power, noise_temperature, cpi, n_tiles):
    """Expected SNR after matched integration over ``cpi`` seconds and ``n_tiles`` tiles."""
    return 10.0 * np.log10(received_power * cpi * n_tiles / (BOLTZMANN * noise_temperature))


@dataclass
class PulseTruth:
    """Exact per-pulse quantities rendered for one target and one transmitter."""

    target_id: str
    tx_id: str
    time: np.ndarray
    measurements: np.ndarray  # (P, 4): t_D, f_D, theta, phi
    delay_samples: np.ndarray
    phase: np.ndarray
    amplitude: np.ndarray
    visible: np.ndarray
    cpi: np.ndarray = None
    spatial_phase: np.ndarray = field(default=None, repr=False)


@dataclass
class TruthLog:
    pulses: list
    cpi_rows: list

    def for_pair(self, target_id, tx_id):
        for p in self.pulses:
            if p.target_id == target_id and p.tx_id == tx_id:
                return p
        raise KeyError((target_id, tx_id))


@dataclass
class RenderedScene:
    surveillance: dict
    references: dict
    truth: TruthLog
    config: ScenarioConfig


def _pulse_layout(cfg):
    """Global pulse index of every sample, and every pulse's centre time."""
    B, tau, M = cfg.sample_rate, cfg.tau, cfg.pulses
    edges = pulse_edges(M, tau, B)
    owner = np.empty(cfg.n_samples, dtype=np.int64)
    centres = np.empty(cfg.n_cpi * M)
    cpi_of = np.repeat(np.arange(cfg.n_cpi), M)
    for k in range(cfg.n_cpi):
        s0 = cfg.cpi_start_sample(k)
        s1 = cfg.cpi_start_sample(k + 1)
        idx = np.repeat(np.arange(M), np.diff(edges)) + k * M
        owner[s0 : s0 + edges[-1]] = idx
        owner[s0 + edges[-1] : s1] = k * M + M - 1
        centres[k * M : (k + 1) * M] = cfg.start_time + s0 / B + (np.arange(M) + 0.5) * tau
    return owner, centres, cpi_of


def pulse_truth(cfg, target, tx_id, times):
    """Exact delay, Doppler, angles, carrier phase and tile phases at ``times``."""
    scene = cfg.scene
    tx = scene.tx(tx_id)
    lam = tx.wavelength
    Y = propagate_states(target.state.as_array(), times - target.state.epoch)
    meas = _measurements_from_states(Y, times, [tx_id] * len(times), scene)
    phase = -(2.0 * np.pi / lam) * SPEED_OF_LIGHT * meas[:, 0]
    tgt = target_kinematics(Y[:, :3], Y[:, 3:])
    rx = scene.rx_kinematics(times)
    D = sez_matrix(scene.receiver, times, scene.epoch_angle)
    q, _, _ = to_sez(D, *relative(tgt, rx)[:3])
    qhat = q / np.linalg.norm(q, axis=-1, keepdims=True)
    # tile n is closer to the target by qhat . u_n in the far field
    spatial = (2.0 * np.pi / lam) * (scene.tiles.positions @ qhat.T)
    tgt_ecef = eci_to_ecef(Y[:, :3], times, scene.epoch_angle)
    ill = incident_power(tx, tgt_ecef, cfg.horizon_allowance)
    visible = (meas[:, 3] >= 0.0) & ~ill.shadowed
    if target.snr_db is not None:
        amp = np.full(len(times), np.sqrt(10.0 ** (target.snr_db / 10.0) / (cfg.sample_rate * cfg.tau)))
    else:
        pr = echo_power(tx, tgt_ecef, target.rcs, scene.receiver, cfg.tile_area, cfg.horizon_allowance)
        amp = np.sqrt(pr / (BOLTZMANN * cfg.noise_temperature * cfg.sample_rate))
    amp = np.where(visible, amp, 0.0)
    delay_samples = np.floor(meas[:, 0] * cfg.sample_rate + 0.5).astype(np.int64)
    return PulseTruth(target.id, tx_id, times, meas, delay_samples, phase, amp, visible, spatial_phase=spatial)


def render_scene(cfg, refs=None):
    """Render per-tile surveillance channels and references for every transmitter.

    Each echo is the reference delayed by the nearest-sample bistatic delay
    of its pulse, rotated by the exact carrier phase at the pulse centre
    plus the far-field tile phase, and scaled by the pulse amplitude.
    Surveillance channels carry unit-variance complex white noise.
    """
    scene = cfg.scene
    B = cfg.sample_rate
    n = cfg.n_samples
    owner, centres, cpi_of = _pulse_layout(cfg)
    tile_ids = scene.tiles.ids
    n_tiles = len(tile_ids)
    surveillance, references, truths, rows = {}, {}, [], []
    for ti, (tx_id, tx) in enumerate(sorted(scene.transmitters.items())):
        per_target = [pulse_truth(cfg, tgt, tx_id, centres) for tgt in cfg.targets]
        for pt in per_target:
            pt.cpi = cpi_of
        max_lag = max([int(pt.delay_samples[pt.visible].max()) for pt in per_target if pt.visible.any()] + [0])
        # fixed pre-roll so the reference realisation does not depend on the targets
        pre = int(np.ceil(MAX_RENDER_DELAY * B)) + 1
        if max_lag >= pre:
            raise ValueError(f"echo delay of {max_lag / B:.4f} s exceeds the {MAX_RENDER_DELAY} s render limit")
        if refs is None:
            full = band_limited_noise(n + pre, tx.bandwidth, B, channel_rng(cfg.seed, 0, ti))
        else:
            full = np.concatenate([np.zeros(pre, complex), refs[tx_id].samples[0, :n]])
        ref_out = full[pre:].copy()
        if cfg.reference_snr_db is not None:
            sig = 10.0 ** (-cfg.reference_snr_db / 20.0)
            rng = channel_rng(cfg.seed, 2, ti)
            ref_out = ref_out + sig * (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)
        references[tx_id] = IQRecording(ref_out[None, :], B, cfg.start_time, (f"{tx_id}-ref",), tx.carrier)

        data = np.zeros((n_tiles, n), dtype=np.complex128)
        if cfg.noise:
            for k in range(n_tiles):
                rng = channel_rng(cfg.seed, 1, ti, k)
                data[k] = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)
        i = np.arange(n)
        for pt in per_target:
            if not pt.visible.any():
                continue
            amp = pt.amplitude[owner]
            src = full[i + pre - pt.delay_samples[owner]]
            base = amp * src * np.exp(1j * pt.phase[owner])
            for k in range(n_tiles):
                data[k] += base * np.exp(1j * pt.spatial_phase[k][owner])
        surveillance[tx_id] = IQRecording(data, B, cfg.start_time, tile_ids, tx.carrier)

        for pt in per_target:
            truths.append(pt)
            M = cfg.pulses
            for k in range(cfg.n_cpi):
                t_c = cfg.start_time + cfg.cpi_start_sample(k) / B + 0.5 * cfg.cpi
                j = k * M + M // 2
                z = pt.measurements[j]
                rows.append(
                    {
                        "time_s": t_c,
                        "target_id": pt.target_id,
                        "tx_id": tx_id,
                        "delay_s": z[0],
                        "doppler_hz": z[1],
                        "azimuth_rad": z[2],
                        "elevation_rad": z[3],
                        "visible": bool(pt.visible[j]),
                    }
                )
    return RenderedScene(surveillance, references, TruthLog(truths, rows), cfg)


def synthesize_track(state, times, tx_ids, scene, sigma, rng=None):
    """Measurement track from a true orbit with additive Gaussian noise of std ``sigma``.

    ``sigma`` is ``(4,)`` or ``(k, 4)``; ``rng=None`` gives noiseless measurements.
    """
    from .od import Measurement, Track, predict_measurements

    times = np.asarray(times, dtype=float)
    z = predict_measurements(state, times, tx_ids, scene)
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), z.shape)
    if rng is not None:
        z = z + sig * rng.standard_normal(z.shape)
        z[:, 2] = np.mod(z[:, 2], 2.0 * np.pi)
    return Track([Measurement(*row, time=t, tx_id=str(tx), sigma=s) for row, t, tx, s in zip(z, times, tx_ids, sig)])
