"""Pulse compression, orbit-matched combination, pruned Doppler transform and CA-CFAR."""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .dynamics import azel_series
from .od import Measurement, default_sigmas
from .phasing import PhaseMatrixCache, hypothesis_geometry, pulse_indices
from .validation import check_complex_2d, check_odd, check_positive

log = logging.getLogger(__name__)

DEFAULT_MAX_DELAY = 10e-3  # 0-3000 km bistatic excess path


@dataclass
class IQRecording:
    """Complex baseband samples, one row per channel."""

    samples: np.ndarray
    sample_rate: float
    start_time: float = 0.0
    channel_ids: tuple = ()
    center_freq: float = 0.0

    def __post_init__(self):
        self.samples = check_complex_2d(self.samples)
        self.sample_rate = check_positive(self.sample_rate, "sample_rate")
        if not self.channel_ids:
            self.channel_ids = tuple(f"ch{i}" for i in range(self.samples.shape[0]))
        self.channel_ids = tuple(str(c) for c in self.channel_ids)
        if len(self.channel_ids) != self.samples.shape[0]:
            raise ValueError("one channel id per row of samples is required")

    @property
    def n_samples(self):
        return self.samples.shape[1]

    @property
    def duration(self):
        return self.n_samples / self.sample_rate

    def segment(self, start_time, duration):
        """Sub-recording starting at ``start_time`` (nearest sample)."""
        i0 = int(np.floor((start_time - self.start_time) * self.sample_rate + 0.5))
        n = int(np.floor(duration * self.sample_rate + 0.5))
        if i0 < 0 or i0 + n > self.n_samples:
            raise ValueError("requested segment lies outside the recording")
        return IQRecording(
            self.samples[:, i0 : i0 + n], self.sample_rate, self.start_time + i0 / self.sample_rate, self.channel_ids, self.center_freq
        )


def pulse_edges(M, tau, sample_rate):
    """Sample index at which each of ``M`` pulses starts, plus the end index.

    ``B * tau`` need not be an integer; pulse ``j`` covers samples
    ``[floor(j B tau), floor((j + 1) B tau))``.
    """
    L = sample_rate * tau
    return np.floor(np.arange(M + 1) * L + 1e-9).astype(np.int64)


@dataclass
class PulseCube:
    """Range-compressed pulses ``chi[tile, delay_bin, pulse]``."""

    chi: np.ndarray
    tau: float
    sample_rate: float
    delay_bin_zero: float
    start_time: float
    channel_ids: tuple = ()
    edges: np.ndarray = None

    @property
    def M(self):
        return self.chi.shape[2]

    @property
    def n_delay_bins(self):
        return self.chi.shape[1]

    @property
    def first_bin(self):
        return int(round(self.delay_bin_zero * self.sample_rate))

    @property
    def cpi(self):
        return self.M * self.tau

    @property
    def cpi_center(self):
        return self.start_time + 0.5 * self.M * self.tau

    @property
    def pulse_offsets(self):
        """Pulse-centre times relative to the CPI centre."""
        return pulse_indices(self.M) * self.tau

    def delay_bins(self, delays):
        """Nearest cube bin index for each bistatic delay (may fall outside the cube)."""
        return np.rint(np.asarray(delays) * self.sample_rate).astype(np.int64) - self.first_bin

    def freeze(self):
        self.chi.setflags(write=False)
        return self


def pulse_compress(surv, ref, tau, max_delay=DEFAULT_MAX_DELAY, M=None, min_delay=0.0):
    """Per-pulse cross-correlation of every surveillance channel against the reference.

    ``chi[n, t, m] = sum_t' s_n[p_m + t'] conj(s_r[p_m + t' - t])`` over the
    samples of pulse ``m``, for delay bins ``t`` in ``[B min_delay, B max_delay)``.
    Reference samples before the recording start count as zero.
    """
    if not np.isclose(surv.sample_rate, ref.sample_rate, rtol=1e-12, atol=0):
        raise ValueError(f"sample rates differ: {surv.sample_rate} vs {ref.sample_rate}")
    B = surv.sample_rate
    if abs(surv.start_time - ref.start_time) > 0.5 / B:
        raise ValueError("surveillance and reference recordings are not time aligned")
    if ref.samples.shape[0] != 1:
        raise ValueError("the reference recording must have exactly one channel")
    tau = check_positive(tau, "tau")
    L = B * tau
    if L < 1:
        raise ValueError("pulses must span at least one sample")
    n_avail = min(surv.n_samples, ref.n_samples)
    if M is None:
        M = int(np.floor(n_avail / L + 1e-9))
        M -= 1 - M % 2
    M = check_odd(M, "M")
    edges = pulse_edges(M, tau, B)
    n_used = int(edges[-1])
    if n_used > n_avail:
        raise ValueError(f"recording holds {n_avail} samples but {M} pulses of {tau} s need {n_used}")
    k0 = int(np.floor(min_delay * B + 1e-9))
    k1 = int(np.ceil(max_delay * B - 1e-9))
    if k1 <= k0 or k0 < 0:
        raise ValueError("delay window must satisfy 0 <= min_delay < max_delay")

    s = surv.samples[:, :n_used]
    r = ref.samples[0, :n_used]
    rc = np.conj(r)
    chi = np.empty((s.shape[0], k1 - k0, M), dtype=np.complex128)
    starts = edges[:-1]
    shifted = np.zeros(n_used, dtype=np.complex128)
    for j, k in enumerate(range(k0, k1)):
        shifted[:k] = 0.0
        shifted[k:] = rc[: n_used - k] if k < n_used else 0.0
        chi[:, j, :] = np.add.reduceat(s * shifted, starts, axis=1)
    return PulseCube(chi, tau, B, k0 / B, surv.start_time, surv.channel_ids, edges)


def matched_range_series(cube, P, delays, range_migration=True):
    """Phase-correct and sum the tiles along the hypothesis' range track.

    ``delays`` is the per-pulse bistatic delay (s), or a callable of the
    pulse offsets from the CPI centre. With ``range_migration=False`` the
    centre-pulse bin is used for every pulse.
    """
    Pm = P.P if hasattr(P, "P") else np.asarray(P)
    if Pm.shape != (cube.chi.shape[0], cube.M):
        raise ValueError(f"phase matrix shape {Pm.shape} does not match cube {(cube.chi.shape[0], cube.M)}")
    if callable(delays):
        delays = delays(cube.pulse_offsets)
    delays = np.broadcast_to(np.asarray(delays, dtype=float), (cube.M,))
    bins = cube.delay_bins(delays)
    if not range_migration:
        bins = np.full(cube.M, bins[cube.M // 2])
    bad = np.nonzero((bins < 0) | (bins >= cube.n_delay_bins))[0]
    if bad.size:
        shown = bad[:10].tolist()
        raise ValueError(f"delay outside cube span for {bad.size} pulse(s), e.g. pulses {shown}")
    sel = cube.chi[:, bins, np.arange(cube.M)]
    return np.sum(Pm * sel, axis=0)


@dataclass
class DopplerSpectrum:
    power: np.ndarray
    bins: np.ndarray
    bin_spacing: float = float("nan")

    @property
    def frequencies(self):
        return self.bins * self.bin_spacing


def doppler_spectrum(chi_m, window_bins=201, tau=None, block=32):
    """Power at the ``window_bins`` Doppler bins nearest zero.

    ``chi[f] = |sum_m chi[m] exp(-j 2 pi f m / M)|^2`` with the pulse index
    ``m`` centred on zero; only the requested bins are evaluated.
    """
    x = np.asarray(chi_m, dtype=np.complex128)
    M = check_odd(x.size, "len(chi_m)")
    W = check_odd(window_bins, "window_bins")
    if W > M:
        raise ValueError("window_bins cannot exceed the number of pulses")
    h = (W - 1) // 2
    f = np.arange(-h, h + 1)
    m = pulse_indices(M)
    power = np.empty(W)
    for i in range(0, W, block):
        fb = f[i : i + block]
        kernel = np.exp(-2j * np.pi * np.outer(fb, m) / M)
        power[i : i + block] = np.abs(kernel @ x) ** 2
    spacing = 1.0 / (M * tau) if tau else float("nan")
    return DopplerSpectrum(power, f, spacing)


@dataclass(frozen=True)
class CfarHit:
    index: int
    bin: int
    snr_db: float
    power: float
    floor: float


def cfar_floor(power, guard, train):
    """Mean of the leading and lagging training cells around every testable cell.

    Returns ``(cells, floor)`` where ``cells`` are the indices with a full
    training window on both sides.
    """
    p = np.asarray(power, dtype=float)
    W = p.size
    span = guard + train
    if train < 1 or guard < 0 or W < 2 * span + 1:
        raise ValueError(f"window of {W} bins is too small for {guard} guard and {train} training cells")
    c = np.concatenate([[0.0], np.cumsum(p)])
    cells = np.arange(span, W - span)
    lead = c[cells - guard] - c[cells - span]
    lag = c[cells + span + 1] - c[cells + guard + 1]
    return cells, (lead + lag) / (2.0 * train)


def ca_cfar(spec, guard=4, train=32, threshold_db=16.0):
    """Cell-averaging CFAR over a Doppler spectrum.

    A cell is declared when its power exceeds the mean training-cell power
    times ``10**(threshold_db/10)``.
    """
    power = spec.power if hasattr(spec, "power") else np.asarray(spec, dtype=float)
    bins = spec.bins if hasattr(spec, "bins") else np.arange(power.size)
    cells, floor = cfar_floor(power, guard, train)
    cut = power[cells]
    with np.errstate(divide="ignore", invalid="ignore"):
        hit = cut > floor * 10.0 ** (threshold_db / 10.0)
        snr = 10.0 * np.log10(cut / floor)
    return [CfarHit(int(i), int(bins[i]), float(s), float(p), float(fl)) for i, s, p, fl, h in zip(cells, snr, cut, floor, hit) if h]


def cfar_false_alarm_probability(train_cells_total, threshold_db):
    """Design false-alarm probability of CA-CFAR in exponential (square-law) noise."""
    alpha = 10.0 ** (threshold_db / 10.0)
    return (1.0 + alpha / train_cells_total) ** (-train_cells_total)


@dataclass
class Detection:
    snr_db: float
    doppler_offset: float
    measurement: Measurement
    hypothesis_id: str
    bin: int = 0


@dataclass
class OrbitMatch:
    """Outcome of matching one hypothesis against one transmitter's cube."""

    tx_id: str
    detection: Detection = None
    peak_snr_db: float = float("nan")
    peak_bin: int = 0
    reason: str = None
    spectrum: DopplerSpectrum = field(default=None, repr=False)


def match_hypothesis(
    cube,
    hypothesis,
    scene,
    tx_id,
    hypothesis_id="",
    guard=4,
    train=32,
    threshold_db=16.0,
    window_bins=201,
    range_migration=True,
    min_elevation=0.0,
    cache=None,
):
    """Run the full matched chain for one hypothesis and one transmitter."""
    tx = scene.tx(tx_id)
    t_c = cube.cpi_center
    geo = hypothesis_geometry(hypothesis, t_c, tx.site, scene.receiver, scene.tiles, tx.wavelength, scene.epoch_angle)
    angles = azel_series(geo.q, geo.qdot, geo.qddot)
    if angles.phi < min_elevation:
        return OrbitMatch(tx_id, reason="hypothesis below the receiver horizon")
    if cache is not None:
        P = cache.get((hypothesis_id, tx_id), geo.doppler, geo.spatial, cube.M, cube.tau)
    else:
        P = PhaseMatrixCache().get(None, geo.doppler, geo.spatial, cube.M, cube.tau)
    try:
        series = matched_range_series(cube, P, geo.delay_at, range_migration)
    except ValueError as exc:
        return OrbitMatch(tx_id, reason=str(exc))
    spec = doppler_spectrum(series, window_bins, cube.tau)
    cells, floor = cfar_floor(spec.power, guard, train)
    snr = 10.0 * np.log10(spec.power[cells] / floor)
    ipk = int(np.argmax(snr))
    out = OrbitMatch(tx_id, peak_snr_db=float(snr[ipk]), peak_bin=int(spec.bins[cells[ipk]]), spectrum=spec)
    hits = ca_cfar(spec, guard, train, threshold_db)
    if hits:
        best = max(hits, key=lambda h: h.snr_db)
        offset = best.bin * spec.bin_spacing
        sigma = default_sigmas(cube.sample_rate, cube.cpi, scene.beamwidth(tx_id), best.snr_db)
        meas = Measurement(
            t_D=geo.delay,
            f_D=geo.doppler_hz + offset,
            theta=float(angles.theta),
            phi=float(angles.phi),
            time=t_c,
            tx_id=tx_id,
            sigma=sigma,
            snr_db=best.snr_db,
            hypothesis_id=hypothesis_id,
        )
        out.detection = Detection(best.snr_db, offset, meas, hypothesis_id, best.bin)
    return out


def detect_orbit(cubes, hypothesis, scene, hypothesis_id="", **kwargs):
    """Match one hypothesis against every transmitter's cube.

    Returns ``{tx_id: OrbitMatch}``; ``match.detection`` is ``None`` when
    nothing crossed the CFAR threshold and ``match.reason`` says why a
    transmitter was skipped.
    """
    out = {}
    for tx_id, cube in cubes.items():
        res = match_hypothesis(cube, hypothesis, scene, tx_id, hypothesis_id, **kwargs)
        if res.reason:
            log.debug("hypothesis %s / %s skipped: %s", hypothesis_id, tx_id, res.reason)
        out[tx_id] = res
    return out


class OrbitMatchedDetector(BaseEstimator):
    """Orbit-hypothesis detector over a set of per-transmitter pulse cubes.

    ``fit(cubes, scene)`` stores the cubes read-only; ``predict(hypotheses)``
    matches each hypothesis and returns the resulting :class:`Detection`
    list. Hypotheses are evaluated concurrently over ``n_jobs`` threads.
    """

    def __init__(
        self,
        guard_cells=4,
        train_cells=32,
        threshold_db=16.0,
        window_bins=201,
        range_migration=True,
        min_elevation=0.0,
        reuse_tolerance=None,
        n_jobs=1,
    ):
        self.guard_cells = guard_cells
        self.train_cells = train_cells
        self.threshold_db = threshold_db
        self.window_bins = window_bins
        self.range_migration = range_migration
        self.min_elevation = min_elevation
        self.reuse_tolerance = reuse_tolerance
        self.n_jobs = n_jobs

    def fit(self, cubes, scene):
        check_odd(self.window_bins, "window_bins")
        if self.window_bins < 2 * (self.guard_cells + self.train_cells) + 1:
            raise ValueError("window_bins too small for the CFAR geometry")
        self.cubes_ = {k: c.freeze() for k, c in cubes.items()}
        self.scene_ = scene
        self.cache_ = PhaseMatrixCache(
            tolerance=self.reuse_tolerance or 1e-3, enabled=self.reuse_tolerance is not None
        )
        return self

    def _match_one(self, item):
        hid, state = item
        t0 = time.perf_counter()
        res = detect_orbit(
            self.cubes_,
            state,
            self.scene_,
            hypothesis_id=hid,
            guard=self.guard_cells,
            train=self.train_cells,
            threshold_db=self.threshold_db,
            window_bins=self.window_bins,
            range_migration=self.range_migration,
            min_elevation=self.min_elevation,
            cache=self.cache_,
        )
        self.timings_[hid] = time.perf_counter() - t0
        return hid, res

    def match(self, hypotheses):
        """``{hypothesis_id: {tx_id: OrbitMatch}}`` for every hypothesis.

        Wall-clock seconds per hypothesis are left in ``timings_``.
        """
        check_is_fitted(self, "cubes_")
        self.timings_ = {}
        items = list(hypotheses.items()) if isinstance(hypotheses, dict) else [(str(i), h) for i, h in enumerate(hypotheses)]
        if self.n_jobs == 1:
            results = [self._match_one(it) for it in items]
        else:
            with ThreadPoolExecutor(max_workers=self.n_jobs) as pool:
                results = list(pool.map(self._match_one, items))
        return dict(results)

    def predict(self, hypotheses):
        matches = self.match(hypotheses)
        return [m.detection for per_tx in matches.values() for m in per_tx.values() if m.detection is not None]
