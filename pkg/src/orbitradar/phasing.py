"""Orbit hypothesis -> per-tile, per-pulse polynomial phase corrections."""

import json
from dataclasses import dataclass

import numpy as np

from .constants import SPEED_OF_LIGHT
from .dynamics import bistatic_delay, bistatic_doppler, propagate_states, relative, slant_series, target_kinematics
from .errors import GeometryError
from .frames import sez_matrix, site_kinematics_eci, to_sez
from .validation import check_odd, check_positive


@dataclass(frozen=True)
class TileArray:
    """Tile positions in the receiver's local SEZ frame (metres)."""

    ids: tuple
    positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        ids = tuple(str(i) for i in self.ids)
        if len(ids) == 0:
            raise ValueError("a tile array needs at least one tile")
        if len(ids) != pos.shape[0]:
            raise ValueError("one id per tile position is required")
        if len(set(ids)) != len(ids):
            raise ValueError("tile ids must be unique")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "positions", pos)

    def __len__(self):
        return len(self.ids)

    @classmethod
    def from_records(cls, records):
        """Build from ``{id, east_m, north_m, up_m}`` records."""
        ids = [r["id"] for r in records]
        pos = [[-float(r["north_m"]), float(r["east_m"]), float(r["up_m"])] for r in records]
        return cls(tuple(ids), np.array(pos))

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_records(json.load(fh))

    def to_records(self):
        return [
            {"id": i, "east_m": float(p[1]), "north_m": float(-p[0]), "up_m": float(p[2])}
            for i, p in zip(self.ids, self.positions)
        ]

    @classmethod
    def grid(cls, n_side, spacing):
        """Square ``n_side x n_side`` layout centred on the array origin."""
        c = (np.arange(n_side) - (n_side - 1) / 2) * spacing
        ee, nn = np.meshgrid(c, c)
        pos = np.stack([-nn.ravel(), ee.ravel(), np.zeros(ee.size)], -1)
        return cls(tuple(f"T{i:03d}" for i in range(ee.size)), pos)

    @property
    def aperture(self):
        """Largest tile separation, used as the effective aperture size."""
        p = self.positions
        if len(p) < 2:
            return 0.0
        return float(np.max(np.linalg.norm(p[:, None, :] - p[None, :, :], axis=-1)))


@dataclass(frozen=True)
class WavevectorSeries:
    k: np.ndarray
    kdot: np.ndarray
    kddot: np.ndarray


@dataclass(frozen=True)
class DopplerCoefficients:
    d0: float
    d1: float
    d2: float
    d3: float

    def __add__(self, other):
        return DopplerCoefficients(self.d0 + other.d0, self.d1 + other.d1, self.d2 + other.d2, self.d3 + other.d3)

    def __neg__(self):
        return DopplerCoefficients(-self.d0, -self.d1, -self.d2, -self.d3)


@dataclass(frozen=True)
class SpatialCoefficients:
    b0: np.ndarray
    b1: np.ndarray
    b2: np.ndarray

    def __add__(self, other):
        return SpatialCoefficients(self.b0 + other.b0, self.b1 + other.b1, self.b2 + other.b2)

    def __neg__(self):
        return SpatialCoefficients(-self.b0, -self.b1, -self.b2)


@dataclass(frozen=True)
class PhaseMatrix:
    P: np.ndarray
    tau: float
    M: int

    @property
    def pulse_offsets(self):
        """Pulse times relative to the CPI centre, ``m * tau``."""
        return pulse_indices(self.M) * self.tau


def pulse_indices(M):
    h = (M - 1) // 2
    return np.arange(-h, h + 1)


def wavevector_series(q, qdot, qddot):
    """Arrival wavevector (unit, target -> receiver) and its two rates.

    ``k = -q/|q|``: the direction the echo travels across the array. Rates
    come from differentiating the normalisation directly.
    """
    q, qdot, qddot = (np.asarray(a, dtype=float) for a in (q, qdot, qddot))
    s = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(s == 0):
        raise GeometryError("wavevector undefined for zero range")
    u = q / s
    sd = np.sum(u * qdot, axis=-1, keepdims=True)
    ud = (qdot - u * sd) / s
    sdd = (np.sum(qdot * qdot, axis=-1, keepdims=True) + np.sum(q * qddot, axis=-1, keepdims=True) - sd**2) / s
    udd = (qddot - sdd * u - 2.0 * sd * ud) / s
    return WavevectorSeries(-u, -ud, -udd)


def doppler_coeffs(tx_series, rx_series, baseline, wavelength):
    wavelength = check_positive(wavelength, "wavelength")
    g = 2.0 * np.pi / wavelength
    return DopplerCoefficients(
        d0=-g * (rx_series.rho + tx_series.rho - baseline),
        d1=-g * (rx_series.rhodot + tx_series.rhodot),
        d2=-(np.pi / wavelength) * (rx_series.rhoddot + tx_series.rhoddot),
        d3=-(np.pi / (3.0 * wavelength)) * (rx_series.rhodddot + tx_series.rhodddot),
    )


def spatial_coeffs(ks, tiles, wavelength):
    wavelength = check_positive(wavelength, "wavelength")
    u = tiles.positions if isinstance(tiles, TileArray) else np.asarray(tiles, dtype=float)
    g = 2.0 * np.pi / wavelength
    return SpatialCoefficients(
        b0=-g * (u @ ks.k),
        b1=-g * (u @ ks.kdot),
        b2=-(np.pi / wavelength) * (u @ ks.kddot),
    )


def phase_matrix(dc, sc, M, tau):
    """``P[n, m] = exp(-j(b0 + (b1 + d1) t + (b2 + d2) t^2 + d3 t^3))`` with ``t = m tau``.

    ``d0`` is deliberately left out; the absolute echo phase is not needed.
    """
    M = check_odd(M, "M")
    tau = check_positive(tau, "tau")
    t = pulse_indices(M) * tau
    b0, b1, b2 = (np.atleast_1d(np.asarray(b, dtype=float))[:, None] for b in (sc.b0, sc.b1, sc.b2))
    phase = b0 + (b1 + dc.d1) * t + (b2 + dc.d2) * t**2 + dc.d3 * t**3
    return PhaseMatrix(np.exp(-1j * phase), tau, M)


@dataclass(frozen=True)
class HypothesisGeometry:
    """Everything one hypothesis implies for one bistatic pair at one instant."""

    time: float
    doppler: DopplerCoefficients
    spatial: SpatialCoefficients
    delay: float
    doppler_hz: float
    tx_series: object
    rx_series: object
    q: np.ndarray
    qdot: np.ndarray
    qddot: np.ndarray

    @property
    def delay_rate(self):
        """Bistatic delay derivatives (s/s, s/s^2, s/s^3) for range migration."""
        return (
            (self.rx_series.rhodot + self.tx_series.rhodot) / SPEED_OF_LIGHT,
            (self.rx_series.rhoddot + self.tx_series.rhoddot) / SPEED_OF_LIGHT,
            (self.rx_series.rhodddot + self.tx_series.rhodddot) / SPEED_OF_LIGHT,
        )

    def delay_at(self, offsets):
        """Cubic Taylor extrapolation of the bistatic delay to ``offsets`` (s)."""
        d1, d2, d3 = self.delay_rate
        t = np.asarray(offsets, dtype=float)
        return self.delay + d1 * t + 0.5 * d2 * t**2 + d3 * t**3 / 6.0


def hypothesis_geometry(state, time, tx_site, rx_site, tiles, wavelength, epoch_angle=0.0):
    """Propagate ``state`` to ``time`` and derive all matching coefficients there."""
    y = propagate_states(state.as_array(), [time - state.epoch])[0]
    target = target_kinematics(y[:3], y[3:])
    tx = site_kinematics_eci(tx_site, time, epoch_angle)
    rx = site_kinematics_eci(rx_site, time, epoch_angle)
    tx_s = slant_series(target, tx)
    rx_s = slant_series(target, rx)
    bl = float(np.linalg.norm(rx.r - tx.r))
    D = sez_matrix(rx_site, time, epoch_angle)
    p, pd, pdd, _ = relative(target, rx)
    q, qd, qdd = to_sez(D, p, pd, pdd)
    ks = wavevector_series(q, qd, qdd)
    return HypothesisGeometry(
        time=float(time),
        doppler=doppler_coeffs(tx_s, rx_s, bl, wavelength),
        spatial=spatial_coeffs(ks, tiles, wavelength),
        delay=float(bistatic_delay(target, tx, rx)),
        doppler_hz=float(bistatic_doppler(target, tx, rx, wavelength)),
        tx_series=tx_s,
        rx_series=rx_s,
        q=q,
        qdot=qd,
        qddot=qdd,
    )


def max_phase_difference(a, b, half_span):
    """Upper bound on the phase gap (rad) between two coefficient sets over ``|t| <= half_span``."""
    (da, sa), (db, sb) = a, b
    T = half_span
    return float(
        np.max(
            np.abs(sa.b0 - sb.b0)
            + np.abs(sa.b1 + da.d1 - sb.b1 - db.d1) * T
            + np.abs(sa.b2 + da.d2 - sb.b2 - db.d2) * T**2
            + abs(da.d3 - db.d3) * T**3
        )
    )


class PhaseMatrixCache:
    """Per-hypothesis phase matrix store.

    A stored matrix is reused only when the freshly computed coefficients
    stay within ``tolerance`` radians of the stored ones across the CPI.
    ``enabled=False`` (the default) regenerates every time.
    """

    def __init__(self, tolerance=1e-3, enabled=False):
        self.tolerance = tolerance
        self.enabled = enabled
        self._store = {}
        self.hits = 0
        self.misses = 0

    def get(self, key, dc, sc, M, tau):
        if self.enabled and key in self._store:
            (cdc, csc), pm = self._store[key]
            if pm.M == M and pm.tau == tau and max_phase_difference((dc, sc), (cdc, csc), (M - 1) / 2 * tau) < self.tolerance:
                self.hits += 1
                return pm
        self.misses += 1
        pm = phase_matrix(dc, sc, M, tau)
        if self.enabled:
            self._store[key] = ((dc, sc), pm)
        return pm
