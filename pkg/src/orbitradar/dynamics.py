"""Two-body motion and the range / angle derivative series derived from it."""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .constants import MU_EARTH, SPEED_OF_LIGHT, WGS84_A
from .errors import GeometryError, ReentryWarning
from .frames import Kinematics
from .validation import check_vec3

RTOL = 1e-12
ATOL = 1e-6


@dataclass(frozen=True)
class StateVector:
    """ECI position (m) and velocity (m/s) at ``epoch`` (s since scenario epoch)."""

    r: np.ndarray
    v: np.ndarray
    epoch: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "r", check_vec3(self.r, "r").copy())
        object.__setattr__(self, "v", check_vec3(self.v, "v").copy())
        object.__setattr__(self, "epoch", float(self.epoch))

    def as_array(self):
        return np.concatenate([self.r, self.v])

    @classmethod
    def from_array(cls, x, epoch=0.0):
        x = np.asarray(x, dtype=float)
        return cls(x[:3], x[3:6], epoch)

    @property
    def energy(self):
        return 0.5 * self.v @ self.v - MU_EARTH / np.linalg.norm(self.r)

    @property
    def angular_momentum(self):
        return np.cross(self.r, self.v)

    def kinematics(self):
        return target_kinematics(self.r, self.v)

    def to_dict(self):
        return {"r": self.r.tolist(), "v": self.v.tolist(), "epoch": self.epoch}

    @classmethod
    def from_dict(cls, d):
        return cls(d["r"], d["v"], d.get("epoch", 0.0))


@dataclass(frozen=True)
class SlantSeries:
    rho: np.ndarray
    rhodot: np.ndarray
    rhoddot: np.ndarray
    rhodddot: np.ndarray


@dataclass(frozen=True)
class AngleSeries:
    theta: np.ndarray
    thetadot: np.ndarray
    thetaddot: np.ndarray
    phi: np.ndarray
    phidot: np.ndarray
    phiddot: np.ndarray


def _norm(v):
    return np.linalg.norm(v, axis=-1)


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def gravity_accel(r):
    r = check_vec3(r, "r")
    rn = _norm(r)
    if np.any(rn == 0):
        raise GeometryError("gravity is undefined at the geocentre")
    return -MU_EARTH * r / rn[..., None] ** 3


def gravity_jerk(r, v):
    r = check_vec3(r, "r")
    v = check_vec3(v, "v")
    rn = _norm(r)
    if np.any(rn == 0):
        raise GeometryError("gravity jerk is undefined at the geocentre")
    rv = _dot(r, v)
    return (3.0 * MU_EARTH * rv / rn**5)[..., None] * r - (MU_EARTH / rn**3)[..., None] * v


def target_kinematics(r, v):
    """Position, velocity, two-body acceleration and jerk of an orbiting object."""
    return Kinematics(np.asarray(r, float), np.asarray(v, float), gravity_accel(r), gravity_jerk(r, v))


def _two_body_rhs(_t, y):
    s = y.reshape(-1, 6)
    r = s[:, :3]
    rn = np.sqrt(np.einsum("ij,ij->i", r, r))
    out = np.empty_like(s)
    out[:, :3] = s[:, 3:]
    out[:, 3:] = -MU_EARTH * r / rn[:, None] ** 3
    return out.ravel()


def _integrate(y0, times):
    """Integrate from 0 to each of ``times`` (all same sign, sorted away from 0)."""
    out = np.empty((len(times), y0.size))
    nonzero = times != 0.0
    out[~nonzero] = y0
    if nonzero.any():
        tt = times[nonzero]
        sol = solve_ivp(
            _two_body_rhs,
            (0.0, tt[-1]),
            y0,
            method="RK45",
            t_eval=tt,
            rtol=RTOL,
            atol=ATOL,
        )
        if not sol.success:
            raise RuntimeError(f"orbit propagation failed: {sol.message}")
        out[nonzero] = sol.y.T
    return out


def propagate_states(states, dt):
    """Propagate one or many 6-element states to offsets ``dt`` (seconds).

    All states share the same step sequence, which keeps finite-difference
    perturbations of a nominal state smooth. Returns shape
    ``(len(dt), n_states, 6)`` (or ``(len(dt), 6)`` for a single state).
    """
    states = np.asarray(states, dtype=float)
    single = states.ndim == 1
    X = np.atleast_2d(states)
    dt = np.atleast_1d(np.asarray(dt, dtype=float))
    if not np.all(np.isfinite(dt)):
        raise ValueError("propagation offsets must be finite")
    y0 = X.ravel()
    out = np.empty((dt.size, y0.size))
    order = np.argsort(dt)
    fwd = order[dt[order] >= 0]
    bwd = order[dt[order] < 0][::-1]
    if fwd.size:
        out[fwd] = _integrate(y0, dt[fwd])
    if bwd.size:
        out[bwd] = _integrate(y0, dt[bwd])
    out = out.reshape(dt.size, X.shape[0], 6)
    radii = np.linalg.norm(out[..., :3], axis=-1)
    if np.any(radii < 6.378e6):
        warnings.warn("trajectory passes below the Earth's surface", ReentryWarning, stacklevel=2)
    return out[:, 0, :] if single else out


def propagate(x, dt):
    """Two-body propagation of a :class:`StateVector` by ``dt`` seconds."""
    y = propagate_states(x.as_array(), [dt])[0]
    return StateVector(y[:3], y[3:], x.epoch + dt)


def _series(rel):
    """Range, rate, acceleration and jerk of a relative kinematic vector series."""
    p, pd, pdd, pddd = rel
    rho = _norm(p)
    if np.any(rho == 0):
        raise GeometryError("target coincides with the site")
    a = _dot(p, pd)
    b = _dot(pd, pd) + _dot(p, pdd)
    rhodot = a / rho
    rhoddot = -(a**2) / rho**3 + b / rho
    rhodddot = 3.0 * a**3 / rho**5 - 3.0 * a * b / rho**3 + (3.0 * _dot(pd, pdd) + _dot(p, pddd)) / rho
    return SlantSeries(rho, rhodot, rhoddot, rhodddot)


def relative(target, site):
    return (
        target.r - site.r,
        target.rdot - site.rdot,
        target.rddot - site.rddot,
        target.rdddot - site.rdddot,
    )


def slant_series(target, site):
    """Slant range from ``site`` to ``target`` and its first three derivatives."""
    return _series(relative(target, site))


def baseline(tx, rx):
    return _norm(np.asarray(rx.r) - np.asarray(tx.r))


def bistatic_delay(target, tx, rx):
    """Excess bistatic delay (s) of the echo over the direct path."""
    rho_rx = _norm(target.r - rx.r)
    rho_tx = _norm(target.r - tx.r)
    return (rho_rx + rho_tx - baseline(tx, rx)) / SPEED_OF_LIGHT


def bistatic_doppler(target, tx, rx, wavelength):
    if wavelength <= 0:
        raise ValueError("wavelength must be positive")
    rd_rx = _dot(target.r - rx.r, target.rdot - rx.rdot) / _norm(target.r - rx.r)
    rd_tx = _dot(target.r - tx.r, target.rdot - tx.rdot) / _norm(target.r - tx.r)
    return -(rd_rx + rd_tx) / wavelength


def azel_series(q, qdot, qddot):
    """Azimuth (from north, clockwise) and elevation with their first two rates.

    ``q`` is a SEZ vector series. Raises :class:`GeometryError` when the
    target sits at the zenith, where azimuth is undefined.
    """
    q, qdot, qddot = (np.asarray(a, dtype=float) for a in (q, qdot, qddot))
    qs, qe, qz = q[..., 0], q[..., 1], q[..., 2]
    vs, ve, vz = qdot[..., 0], qdot[..., 1], qdot[..., 2]
    as_, ae, az = qddot[..., 0], qddot[..., 1], qddot[..., 2]
    h2 = qs**2 + qe**2
    if np.any(h2 == 0):
        raise GeometryError("azimuth is undefined at the zenith (q_S = q_E = 0)")
    h = np.sqrt(h2)
    rng = _norm(q)
    # scalar range rate and acceleration of q
    qd = _dot(q, qdot) / rng
    qdd = (_dot(qdot, qdot) + _dot(q, qddot)) / rng - qd**2 / rng

    theta = np.mod(np.arctan2(qe, -qs), 2.0 * np.pi)
    cross = vs * qe - ve * qs
    thetadot = cross / h2
    thetaddot = ((as_ * qe - ae * qs) * h2 - 2.0 * (vs * qs + ve * qe) * cross) / h2**2

    phi = np.arctan2(qz, h)
    sphi, cphi = np.sin(phi), np.cos(phi)
    phidot = (vz - qd * sphi) / h
    phiddot = ((qd * sphi - vz) * (vs * qs + ve * qe) / h + (az - qdd * sphi - qd * phidot * cphi) * h) / h2
    return AngleSeries(theta, thetadot, thetaddot, phi, phidot, phiddot)


def azel_unit_vector(theta, phi):
    """SEZ unit vector pointing at azimuth ``theta``, elevation ``phi``."""
    cphi = np.cos(phi)
    return np.stack([-cphi * np.cos(theta), cphi * np.sin(theta), np.sin(phi)], -1)


def circular_speed(radius):
    return np.sqrt(MU_EARTH / radius)


def orbit_period(radius):
    return 2.0 * np.pi * np.sqrt(radius**3 / MU_EARTH)


def is_above_surface(r):
    return _norm(np.asarray(r)) > WGS84_A * (1.0 - 1.0 / 298.257223563)
