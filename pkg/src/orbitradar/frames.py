"""Geodetic sites, Earth-rotation kinematics in ECI, and the SEZ topocentric frame.

ECI here is realised as a pure z-axis rotation of the Earth-fixed frame by
``epoch_angle + OMEGA_EARTH * t``; no precession, nutation or polar motion.
"""

from dataclasses import dataclass

import numpy as np

from .constants import OMEGA_EARTH, WGS84_A, WGS84_E2
from .validation import check_vec3

OMEGA_VEC = np.array([0.0, 0.0, OMEGA_EARTH])


@dataclass(frozen=True)
class GeodeticSite:
    """A point on or above the WGS84 ellipsoid (angles in radians)."""

    latitude: float
    longitude: float
    height: float = 0.0
    id: str = ""

    def __post_init__(self):
        if not np.isfinite([self.latitude, self.longitude, self.height]).all():
            raise ValueError(f"site {self.id!r} has non-finite coordinates")
        if abs(self.latitude) > np.pi / 2 + 1e-15:
            raise ValueError(f"site {self.id!r}: |latitude| exceeds pi/2")
        # normalise longitude into (-pi, pi]
        lon = float(np.angle(np.exp(1j * self.longitude)))
        if lon == -np.pi:
            lon = np.pi
        object.__setattr__(self, "longitude", lon)

    @classmethod
    def from_degrees(cls, lat_deg, lon_deg, height_m=0.0, id=""):
        return cls(np.radians(lat_deg), np.radians(lon_deg), float(height_m), str(id))

    @classmethod
    def from_dict(cls, d):
        return cls.from_degrees(d["lat_deg"], d["lon_deg"], d.get("height_m", 0.0), d.get("id", ""))

    def to_dict(self):
        return {
            "id": self.id,
            "lat_deg": float(np.degrees(self.latitude)),
            "lon_deg": float(np.degrees(self.longitude)),
            "height_m": self.height,
        }


@dataclass(frozen=True)
class Kinematics:
    """Position and its first three time derivatives in ECI.

    Used both for ground sites (rigid Earth rotation) and for targets
    (two-body acceleration and jerk). Arrays may carry leading batch axes.
    """

    r: np.ndarray
    rdot: np.ndarray
    rddot: np.ndarray
    rdddot: np.ndarray


SiteKinematics = Kinematics


def geodetic_to_ecef(site):
    """WGS84 geodetic coordinates to Earth-fixed Cartesian position (m)."""
    slat, clat = np.sin(site.latitude), np.cos(site.latitude)
    n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * slat**2)
    return np.array(
        [
            (n + site.height) * clat * np.cos(site.longitude),
            (n + site.height) * clat * np.sin(site.longitude),
            (n * (1.0 - WGS84_E2) + site.height) * slat,
        ]
    )


def ecef_to_geodetic(r, id=""):
    """Inverse of :func:`geodetic_to_ecef` by fixed-point iteration on latitude."""
    x, y, z = check_vec3(r, "r")
    p = np.hypot(x, y)
    lon = np.arctan2(y, x)
    lat = np.arctan2(z, p * (1.0 - WGS84_E2))
    for _ in range(12):
        n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * np.sin(lat) ** 2)
        h = p * np.cos(lat) + z * np.sin(lat) - WGS84_A * np.sqrt(1.0 - WGS84_E2 * np.sin(lat) ** 2)
        lat = np.arctan2(z, p * (1.0 - WGS84_E2 * n / (n + h)))
    n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * np.sin(lat) ** 2)
    h = p * np.cos(lat) + z * np.sin(lat) - WGS84_A * np.sqrt(1.0 - WGS84_E2 * np.sin(lat) ** 2)
    return GeodeticSite(float(lat), float(lon), float(h), id)


def earth_rotation_angle(t, epoch_angle=0.0):
    return epoch_angle + OMEGA_EARTH * np.asarray(t, dtype=float)


def rot_z(angle):
    """Rotation matrices about z; ``angle`` may be an array (leading axes kept)."""
    c, s = np.cos(angle), np.sin(angle)
    zero, one = np.zeros_like(c), np.ones_like(c)
    return np.stack(
        [np.stack([c, -s, zero], -1), np.stack([s, c, zero], -1), np.stack([zero, zero, one], -1)],
        -2,
    )


def ecef_to_eci(r_ecef, t, epoch_angle=0.0):
    R = rot_z(earth_rotation_angle(t, epoch_angle))
    return np.einsum("...ij,...j->...i", R, r_ecef)


def eci_to_ecef(r_eci, t, epoch_angle=0.0):
    R = rot_z(earth_rotation_angle(t, epoch_angle))
    return np.einsum("...ji,...j->...i", R, r_eci)


def site_kinematics_eci(site, t, epoch_angle=0.0):
    """Inertial position, velocity, acceleration and jerk of a ground site.

    ``t`` may be a scalar or an array of times; outputs gain its shape as
    leading axes.
    """
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise ValueError("t must be finite")
    r = ecef_to_eci(geodetic_to_ecef(site), t, epoch_angle)
    w = np.broadcast_to(OMEGA_VEC, r.shape)
    rdot = np.cross(w, r)
    rddot = np.cross(w, rdot)
    rdddot = np.cross(w, rddot)
    return Kinematics(r, rdot, rddot, rdddot)


def sez_matrix(site, t=0.0, epoch_angle=0.0):
    """SEZ -> ECI rotation; columns are the south, east and zenith axes in ECI.

    The zenith is the ellipsoid normal (geodetic latitude).
    """
    lat = site.latitude
    lon = site.longitude + earth_rotation_angle(t, epoch_angle)
    slat, clat = np.sin(lat), np.cos(lat)
    slon, clon = np.sin(lon), np.cos(lon)
    zero = np.zeros_like(slon)
    south = np.stack([slat * clon, slat * slon, np.full_like(slon, -clat)], -1)
    east = np.stack([-slon, clon, zero], -1)
    zenith = np.stack([clat * clon, clat * slon, np.full_like(slon, slat)], -1)
    return np.stack([south, east, zenith], -1)


def to_sez(D, rho, rhodot, rhoddot, earth_rate=OMEGA_EARTH):
    """Rotate a relative ECI vector series into the site's SEZ frame.

    ``q = D^T rho``. The SEZ axes turn with the Earth, so the rates pick up
    transport terms from the frame rotation; pass ``earth_rate=0`` to get the
    plain rotated rates ``D^T rhodot`` and ``D^T rhoddot``.
    """
    rho, rhodot, rhoddot = (np.asarray(a, dtype=float) for a in (rho, rhodot, rhoddot))
    w = np.broadcast_to(np.array([0.0, 0.0, earth_rate]), rho.shape)
    w_x_rho = np.cross(w, rho)
    rel_dot = rhodot - w_x_rho
    rel_ddot = rhoddot - 2.0 * np.cross(w, rhodot) + np.cross(w, w_x_rho)

    def rot(v):
        return np.einsum("...ji,...j->...i", D, v)

    return rot(rho), rot(rel_dot), rot(rel_ddot)
