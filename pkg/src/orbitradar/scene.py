"""Transmitters, receiver and tile layout shared by simulation, detection and OD."""

from dataclasses import dataclass, field

import numpy as np

from .constants import SPEED_OF_LIGHT
from .frames import GeodeticSite, site_kinematics_eci
from .phasing import TileArray


@dataclass(frozen=True)
class ElevationPattern:
    """Piecewise-linear transmit gain (dB re peak) against elevation (deg)."""

    elevation_deg: tuple
    gain_db: tuple

    def __post_init__(self):
        el = np.asarray(self.elevation_deg, dtype=float)
        g = np.asarray(self.gain_db, dtype=float)
        if el.ndim != 1 or el.size != g.size or el.size < 1:
            raise ValueError("pattern needs matching elevation and gain tables")
        if np.any(np.diff(el) <= 0):
            raise ValueError("pattern elevations must be strictly increasing")
        if np.any(g > 1e-12):
            raise ValueError("pattern gains are relative to peak and must be <= 0 dB")
        object.__setattr__(self, "elevation_deg", tuple(el.tolist()))
        object.__setattr__(self, "gain_db", tuple(g.tolist()))

    def gain(self, elevation_rad):
        """Linear power gain at the given elevation(s)."""
        db = np.interp(np.degrees(elevation_rad), self.elevation_deg, self.gain_db)
        return 10.0 ** (db / 10.0)

    @classmethod
    def isotropic(cls):
        return cls((-90.0, 90.0), (0.0, 0.0))

    @classmethod
    def illustrative_fm(cls):
        """Illustrative only: a down-tilted main lobe with a -15 dB sidelobe shelf.

        Not measured data; roughly the shape of a typical broadcast array.
        """
        return cls(
            (-90.0, -10.0, -3.0, -1.0, 1.0, 3.0, 5.0, 8.0, 15.0, 25.0, 40.0, 90.0),
            (-20.0, -6.0, -1.0, 0.0, -1.5, -6.0, -15.0, -15.0, -15.0, -18.0, -22.0, -30.0),
        )

    def to_json(self):
        return [[e, g] for e, g in zip(self.elevation_deg, self.gain_db)]

    @classmethod
    def from_json(cls, spec):
        if spec is None or spec == "isotropic":
            return cls.isotropic()
        if spec == "illustrative_fm":
            return cls.illustrative_fm()
        table = np.asarray(spec, dtype=float)
        return cls(tuple(table[:, 0]), tuple(table[:, 1]))


@dataclass(frozen=True)
class TransmitterModel:
    site: GeodeticSite
    eirp: float = 1e5
    pattern: ElevationPattern = field(default_factory=ElevationPattern.isotropic)
    carrier: float = 98e6
    bandwidth: float = 50e3

    def __post_init__(self):
        if not self.eirp > 0:
            raise ValueError("eirp must be positive")
        if not self.carrier > 0:
            raise ValueError("carrier must be positive")

    @property
    def id(self):
        return self.site.id

    @property
    def wavelength(self):
        return SPEED_OF_LIGHT / self.carrier


@dataclass(frozen=True)
class Scene:
    """Receiving array plus the illuminators in play."""

    receiver: GeodeticSite
    tiles: TileArray
    transmitters: dict
    epoch_angle: float = 0.0

    def tx(self, tx_id):
        try:
            return self.transmitters[tx_id]
        except KeyError:
            raise KeyError(f"unknown transmitter {tx_id!r}") from None

    def rx_kinematics(self, t):
        return site_kinematics_eci(self.receiver, t, self.epoch_angle)

    def tx_kinematics(self, tx_id, t):
        return site_kinematics_eci(self.tx(tx_id).site, t, self.epoch_angle)

    def beamwidth(self, tx_id):
        """Approximate array beamwidth (rad), wavelength over aperture."""
        ap = self.tiles.aperture
        lam = self.tx(tx_id).wavelength
        return lam / ap if ap > 0 else np.pi
