"""Ready-made sites and pass geometries for examples and tests.

Coordinates are approximate and serve as free scenario parameters.
"""

from .frames import GeodeticSite
from .od import iod_candidates
from .phasing import TileArray
from .scene import ElevationPattern, Scene, TransmitterModel

MWA = GeodeticSite.from_degrees(-26.7033, 116.6708, 377.0, "MWA")
GERALDTON = GeodeticSite.from_degrees(-28.77, 114.61, 50.0, "geraldton")
PERTH = GeodeticSite.from_degrees(-31.95, 115.86, 50.0, "perth")
ALBANY = GeodeticSite.from_degrees(-35.02, 117.88, 50.0, "albany")
MOUNT_GAMBIER = GeodeticSite.from_degrees(-37.83, 140.78, 50.0, "mount_gambier")


def transmitter(site, eirp=1e5, carrier=98e6, bandwidth=50e3, pattern=None):
    return TransmitterModel(site, eirp, pattern or ElevationPattern.isotropic(), carrier, bandwidth)


def default_scene(tx_sites=(PERTH,), n_side=4, spacing=60.0, carriers=None, epoch_angle=0.0):
    carriers = carriers or [98e6 + 2e6 * i for i in range(len(tx_sites))]
    txs = {s.id: transmitter(s, carrier=f) for s, f in zip(tx_sites, carriers)}
    return Scene(MWA, TileArray.grid(n_side, spacing), txs, epoch_angle)


def circular_pass(receiver, altitude, azimuth, elevation, heading, time=0.0, epoch_angle=0.0):
    """Circular orbit that sits at (azimuth, elevation) from ``receiver`` at ``time``.

    ``heading`` is the velocity direction (rad from local north toward east)
    in the horizontal plane at the target.
    """
    return iod_candidates(azimuth, elevation, altitude, heading, receiver, time, epoch_angle)[0]
