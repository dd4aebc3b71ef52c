"""Physical constants shared across the package (SI units)."""

MU_EARTH = 3.986004418e14  # m^3 / s^2
SPEED_OF_LIGHT = 299792458.0  # m / s
OMEGA_EARTH = 7.2921159e-5  # rad / s

WGS84_A = 6378137.0  # m
WGS84_F = 1.0 / 298.257223563
WGS84_B = WGS84_A * (1.0 - WGS84_F)
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)

# Spherical Earth, used only by the link-budget model.
R_EARTH_MEAN = 6371000.0  # m

BOLTZMANN = 1.380649e-23  # J / K
