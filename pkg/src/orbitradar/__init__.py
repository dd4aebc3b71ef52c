"""Passive bistatic radar toolkit for space surveillance.

Simulates FM-illuminated satellite echoes on a tiled receiving array,
detects them by orbit-matched coherent integration and fits orbits by
batch least squares.
"""

from .dynamics import StateVector, bistatic_delay, bistatic_doppler, propagate, propagate_states, slant_series
from .errors import ConfigError, ConvergenceError, GeometryError, ReentryWarning, UnderdeterminedError
from .frames import GeodeticSite, Kinematics, SiteKinematics, geodetic_to_ecef, sez_matrix, site_kinematics_eci, to_sez
from .od import (
    BatchOrbitFitter,
    Measurement,
    OrbitEstimate,
    Track,
    batch_least_squares,
    default_sigmas,
    doppler_plane_velocity,
    iod_candidates,
    predict_measurements,
)
from .phasing import TileArray, hypothesis_geometry, phase_matrix
from .radar import IQRecording, OrbitMatchedDetector, ca_cfar, detect_orbit, doppler_spectrum, pulse_compress
from .scene import ElevationPattern, Scene, TransmitterModel
from .sim import ScenarioConfig, TargetSpec, echo_power, incident_power, render_scene, synth_fm_reference

__version__ = "0.1.0"
