import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from orbitradar.constants import BOLTZMANN
from orbitradar.dynamics import StateVector
from orbitradar.frames import eci_to_ecef
from orbitradar.phasing import TileArray
from orbitradar.radar import detect_orbit, pulse_compress
from orbitradar.scenarios import MWA, PERTH, circular_pass, default_scene, transmitter
from orbitradar.scene import ElevationPattern, Scene
from orbitradar.sim import (
    ScenarioConfig,
    TargetSpec,
    band_limited_noise,
    channel_rng,
    echo_power,
    incident_power,
    incident_power_grid,
    integrated_snr_db,
    render_scene,
    spherical_site_position,
    synth_fm_reference,
    synthesize_track,
)

from . import oracles


# ------------------------------------------------------------------ reference signal


def test_reference_spectrum_is_band_limited():
    ref = synth_fm_reference(50e3, 0.5, 1e5, seed=1).samples[0]
    P = np.abs(np.fft.fft(ref)) ** 2
    f = np.fft.fftfreq(ref.size, 1e-5)
    inband = P[np.abs(f) < 20e3].mean()
    out = P[np.abs(f) > 26e3]
    assert 10 * np.log10(out.max() / inband + 1e-300) <= -40.0
    assert np.mean(np.abs(ref) ** 2) == pytest.approx(1.0)


def test_reference_autocorrelation_width():
    x = synth_fm_reference(50e3, 2.0, 1e5, seed=2).samples[0]
    R = [abs(np.vdot(x[: x.size - k], x[k:])) / x.size for k in range(4)]
    # sinc(B k / fs) for a flat band: 0.637 at one sample, null at two
    assert R[1] / R[0] == pytest.approx(2 / np.pi, abs=0.03)
    assert R[2] / R[0] < 0.03


def test_reference_is_deterministic_per_seed_and_stream():
    a = synth_fm_reference(50e3, 0.1, 1e5, seed=5).samples
    b = synth_fm_reference(50e3, 0.1, 1e5, seed=5).samples
    c = synth_fm_reference(50e3, 0.1, 1e5, seed=5, stream=1).samples
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_channel_streams_do_not_depend_on_draw_order():
    x1 = channel_rng(3, 1, 0).standard_normal(5)
    channel_rng(3, 1, 1).standard_normal(1000)
    x2 = channel_rng(3, 1, 0).standard_normal(5)
    np.testing.assert_array_equal(x1, x2)


def test_band_limited_noise_unit_power(rng):
    y = band_limited_noise(4096, 2e4, 1e5, rng)
    assert np.mean(np.abs(y) ** 2) == pytest.approx(1.0)


def test_reference_argument_checks():
    with pytest.raises(ValueError):
        synth_fm_reference(2e5, 0.1, 1e5, seed=0)


# ------------------------------------------------------------------ rendering


def small_cfg(scene, targets, **kw):
    kw.setdefault("cpi", 0.05)
    kw.setdefault("pulses", 51)
    return ScenarioConfig(scene, targets, **kw)


def test_zero_rcs_renders_pure_noise(perth_scene, overhead_pass):
    a = render_scene(small_cfg(perth_scene, [TargetSpec("sat", overhead_pass, rcs=0.0)], seed=4))
    b = render_scene(small_cfg(perth_scene, [], seed=4))
    np.testing.assert_array_equal(a.surveillance["perth"].samples, b.surveillance["perth"].samples)
    np.testing.assert_array_equal(a.references["perth"].samples, b.references["perth"].samples)
    assert np.var(a.surveillance["perth"].samples) == pytest.approx(1.0, rel=0.05)


def test_render_repeatable(perth_scene, overhead_pass):
    cfg = small_cfg(perth_scene, [TargetSpec("sat", overhead_pass, snr_db=0.0)], seed=9)
    a, b = render_scene(cfg), render_scene(cfg)
    np.testing.assert_array_equal(a.surveillance["perth"].samples, b.surveillance["perth"].samples)


def test_monostatic_echo_lands_on_two_way_range_bin():
    mwa_tx = transmitter(MWA)
    scene = Scene(MWA, TileArray.grid(1, 1.0), {mwa_tx.id: mwa_tx})
    x = circular_pass(MWA, 800e3, np.radians(30), np.radians(70), np.radians(20))
    cfg = small_cfg(scene, [TargetSpec("sat", x, snr_db=10.0)], noise=False)
    rs = render_scene(cfg)
    cube = pulse_compress(rs.surveillance[mwa_tx.id], rs.references[mwa_tx.id], cfg.tau, max_delay=7e-3)
    peaks = np.argmax(np.abs(cube.chi[0]), axis=0)
    truth = rs.truth.for_pair("sat", mwa_tx.id)
    # pulses whose echo comes from reference samples before the recording start cannot compress
    inside = np.arange(cfg.pulses) * cfg.sample_rate * cfg.tau >= truth.delay_samples
    assert inside.sum() > cfg.pulses // 2
    np.testing.assert_array_equal(peaks[inside], truth.delay_samples[inside])
    # independent geometry: closed-form orbit and rotating WGS84 site
    t = 0.5 * cfg.cpi
    r, _ = oracles.kepler_propagate(x.r, x.v, t - x.epoch)
    ang = oracles.OMEGA * t
    site = oracles.wgs84_ecef(MWA.latitude, MWA.longitude, MWA.height)
    site = np.array([np.cos(ang) * site[0] - np.sin(ang) * site[1], np.sin(ang) * site[0] + np.cos(ang) * site[1], site[2]])
    rho = np.linalg.norm(r - site)
    assert peaks[cfg.pulses // 2] == round(cfg.sample_rate * 2 * rho / oracles.C)


def test_truth_log_rows(perth_scene, overhead_pass):
    cfg = small_cfg(perth_scene, [TargetSpec("sat", overhead_pass, snr_db=0.0)], n_cpi=3)
    rs = render_scene(cfg)
    rows = rs.truth.cpi_rows
    assert len(rows) == 3
    pt = rs.truth.for_pair("sat", "perth")
    for k, row in enumerate(rows):
        j = k * cfg.pulses + cfg.pulses // 2
        assert row["time_s"] == pytest.approx(pt.time[j])
        assert row["delay_s"] == pt.measurements[j, 0]
        assert row["visible"]
    with pytest.raises(KeyError):
        rs.truth.for_pair("sat", "nowhere")


def test_synthesize_track_noise_statistics(perth_scene, overhead_pass):
    times = np.linspace(0.0, 30.0, 400)
    sig = np.array([1e-6, 1.0, 1e-3, 1e-3])
    clean = synthesize_track(overhead_pass, times, ["perth"] * 400, perth_scene, sig)
    noisy = synthesize_track(overhead_pass, times, ["perth"] * 400, perth_scene, sig, np.random.default_rng(0))
    d = (noisy.z - clean.z) / sig
    d[:, 2] = np.angle(np.exp(1j * d[:, 2] * sig[2])) / sig[2]
    np.testing.assert_allclose(d.std(axis=0), 1.0, atol=0.1)


def test_scenario_config_checks(perth_scene):
    with pytest.raises(ValueError):
        ScenarioConfig(perth_scene, [], pulses=400)
    with pytest.raises(ValueError):
        ScenarioConfig(perth_scene, [], cpi=1e-3, pulses=1001)
    with pytest.raises(ValueError):
        ScenarioConfig(perth_scene, [], sample_rate=1e4)


# ------------------------------------------------------------------ link budget


def test_incident_power_reference_value():
    tx = transmitter(PERTH)
    ill = incident_power_grid(tx, [0.0], [1000e3])
    assert float(ill.power[0, 0]) == pytest.approx(7.958e-9, rel=5e-4)
    assert ill.power.shape == (1, 1) and not ill.shadowed[0, 0]


@given(st.floats(300e3, 3000e3), st.floats(1.1, 4.0))
def test_incident_power_inverse_square(d, k):
    tx = transmitter(PERTH)
    p = spherical_site_position(tx.site)
    up = p / np.linalg.norm(p)
    a = incident_power(tx, p + d * up).power
    b = incident_power(tx, p + k * d * up).power
    assert a / b == pytest.approx(k * k, rel=1e-9)


def test_pattern_scales_incident_power():
    pat = ElevationPattern.illustrative_fm()
    tx = transmitter(PERTH, pattern=pat)
    ill = incident_power_grid(tx, np.linspace(100e3, 2700e3, 300), [500e3])
    lit = ~ill.shadowed[:, 0]
    norm = ill.power[lit, 0] * 4 * np.pi * ill.range[lit, 0] ** 2 / tx.eirp
    np.testing.assert_allclose(norm, pat.gain(ill.elevation[lit, 0]), rtol=1e-12)
    assert pat.gain(np.radians(np.linspace(-90, 90, 3601))).max() == pytest.approx(1.0)


def test_shadowing_beyond_horizon():
    tx = transmitter(PERTH)
    ill = incident_power_grid(tx, [0.0, 1500e3, 3000e3], [200e3, 2000e3])
    assert ill.shadowed.tolist() == [[False, False], [False, False], [True, False]]
    assert ill.power[2, 0] == 0.0


def test_echo_power_closed_form():
    tx = transmitter(PERTH)
    p = spherical_site_position(MWA)
    up = p / np.linalg.norm(p)
    tgt = p + 800e3 * up
    S = incident_power(tx, tgt).power
    Pr = echo_power(tx, tgt, 2.0, MWA, 20.0)
    assert Pr == pytest.approx(S * 2.0 / (4 * np.pi * 800e3**2) * 20.0, rel=1e-12)


def test_echo_power_scaling():
    tx = transmitter(PERTH)
    p = spherical_site_position(MWA)
    up = p / np.linalg.norm(p)
    assert echo_power(tx, p + 800e3 * up, 0.0, MWA, 20.0) == 0.0
    # same target, receiver aperture seen from half the range
    near = echo_power(tx, p + 400e3 * up, 1.0, MWA, 20.0) / incident_power(tx, p + 400e3 * up).power
    far = echo_power(tx, p + 800e3 * up, 1.0, MWA, 20.0) / incident_power(tx, p + 800e3 * up).power
    assert near / far == pytest.approx(4.0, rel=1e-9)


def test_pattern_validation():
    with pytest.raises(ValueError):
        ElevationPattern((0.0, 0.0), (0.0, 0.0))
    with pytest.raises(ValueError):
        ElevationPattern((0.0, 10.0), (0.0, 3.0))
    assert ElevationPattern.from_json("isotropic").gain(0.3) == 1.0


# ------------------------------------------------------------------ full-chain SNR closure


def test_link_budget_predicts_detected_snr():
    scene = default_scene((PERTH,))
    x = circular_pass(MWA, 800e3, np.radians(30), np.radians(70), np.radians(20))
    cfg = ScenarioConfig(scene, [TargetSpec("sat", x)], cpi=0.3, pulses=4001, start_time=-0.15, seed=21)
    tx = scene.tx("perth")
    tgt = eci_to_ecef(x.r, 0.0)
    unit = echo_power(tx, tgt, 1.0, MWA, cfg.tile_area)
    # choose the cross-section that the budget says yields 28 dB after integration
    rcs = 10 ** ((28.0 - integrated_snr_db(unit, cfg.noise_temperature, cfg.cpi, len(scene.tiles))) / 10)
    cfg.targets = [TargetSpec("sat", x, rcs=rcs)]
    predicted = integrated_snr_db(echo_power(tx, tgt, rcs, MWA, cfg.tile_area), cfg.noise_temperature, cfg.cpi, len(scene.tiles))
    rs = render_scene(cfg)
    d = rs.truth.for_pair("sat", "perth").measurements[:, 0]
    cube = pulse_compress(rs.surveillance["perth"], rs.references["perth"], cfg.tau, max_delay=d.max() + 3e-4, min_delay=d.min() - 3e-4)
    det = detect_orbit({"perth": cube}, x, scene)["perth"].detection
    assert det is not None
    assert det.snr_db == pytest.approx(predicted, abs=2.0)
    assert predicted == pytest.approx(28.0)
    assert BOLTZMANN > 0
