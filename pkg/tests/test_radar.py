import numpy as np
import pytest
from sklearn.base import clone

from orbitradar.radar import (
    DopplerSpectrum,
    IQRecording,
    OrbitMatchedDetector,
    PulseCube,
    ca_cfar,
    cfar_false_alarm_probability,
    cfar_floor,
    detect_orbit,
    doppler_spectrum,
    match_hypothesis,
    matched_range_series,
    pulse_compress,
    pulse_edges,
)
from orbitradar.dynamics import StateVector
from orbitradar.phasing import PhaseMatrix

from . import oracles


def noise(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def rec(x, B=1e3, t0=0.0):
    return IQRecording(np.atleast_2d(x), B, t0)


# ------------------------------------------------------------------ recordings


def test_recording_validation():
    with pytest.raises(ValueError):
        IQRecording(np.zeros((2, 4), complex), 1e3, 0.0, ("a",))
    with pytest.raises(ValueError):
        IQRecording(np.zeros((1, 4), complex), 0.0)
    r = IQRecording(np.zeros((2, 10), complex), 10.0)
    assert r.channel_ids == ("ch0", "ch1") and r.duration == 1.0


def test_segment_rounds_to_nearest_sample():
    r = IQRecording(np.arange(20)[None, :].astype(complex), 10.0, 1.0)
    s = r.segment(1.26, 0.5)
    assert s.samples[0, 0] == 3 and s.n_samples == 5
    assert s.start_time == pytest.approx(1.3)
    with pytest.raises(ValueError):
        r.segment(2.9, 0.5)


def test_pulse_edges_fractional():
    e = pulse_edges(4, 7.5e-5, 1e5)
    np.testing.assert_array_equal(e, [0, 7, 15, 22, 30])


# ------------------------------------------------------------------ pulse compression


def test_autocorrelation_peak_at_zero(rng):
    x = noise(rng, 8 * 51)
    cube = pulse_compress(rec(x), rec(x), 8e-3, max_delay=5e-3)
    assert cube.chi.shape == (1, 5, 51)
    assert np.all(np.argmax(np.abs(cube.chi[0]), axis=0) == 0)


def test_shift_property(rng):
    k, L, M = 3, 16, 41
    r = noise(rng, L * M)
    s = np.concatenate([np.zeros(k), r[:-k]])
    cube = pulse_compress(rec(s), rec(r), L * 1e-3, max_delay=8e-3)
    mag = np.abs(cube.chi[0])
    assert np.all(np.argmax(mag[:, 1:], axis=0) == k)
    for m in range(1, M):
        seg = r[m * L - k : (m + 1) * L - k]
        assert mag[k, m] == pytest.approx(np.sum(np.abs(seg) ** 2), rel=1e-12)


def test_noise_floor_level(rng):
    # 1000 independent pulses of B tau = 8 samples, unit-variance inputs
    L, M = 8, 1001
    s, r = noise(rng, L * M), noise(rng, L * M)
    cube = pulse_compress(rec(s), rec(r), L * 1e-3, max_delay=4e-3)
    assert np.mean(np.abs(cube.chi) ** 2) == pytest.approx(L, rel=0.05)


def test_delay_bin_count_and_window(rng):
    x = noise(rng, 1000)
    cube = pulse_compress(rec(x), rec(x), 10e-3, max_delay=7.5e-3)
    assert cube.n_delay_bins == int(np.ceil(1e3 * 7.5e-3))
    sub = pulse_compress(rec(x), rec(x), 10e-3, max_delay=7.5e-3, min_delay=3e-3)
    np.testing.assert_allclose(sub.chi, cube.chi[:, 3:, :])
    assert sub.first_bin == 3
    np.testing.assert_array_equal(sub.delay_bins([3e-3, 5e-3]), [0, 2])


def test_pulse_compress_errors(rng):
    x = noise(rng, 100)
    with pytest.raises(ValueError, match="sample rates"):
        pulse_compress(IQRecording(x[None], 1e3), IQRecording(x[None], 2e3), 1e-2)
    with pytest.raises(ValueError, match="time aligned"):
        pulse_compress(rec(x, t0=0.0), rec(x, t0=0.5), 1e-2)
    with pytest.raises(ValueError, match="samples"):
        pulse_compress(rec(x), rec(x), 1e-2, M=11)
    with pytest.raises(ValueError):
        pulse_compress(rec(x), rec(x), 1e-2, M=4)


def test_multichannel_matches_single(rng):
    r = noise(rng, 400)
    s = noise(rng, (3, 400))
    cube = pulse_compress(IQRecording(s, 1e3), rec(r), 1e-2, max_delay=5e-3)
    one = pulse_compress(rec(s[1]), rec(r), 1e-2, max_delay=5e-3)
    np.testing.assert_allclose(cube.chi[1], one.chi[0])


# ------------------------------------------------------------------ matched range series


def make_cube(chi, tau=1e-3, B=1e3):
    return PulseCube(np.asarray(chi, complex), tau, B, 0.0, 0.0)


def test_single_tile_constant_delay_returns_row(rng):
    chi = noise(rng, (1, 6, 9))
    out = matched_range_series(make_cube(chi), np.ones((1, 9)), 2e-3)
    np.testing.assert_array_equal(out, chi[0, 2])


def test_identical_tiles_sum_coherently(rng):
    row = noise(rng, (1, 4, 9))
    chi = np.repeat(row, 5, axis=0)
    out = matched_range_series(make_cube(chi), np.ones((5, 9)), 1e-3)
    np.testing.assert_allclose(out, 5 * row[0, 1])


def test_per_pulse_delay_and_fixed_mode(rng):
    chi = noise(rng, (1, 6, 5))
    cube = make_cube(chi)
    delays = np.array([1, 2, 3, 4, 5]) * 1e-3
    out = matched_range_series(cube, np.ones((1, 5)), delays)
    np.testing.assert_array_equal(out, chi[0, [1, 2, 3, 4, 5], np.arange(5)])
    fixed = matched_range_series(cube, np.ones((1, 5)), delays, range_migration=False)
    np.testing.assert_array_equal(fixed, chi[0, 3])
    via_fn = matched_range_series(cube, PhaseMatrix(np.ones((1, 5)), 1e-3, 5), lambda t: 3e-3 + t)
    np.testing.assert_array_equal(via_fn, out)


def test_delay_outside_cube_lists_pulses(rng):
    cube = make_cube(noise(rng, (1, 4, 5)))
    with pytest.raises(ValueError, match=r"pulses \[3, 4\]"):
        matched_range_series(cube, np.ones((1, 5)), [1e-3, 1e-3, 2e-3, 9e-3, 9e-3])
    with pytest.raises(ValueError, match="shape"):
        matched_range_series(cube, np.ones((2, 5)), 1e-3)


# ------------------------------------------------------------------ Doppler spectrum


def test_dc_spectrum():
    sp = doppler_spectrum(np.ones(101), 21, tau=1e-2)
    assert sp.power[10] == pytest.approx(101**2)
    assert sp.bins[10] == 0
    np.testing.assert_allclose(np.delete(sp.power, 10), 0.0, atol=1e-18 * 101**2 + 1e-9)
    assert sp.bin_spacing == pytest.approx(1 / (101 * 1e-2))


@pytest.mark.parametrize("k", [-7, 0, 3, 10])
def test_pure_tone(k):
    M = 101
    m = np.arange(-50, 51)
    sp = doppler_spectrum(np.exp(2j * np.pi * k * m / M), 21)
    i = int(np.argmax(sp.power))
    assert sp.bins[i] == k
    assert sp.power[i] == pytest.approx(M**2)


def test_pruned_equals_full_transform(rng):
    x = noise(rng, 4001)
    sp = doppler_spectrum(x, 201)
    full = oracles.centered_dft(x, sp.bins)
    np.testing.assert_allclose(sp.power, full, rtol=1e-9)


def test_spectrum_argument_checks():
    with pytest.raises(ValueError):
        doppler_spectrum(np.ones(10), 5)
    with pytest.raises(ValueError):
        doppler_spectrum(np.ones(11), 4)
    with pytest.raises(ValueError):
        doppler_spectrum(np.ones(11), 13)


# ------------------------------------------------------------------ CFAR


def test_flat_spectrum_has_no_detections():
    assert ca_cfar(DopplerSpectrum(np.ones(201), np.arange(-100, 101))) == []


def test_tone_twenty_db_above_floor(rng):
    p = rng.exponential(1.0, 201)
    p[130] = 0.0
    cells, floor = cfar_floor(p, 4, 32)
    p[130] = 100.0 * floor[cells == 130][0]
    hits = ca_cfar(DopplerSpectrum(p, np.arange(-100, 101)), threshold_db=16.0)
    assert len(hits) == 1
    assert abs(hits[0].bin - 30) <= 1
    assert hits[0].snr_db == pytest.approx(20.0, abs=1e-9)


def test_cfar_floor_is_two_sided_mean():
    p = np.arange(100, dtype=float)
    cells, floor = cfar_floor(p, 2, 5)
    i = 50
    lead = p[i - 7 : i - 2]
    lag = p[i + 3 : i + 8]
    assert floor[cells == i][0] == pytest.approx(np.mean(np.concatenate([lead, lag])))
    assert cells[0] == 7 and cells[-1] == 92


def test_degenerate_cfar_window():
    with pytest.raises(ValueError):
        ca_cfar(np.ones(50), guard=4, train=32)


def test_default_threshold_is_sixteen_db():
    import inspect

    assert inspect.signature(ca_cfar).parameters["threshold_db"].default == 16.0
    assert OrbitMatchedDetector().threshold_db == 16.0


def test_false_alarm_design_formula():
    # (1 + alpha / N)^-N tends to exp(-alpha) as N grows
    assert cfar_false_alarm_probability(10**7, 10.0) == pytest.approx(np.exp(-10.0), rel=1e-5)


@pytest.mark.parametrize("thr", [4.0, 6.0, 8.0])
def test_cfar_calibration_exponential_noise(rng, thr):
    p = rng.exponential(1.0, (4000, 201))
    count = 0
    for row in p:
        count += len(ca_cfar(row, 4, 32, thr))
    design = cfar_false_alarm_probability(64, thr) * 4000 * (201 - 72)
    assert design / 2 <= count <= design * 2


# ------------------------------------------------------------------ end to end on a rendered scene


@pytest.fixture(scope="module")
def rendered():
    from orbitradar.scenarios import MWA, PERTH, circular_pass, default_scene
    from orbitradar.sim import ScenarioConfig, TargetSpec, render_scene

    scene = default_scene((PERTH,))
    x = circular_pass(MWA, 800e3, np.radians(30), np.radians(60), np.radians(20))
    cfg = ScenarioConfig(scene, [TargetSpec("sat", x, snr_db=-20.0)], cpi=0.3, pulses=4001, seed=11, start_time=-0.15)
    rs = render_scene(cfg)
    d = rs.truth.for_pair("sat", "perth").measurements[:, 0]
    cube = pulse_compress(rs.surveillance["perth"], rs.references["perth"], cfg.tau, max_delay=d.max() + 3e-4, min_delay=d.min() - 3e-4)
    return scene, x, cube, rs


def test_matched_hypothesis_detects_at_zero_offset(rendered):
    scene, x, cube, rs = rendered
    res = detect_orbit({"perth": cube}, x, scene, "truth")["perth"]
    assert res.detection is not None and res.reason is None
    assert abs(res.detection.bin) <= 1
    assert res.detection.snr_db >= 16.0
    m = res.detection.measurement
    truth = rs.truth.cpi_rows[0]
    assert m.t_D == pytest.approx(truth["delay_s"], rel=1e-9)
    assert abs(m.f_D - truth["doppler_hz"]) <= 1.0 / cube.cpi
    assert m.tx_id == "perth" and m.hypothesis_id == "truth"


def test_cross_track_offset_loses_gain(rendered):
    scene, x, cube, _ = rendered
    base = detect_orbit({"perth": cube}, x, scene)["perth"]
    h = np.cross(x.r, x.v)
    off = StateVector(x.r + 5e3 * h / np.linalg.norm(h), x.v, x.epoch)
    res = detect_orbit({"perth": cube}, off, scene)["perth"]
    assert res.detection is None or res.detection.snr_db <= base.detection.snr_db - 3.0


def test_truth_beats_one_bin_velocity_perturbation():
    from orbitradar.scenarios import MWA, PERTH, circular_pass, default_scene
    from orbitradar.sim import ScenarioConfig, TargetSpec, render_scene

    scene = default_scene((PERTH,), n_side=2)
    x = circular_pass(MWA, 700e3, np.radians(200), np.radians(50), np.radians(70))
    cfg = ScenarioConfig(scene, [TargetSpec("sat", x, snr_db=0.0)], cpi=0.3, pulses=4001, start_time=-0.15, noise=False)
    rs = render_scene(cfg)
    d = rs.truth.for_pair("sat", "perth").measurements[:, 0]
    cube = pulse_compress(rs.surveillance["perth"], rs.references["perth"], cfg.tau, max_delay=d.max() + 3e-4, min_delay=d.min() - 3e-4)
    peak = lambda s: match_hypothesis(cube, s, scene, "perth").spectrum.power.max()  # noqa: E731
    p0 = peak(x)
    lam = scene.tx("perth").wavelength
    dv = lam / cube.cpi  # one Doppler bin of bistatic range rate
    for axis in np.eye(3):
        for sgn in (-1, 1):
            assert peak(StateVector(x.r, x.v + sgn * dv * axis, x.epoch)) <= p0 * (1 + 1e-9)


def test_range_migration_beats_fixed_bin():
    from orbitradar.scenarios import MWA, PERTH, circular_pass, default_scene
    from orbitradar.sim import ScenarioConfig, TargetSpec, render_scene

    scene = default_scene((PERTH,), n_side=2)
    x = circular_pass(MWA, 800e3, np.radians(30), np.radians(40), np.radians(20))
    cfg = ScenarioConfig(scene, [TargetSpec("sat", x, snr_db=-15.0)], cpi=3.0, pulses=4001, start_time=-1.5, seed=2)
    rs = render_scene(cfg)
    d = rs.truth.for_pair("sat", "perth").measurements[:, 0]
    assert (d.max() - d.min()) * cfg.sample_rate > 1.0
    cube = pulse_compress(rs.surveillance["perth"], rs.references["perth"], cfg.tau, max_delay=d.max() + 3e-4, min_delay=d.min() - 3e-4)
    mig = match_hypothesis(cube, x, scene, "perth", range_migration=True)
    fixed = match_hypothesis(cube, x, scene, "perth", range_migration=False)
    assert mig.peak_snr_db >= fixed.peak_snr_db + 3.0


def test_below_horizon_hypothesis_skipped(rendered):
    scene, x, cube, _ = rendered
    res = detect_orbit({"perth": cube}, StateVector(-x.r, -x.v, x.epoch), scene)["perth"]
    assert res.detection is None and "horizon" in res.reason


def test_noise_only_false_alarms_match_design(overhead_pass):
    """Noise-only cubes through the full matched chain over 10^4 trials track the CFAR design."""
    from orbitradar.phasing import hypothesis_geometry
    from orbitradar.scenarios import PERTH, default_scene

    scene = default_scene((PERTH,), n_side=2)
    rng = np.random.default_rng(5)
    tx = scene.tx("perth")
    M, tau, B, W, trials = 401, 1e-3, 1e5, 201, 10_000
    geo = hypothesis_geometry(overhead_pass, 0.2, tx.site, scene.receiver, scene.tiles, tx.wavelength)
    b0 = np.floor(geo.delay * B) - 2
    counts = {16.0: 0, 8.63: 0}
    for _ in range(trials):
        cube = PulseCube(noise(rng, (len(scene.tiles), 6, M)), tau, B, b0 / B, 0.0)
        spec = match_hypothesis(cube, overhead_pass, scene, "perth", window_bins=W).spectrum
        for thr in counts:
            counts[thr] += len(ca_cfar(spec, 4, 32, thr))
    cells = trials * (W - 72)
    design = cfar_false_alarm_probability(64, 8.63) * cells
    assert design / 2 <= counts[8.63] <= design * 2
    # design expectation at 16 dB is ~5e-8, so the factor-two band admits only zero
    assert cfar_false_alarm_probability(64, 16.0) * cells < 1e-6
    assert counts[16.0] == 0


# ------------------------------------------------------------------ estimator API


def test_detector_estimator_api(rendered):
    scene, x, cube, _ = rendered
    det = OrbitMatchedDetector(n_jobs=2)
    assert det.get_params()["threshold_db"] == 16.0
    assert clone(det).get_params() == det.get_params()
    with pytest.raises(Exception):
        det.predict([x])
    det.fit({"perth": cube}, scene)
    assert not det.cubes_["perth"].chi.flags.writeable
    serial = OrbitMatchedDetector(n_jobs=1).fit({"perth": cube}, scene)
    hyps = {"a": x, "b": StateVector(x.r, x.v * 1.001, x.epoch)}
    par, ser = det.match(hyps), serial.match(hyps)
    assert par["a"]["perth"].peak_snr_db == ser["a"]["perth"].peak_snr_db
    assert set(det.timings_) == {"a", "b"}
    found = det.predict({"truth": x})
    assert len(found) == 1 and found[0].hypothesis_id == "truth"


def test_detector_rejects_small_window():
    with pytest.raises(ValueError):
        OrbitMatchedDetector(window_bins=51).fit({}, None)


def test_off_grid_target_found_by_iod_grid():
    from orbitradar.od import iod_candidates
    from orbitradar.scenarios import MWA, PERTH, circular_pass, default_scene
    from orbitradar.sim import ScenarioConfig, TargetSpec, render_scene

    scene = default_scene((PERTH,), n_side=2)
    # 3 deg off the heading grid; altitude within one range cell of a grid node
    x = circular_pass(MWA, 800.4e3, np.radians(30), np.radians(70), np.radians(23))
    cfg = ScenarioConfig(scene, [TargetSpec("sat", x, snr_db=-10.0)], cpi=0.3, pulses=4001, start_time=-0.15, seed=3)
    rs = render_scene(cfg)
    cube = pulse_compress(rs.surveillance["perth"], rs.references["perth"], cfg.tau, max_delay=8e-3, min_delay=4e-3)
    cands = iod_candidates(np.radians(30), np.radians(70), np.arange(700e3, 901e3, 50e3), np.radians(np.arange(0, 360, 10)), MWA)
    found = OrbitMatchedDetector().fit({"perth": cube}, scene).predict({f"g{i}": c for i, c in enumerate(cands)})
    assert found
    truth = rs.truth.cpi_rows[0]
    best = max(found, key=lambda d: d.snr_db)
    assert abs(best.measurement.t_D - truth["delay_s"]) < 2e-5
