"""Orbit determination from delay / Doppler / azimuth / elevation tracks."""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .constants import SPEED_OF_LIGHT, WGS84_A
from .dynamics import StateVector, azel_unit_vector, circular_speed, propagate_states
from .errors import ConvergenceError, GeometryError, UnderdeterminedError
from .frames import sez_matrix, site_kinematics_eci
from .validation import check_vec3

N_OBS = 4  # delay, Doppler, azimuth, elevation
STATE_SCALE = np.array([1e6, 1e6, 1e6, 1e3, 1e3, 1e3])


@dataclass(frozen=True)
class Measurement:
    """One bistatic detection: ``z = [t_D, f_D, theta, phi]`` at ``time``."""

    t_D: float
    f_D: float
    theta: float
    phi: float
    time: float
    tx_id: str
    sigma: np.ndarray = field(default_factory=lambda: np.ones(N_OBS))
    snr_db: float = float("nan")
    hypothesis_id: str = ""

    def __post_init__(self):
        sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), (N_OBS,)).copy()
        if np.any(~(sigma > 0)):
            raise ValueError("measurement sigmas must all be positive")
        object.__setattr__(self, "sigma", sigma)

    def as_vector(self):
        return np.array([self.t_D, self.f_D, self.theta, self.phi])


class Track:
    """Time-ordered measurements, optionally tied to the hypothesis that produced them."""

    def __init__(self, measurements, hypothesis=None):
        ms = sorted(measurements, key=lambda m: (m.time, m.tx_id))
        last = {}
        for m in ms:
            if m.tx_id in last and not m.time > last[m.tx_id]:
                raise ValueError(f"duplicate measurement time {m.time} for transmitter {m.tx_id!r}")
            last[m.tx_id] = m.time
        self.measurements = ms
        self.hypothesis = hypothesis

    def __len__(self):
        return len(self.measurements)

    def __iter__(self):
        return iter(self.measurements)

    def __add__(self, other):
        return Track(self.measurements + list(other), self.hypothesis)

    @property
    def times(self):
        return np.array([m.time for m in self.measurements])

    @property
    def tx_ids(self):
        return [m.tx_id for m in self.measurements]

    @property
    def z(self):
        return np.array([m.as_vector() for m in self.measurements]).reshape(-1, N_OBS)

    @property
    def sigma(self):
        return np.array([m.sigma for m in self.measurements]).reshape(-1, N_OBS)

    def select(self, tx_ids):
        keep = set([tx_ids] if isinstance(tx_ids, str) else tx_ids)
        return Track([m for m in self.measurements if m.tx_id in keep], self.hypothesis)

    def prefix(self, n):
        return Track(self.measurements[:n], self.hypothesis)


@dataclass
class OrbitEstimate:
    x: StateVector
    covariance: np.ndarray
    residual_rms: float
    iterations: int
    measurements_used: int
    residuals: np.ndarray = None

    @property
    def position_sigma(self):
        return np.sqrt(np.diag(self.covariance)[:3])

    @property
    def velocity_sigma(self):
        return np.sqrt(np.diag(self.covariance)[3:])

    def to_dict(self):
        return {
            "state": {"r": self.x.r.tolist(), "v": self.x.v.tolist(), "epoch": self.x.epoch},
            "covariance": self.covariance.tolist(),
            "residual_rms": float(self.residual_rms),
            "iterations": int(self.iterations),
            "measurements_used": int(self.measurements_used),
        }

    @classmethod
    def from_dict(cls, d):
        s = d["state"]
        return cls(
            StateVector(s["r"], s["v"], s["epoch"]),
            np.asarray(d["covariance"], dtype=float),
            d["residual_rms"],
            d["iterations"],
            d["measurements_used"],
        )


def default_sigmas(sample_rate, cpi, beamwidth, snr_db):
    """Resolution-derived 1-sigma errors for ``[t_D, f_D, theta, phi]``.

    Delay from the bandwidth, Doppler from the CPI length and angles from the
    beamwidth shrunk by the square root of the detection SNR.
    """
    snr = 10.0 ** (np.asarray(snr_db, dtype=float) / 10.0)
    ang = beamwidth / (2.0 * np.sqrt(snr))
    return np.array([1.0 / (2.0 * sample_rate), 1.0 / (2.0 * cpi), ang, ang])


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def _measurements_from_states(Y, times, tx_ids, scene):
    """Predicted ``[t_D, f_D, theta, phi]`` rows for target states ``Y[..., k, 6]``."""
    times = np.asarray(times, dtype=float)
    r, v = Y[..., :3], Y[..., 3:]
    rx = site_kinematics_eci(scene.receiver, times, scene.epoch_angle)
    out = np.empty(Y.shape[:-1] + (N_OBS,))
    tx_ids = np.asarray(tx_ids)
    rho_rx = r - rx.r
    rng_rx = np.linalg.norm(rho_rx, axis=-1)
    rr_rx = np.sum(rho_rx * (v - rx.rdot), axis=-1) / rng_rx
    for tx_id in np.unique(tx_ids):
        sel = tx_ids == tx_id
        tx = scene.tx(str(tx_id))
        txk = site_kinematics_eci(tx.site, times[sel], scene.epoch_angle)
        rho_tx = r[..., sel, :] - txk.r
        rng_tx = np.linalg.norm(rho_tx, axis=-1)
        bl = np.linalg.norm(rx.r[sel] - txk.r, axis=-1)
        out[..., sel, 0] = (rng_rx[..., sel] + rng_tx - bl) / SPEED_OF_LIGHT
        rr_tx = np.sum(rho_tx * (v[..., sel, :] - txk.rdot), axis=-1) / rng_tx
        out[..., sel, 1] = -(rr_rx[..., sel] + rr_tx) / tx.wavelength
    D = sez_matrix(scene.receiver, times, scene.epoch_angle)
    q = np.einsum("kji,...kj->...ki", D, rho_rx)
    horiz = np.hypot(q[..., 0], q[..., 1])
    if np.any(horiz == 0):
        bad = np.unique(np.nonzero(horiz == 0)[-1])
        raise GeometryError(f"zenith-singular azimuth at time(s) {times[bad].tolist()}")
    out[..., 2] = np.mod(np.arctan2(q[..., 1], -q[..., 0]), 2.0 * np.pi)
    out[..., 3] = np.arctan2(q[..., 2], horiz)
    return out


def predict_measurements(x, times, tx_ids, scene):
    """Model measurements ``f(x)`` for each (time, transmitter) pair, shape ``(k, 4)``."""
    times = np.asarray(times, dtype=float)
    uniq, inv = np.unique(times, return_inverse=True)
    Y = propagate_states(x.as_array(), uniq - x.epoch)[inv]
    return _measurements_from_states(Y, times, tx_ids, scene)


def jacobian(x0, times, tx_ids, scene, step_pos=1.0, step_vel=1e-3, return_prediction=False):
    """Central-difference Jacobian ``d f / d x`` of shape ``(4k, 6)``.

    The nominal and the twelve perturbed states are propagated together so
    they share one integration step sequence.
    """
    times = np.asarray(times, dtype=float)
    steps = np.array([step_pos] * 3 + [step_vel] * 3)
    base = x0.as_array()
    X = np.tile(base, (13, 1))
    for i in range(6):
        X[1 + i, i] += steps[i]
        X[7 + i, i] -= steps[i]
    uniq, inv = np.unique(times, return_inverse=True)
    Y = propagate_states(X, uniq - x0.epoch)[inv]  # (k, 13, 6)
    pred = _measurements_from_states(np.moveaxis(Y, 1, 0), times, tx_ids, scene)  # (13, k, 4)
    diff = pred[1:7] - pred[7:13]
    diff[..., 2] = wrap_angle(diff[..., 2])
    F = (diff / (2.0 * steps[:, None, None])).reshape(6, -1).T
    if return_prediction:
        return F, pred[0]
    return F


def _residuals(z, f):
    r = z - f
    r[:, 2] = wrap_angle(r[:, 2])
    return r


def _snr_weights(track):
    snr = np.array([m.snr_db for m in track])
    if np.any(~np.isfinite(snr)):
        return np.ones(len(track))
    lin = 10.0 ** (snr / 10.0)
    return np.sqrt(lin / np.mean(lin))


def batch_least_squares(
    track,
    x0,
    scene,
    max_iter=25,
    lm_lambda=1e-3,
    tol_pos=1e-2,
    tol_vel=1e-5,
    step_pos=1.0,
    step_vel=1e-3,
    snr_weighting=False,
):
    """Iterated, sigma-normalised least-squares orbit fit with LM damping.

    Returns an :class:`OrbitEstimate` whose covariance is
    ``(F^T Sigma^2 F)^-1`` evaluated at the solution.
    """
    track = track if isinstance(track, Track) else Track(track)
    times = track.times
    if len(np.unique(times)) < 2 or 4 * len(track) < 6:
        raise UnderdeterminedError("batch least squares needs at least two measurement epochs", nullity=None)
    tx_ids = track.tx_ids
    z = track.z
    sigma = track.sigma
    if snr_weighting:
        sigma = sigma / _snr_weights(track)[:, None]
    w = (1.0 / sigma).ravel()
    tol = np.array([tol_pos] * 3 + [tol_vel] * 3)

    def linearise(x):
        F, f = jacobian(x, times, tx_ids, scene, step_pos, step_vel, return_prediction=True)
        r = (_residuals(z, f).ravel()) * w
        J = (F * w[:, None]) * STATE_SCALE
        return r, J

    def cost_at(xa):
        f = predict_measurements(StateVector.from_array(xa, x0.epoch), times, tx_ids, scene)
        r = _residuals(z, f).ravel() * w
        return r @ r

    x = x0.as_array().copy()
    lam = lm_lambda
    r, J = linearise(StateVector.from_array(x, x0.epoch))
    cost = r @ r
    converged = False
    it = 0
    while it < max_iter and not converged:
        it += 1
        A = J.T @ J
        g = J.T @ r
        while True:
            try:
                dy = np.linalg.solve(A + lam * np.diag(np.diag(A)), g)
            except np.linalg.LinAlgError:
                raise UnderdeterminedError("normal equations are singular") from None
            dx = dy * STATE_SCALE
            small = np.all(np.abs(dx) < tol)
            trial = x + dx
            try:
                new_cost = cost_at(trial)
            except GeometryError:
                new_cost = np.inf
            if new_cost < cost:
                x, cost = trial, new_cost
                lam = max(lam / 10.0, 1e-12)
                break
            if small:
                # already at the minimum to within tolerance
                break
            lam *= 10.0
            if lam > 1e12:
                est = OrbitEstimate(StateVector.from_array(x, x0.epoch), np.full((6, 6), np.nan), np.sqrt(cost / r.size), it, len(track))
                raise ConvergenceError("residuals keep increasing under LM back-off", est)
        converged = small
        r, J = linearise(StateVector.from_array(x, x0.epoch))
        cost = r @ r

    sv = np.linalg.svd(J, compute_uv=False)
    rank = int(np.sum(sv > sv[0] * 1e-12))
    if rank < 6:
        raise UnderdeterminedError(f"F^T Sigma^2 F has rank {rank} < 6", nullity=6 - rank)
    cov_scaled = np.linalg.inv(J.T @ J)
    cov = cov_scaled * np.outer(STATE_SCALE, STATE_SCALE)
    cov = 0.5 * (cov + cov.T)
    est = OrbitEstimate(
        StateVector.from_array(x, x0.epoch),
        cov,
        float(np.sqrt(np.mean(r**2))),
        it,
        len(track),
        r.reshape(-1, N_OBS),
    )
    if not converged:
        raise ConvergenceError(f"no convergence within {max_iter} iterations", est)
    return est


class BatchOrbitFitter(BaseEstimator):
    """Estimator wrapper around :func:`batch_least_squares`.

    ``fit(track, x0)`` sets ``state_``, ``covariance_``, ``residual_rms_`` and
    ``n_iter_``; ``predict(times, tx_ids)`` evaluates the fitted orbit's
    measurement model.
    """

    def __init__(
        self,
        scene=None,
        max_iter=25,
        lm_lambda=1e-3,
        tol_pos=1e-2,
        tol_vel=1e-5,
        step_pos=1.0,
        step_vel=1e-3,
        snr_weighting=False,
    ):
        self.scene = scene
        self.max_iter = max_iter
        self.lm_lambda = lm_lambda
        self.tol_pos = tol_pos
        self.tol_vel = tol_vel
        self.step_pos = step_pos
        self.step_vel = step_vel
        self.snr_weighting = snr_weighting

    def fit(self, track, x0):
        if self.scene is None:
            raise ValueError("BatchOrbitFitter needs a scene")
        est = batch_least_squares(
            track,
            x0,
            self.scene,
            max_iter=self.max_iter,
            lm_lambda=self.lm_lambda,
            tol_pos=self.tol_pos,
            tol_vel=self.tol_vel,
            step_pos=self.step_pos,
            step_vel=self.step_vel,
            snr_weighting=self.snr_weighting,
        )
        self.estimate_ = est
        self.state_ = est.x
        self.covariance_ = est.covariance
        self.residual_rms_ = est.residual_rms
        self.n_iter_ = est.iterations
        return self

    def predict(self, times, tx_ids):
        check_is_fitted(self, "state_")
        return predict_measurements(self.state_, times, tx_ids, self.scene)

    def score(self, track):
        """Negative normalised residual RMS of ``track`` under the fitted orbit."""
        check_is_fitted(self, "state_")
        track = track if isinstance(track, Track) else Track(track)
        r = _residuals(track.z, self.predict(track.times, track.tx_ids)) / track.sigma
        return -float(np.sqrt(np.mean(r**2)))


@dataclass(frozen=True)
class DopplerObservation:
    """One bistatic Doppler measurement with the site kinematics it was taken with."""

    f_D: float
    wavelength: float
    tx: object
    rx: object


def doppler_plane_velocity(position, observations, rcond=1e-10):
    """Solve the stacked Doppler-plane equations for the target velocity.

    Each observation constrains ``(rho_rx_hat + rho_tx_hat) . v``; three with
    independent bisectors fix ``v``. Fewer raise :class:`UnderdeterminedError`
    carrying the null-space dimension.
    """
    r = check_vec3(position, "position")
    A, b = [], []
    for ob in observations:
        u_rx = r - ob.rx.r
        u_rx = u_rx / np.linalg.norm(u_rx)
        u_tx = r - ob.tx.r
        u_tx = u_tx / np.linalg.norm(u_tx)
        A.append(u_rx + u_tx)
        b.append(-ob.wavelength * ob.f_D + u_rx @ ob.rx.rdot + u_tx @ ob.tx.rdot)
    A = np.array(A).reshape(-1, 3)
    b = np.array(b)
    sv = np.linalg.svd(A, compute_uv=False) if len(A) else np.zeros(0)
    rank = int(np.sum(sv > (sv[0] if sv.size else 0) * rcond)) if sv.size else 0
    if rank < 3:
        raise UnderdeterminedError(
            f"Doppler planes leave a {3 - rank}-dimensional family of velocities", nullity=3 - rank
        )
    v, *_ = np.linalg.lstsq(A, b, rcond=None)
    return v


def iod_candidates(azimuth, elevation, altitudes, headings, receiver, time=0.0, epoch_angle=0.0):
    """Circular-orbit hypotheses along one receiver beam.

    For each altitude the beam is intersected with the sphere of radius
    ``WGS84_A + altitude``; for each heading (rad from local north toward
    east) a circular velocity is placed in the local horizontal plane.
    """
    altitudes = np.atleast_1d(np.asarray(altitudes, dtype=float))
    headings = np.atleast_1d(np.asarray(headings, dtype=float))
    if np.any(altitudes < 200e3) or np.any(altitudes > 2000e3):
        raise ValueError("IOD altitudes must lie within 200-2000 km")
    D = sez_matrix(receiver, time, epoch_angle)
    beam = D @ azel_unit_vector(azimuth, elevation)
    r_rx = site_kinematics_eci(receiver, time, epoch_angle).r
    out = []
    rb = r_rx @ beam
    for alt in altitudes:
        R = WGS84_A + alt
        s = -rb + np.sqrt(rb**2 - r_rx @ r_rx + R**2)
        r = r_rx + s * beam
        up = r / np.linalg.norm(r)
        east = np.cross([0.0, 0.0, 1.0], up)
        east /= np.linalg.norm(east)
        north = np.cross(up, east)
        vc = circular_speed(np.linalg.norm(r))
        for psi in headings:
            v = vc * (np.cos(psi) * north + np.sin(psi) * east)
            out.append(StateVector(r, v, time))
    return out
