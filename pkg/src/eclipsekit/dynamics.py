"""Rotating-frame propagation with eclipse-switched solar radiation pressure.

Equations of motion in the body-fixed frame, with units normalized so that
G * M_total = 1 and the spin axis is +z:

    r'' = -sum_j m_j (r - r_j) / |r - r_j|^3  - 2 w x v - w x (w x r) - eta * s(t)

The SRP term -eta*s(t) is dropped while the spacecraft is in eclipse. Because
the frame co-rotates with the body, the apparent Sun direction counter-rotates
about +z: s(t) = Rz(-w t) s(0).

Integration uses an adaptive Dormand-Prince 5(4) pair. The eclipse indicator
is checked after every accepted step; on a sign change the event time is
bracketed and refined by bisection, re-integrating the bracketing substep each
time (the right-hand side is smooth inside a step, since the SRP switch only
flips at the event), and propagation restarts at the event state.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PropagationError
from . import eclipse as eclipse_mod
from . import geometry, neuralnet

# Dormand-Prince 5(4) tableau (FSAL: the last stage is the next first stage).
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_DP_ERR = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200,
           22 / 525, -1 / 40)

_MIN_STEP_FACTOR = 0.2
_MAX_STEP_FACTOR = 5.0
_SAFETY = 0.9


@dataclass
class SpacecraftState:
    t: float
    r: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if not (np.isfinite(self.r).all() and np.isfinite(self.v).all()):
            raise PropagationError("non-finite spacecraft state")


@dataclass
class EclipseEvent:
    t_event: float
    kind: str                  # "entry" | "exit"
    r_event: np.ndarray
    residual: float


@dataclass
class Trajectory:
    """Accepted integrator knots plus refined eclipse events.

    `in_eclipse[k]` is the eclipse state of the segment starting at knot k.
    """

    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    in_eclipse: np.ndarray
    events: list = field(default_factory=list)

    def __post_init__(self):
        if (np.diff(self.times) <= 0).any():
            raise PropagationError("trajectory times must strictly increase")

    def positions_at(self, ts):
        """Cubic-Hermite interpolation of positions (velocities as slopes)."""
        ts = np.asarray(ts, dtype=np.float64)
        k = np.clip(np.searchsorted(self.times, ts, side="right") - 1,
                    0, len(self.times) - 2)
        h = (self.times[k + 1] - self.times[k])[:, None]
        tau = ((ts - self.times[k]) / (self.times[k + 1] - self.times[k]))[:, None]
        t2 = tau * tau
        t3 = t2 * tau
        h00 = 2 * t3 - 3 * t2 + 1
        h10 = t3 - 2 * t2 + tau
        h01 = -2 * t3 + 3 * t2
        h11 = t3 - t2
        return (h00 * self.positions[k] + h10 * h * self.velocities[k]
                + h01 * self.positions[k + 1] + h11 * h * self.velocities[k + 1])


class EclipseSource:
    """Where the propagator gets the eclipse function from."""

    name = "source"

    def f_value(self, r, s_hat):
        raise NotImplementedError

    def in_shadow(self, r, s_hat):
        """True iff the projected point lies in the shadow cylinder."""
        return self.f_value(r, s_hat) < 0.0


class RayTraceSource(EclipseSource):
    """Ground-truth source backed by ray casting against the mesh.

    Membership is one BVH ray query (exact). The signed magnitude is found by
    bisecting membership changes along a fan of in-plane directions, which is
    accurate near the silhouette (the only place the propagator needs values)
    and saturates at `probe_radius` far from it.
    """

    name = "raytrace"

    def __init__(self, mesh, n_probe_dirs=16, probe_radius=0.25,
                 probe_tol=1e-9):
        self.mesh = mesh
        self._angles = np.linspace(0.0, 2.0 * math.pi, n_probe_dirs,
                                   endpoint=False)
        self.probe_radius = float(probe_radius)
        self.probe_tol = float(probe_tol)

    def in_shadow(self, r, s_hat):
        r = np.asarray(r, dtype=np.float64)
        s = np.asarray(s_hat, dtype=np.float64)
        origin = r - (r @ s) * s - 4.0 * s
        return geometry.ray_hits_mesh(geometry.Ray(origin, s), self.mesh)

    def _membership_xy(self, frame, xys):
        out = np.empty(len(xys), dtype=bool)
        for i, xy in enumerate(xys):
            out[i] = eclipse_mod.in_shadow_cylinder(xy, frame, self.mesh)
        return out

    def f_value(self, r, s_hat):
        r = np.asarray(r, dtype=np.float64)
        s = np.asarray(s_hat, dtype=np.float64)
        frame = eclipse_mod.build_frame(s)
        xy = np.array([r @ frame.u_hat, r @ frame.v_hat])
        member = bool(eclipse_mod.in_shadow_cylinder(xy, frame, self.mesh))
        sign = -1.0 if member else 1.0
        dirs = np.column_stack([np.cos(self._angles), np.sin(self._angles)])

        # coarse scan along each direction for the first membership flip
        n_scan = 32
        radii = self.probe_radius * (np.arange(1, n_scan + 1) / n_scan)
        probe = (xy[None, None, :]
                 + radii[None, :, None] * dirs[:, None, :]).reshape(-1, 2)
        flags = self._membership_xy(frame, probe).reshape(len(dirs), n_scan)
        flipped = flags != member
        has_flip = flipped.any(axis=1)
        if not has_flip.any():
            return sign * self.probe_radius
        first = np.argmax(flipped[has_flip], axis=1)
        step = self.probe_radius / n_scan
        lo = first * step                      # last radius on the member side
        hi = lo + step
        d = dirs[has_flip]
        n_iter = max(1, int(math.ceil(math.log2(step / self.probe_tol))))
        for _ in range(n_iter):
            mid = 0.5 * (lo + hi)
            m = self._membership_xy(frame, xy[None, :] + mid[:, None] * d)
            same = m == member
            lo = np.where(same, mid, lo)
            hi = np.where(same, hi, mid)
        return sign * float(0.5 * (lo + hi).min())


class NetworkSource(EclipseSource):
    """Eclipse function predicted by a trained network.

    Networks are only trained on plane points out to roughly the unit box
    (|xy| <~ 1.4) and sine networks are periodic, so raw predictions far
    outside that footprint oscillate through zero. Beyond `far_radius` no
    [-1, 1]-normalized body can cast shadow, so the value is clamped positive
    there via max(prediction, |xy| - far_radius), which leaves every
    in-footprint prediction untouched and keeps the indicator continuous.
    """

    name = "network"

    def __init__(self, model, far_radius=1.4):
        self.model = model
        self.far_radius = float(far_radius)

    def f_value(self, r, s_hat):
        r = np.asarray(r, dtype=np.float64)
        s = np.asarray(s_hat, dtype=np.float64)
        pred = neuralnet.infer_f(self.model, r, s)
        perp = r - (r @ s) * s
        return max(pred, float(np.linalg.norm(perp)) - self.far_radius)


class SphereSource(EclipseSource):
    """Analytic silhouette of a sphere: F = |projected point| - radius."""

    name = "sphere"

    def __init__(self, radius=1.0):
        self.radius = float(radius)

    def f_value(self, r, s_hat):
        r = np.asarray(r, dtype=np.float64)
        s = np.asarray(s_hat, dtype=np.float64)
        perp = r - (r @ s) * s
        return float(np.linalg.norm(perp) - self.radius)


class TimedSource(EclipseSource):
    """Wrapper that accumulates call counts and wall time of another source."""

    def __init__(self, inner):
        self.inner = inner
        self.name = inner.name
        self.calls = 0
        self.seconds = 0.0

    def _timed(self, fn, *args):
        import time
        t0 = time.perf_counter()
        out = fn(*args)
        self.seconds += time.perf_counter() - t0
        self.calls += 1
        return out

    def f_value(self, r, s_hat):
        return self._timed(self.inner.f_value, r, s_hat)

    def in_shadow(self, r, s_hat):
        return self._timed(self.inner.in_shadow, r, s_hat)


@dataclass
class DynamicsConfig:
    mascons: object = None               # MasconModel or None (no gravity)
    omega: float = 0.0                   # spin rate about +z, rad per time unit
    srp_eta: float = 0.0                 # SRP acceleration magnitude
    s0: tuple = (1.0, 0.0, 0.0)          # Sun direction at t = 0
    eclipse_source: EclipseSource = None
    rtol: float = 1e-12
    atol: float = 1e-12
    event_time_tol: float = 1e-10
    max_steps: int = 5_000_000
    mascon_min_distance: float = 1e-9

    def __post_init__(self):
        s0 = np.asarray(self.s0, dtype=np.float64)
        n = np.linalg.norm(s0)
        if abs(n - 1.0) > 1e-9:
            raise PropagationError("s0 must be a unit vector")
        self.s0 = s0 / n
        if self.srp_eta < 0:
            raise PropagationError("srp_eta must be >= 0")
        if min(self.rtol, self.atol, self.event_time_tol) <= 0:
            raise PropagationError("tolerances must be positive")
        if not math.isfinite(self.omega):
            raise PropagationError("omega must be finite")


def sun_direction(t, config):
    """Apparent Sun direction in the body frame: Rz(-omega*t) applied to s0."""
    if config.omega == 0.0:
        return config.s0.copy()
    ang = config.omega * t
    c, s = math.cos(ang), math.sin(ang)
    x, y, z = config.s0
    return np.array([c * x + s * y, -s * x + c * y, z])


def mascon_gravity(r, mascons, min_distance=1e-9):
    """Acceleration from the point-mass set, G * M_total = 1."""
    d = r[None, :] - mascons.positions
    dist = np.linalg.norm(d, axis=1)
    nearest = int(np.argmin(dist))
    if dist[nearest] <= min_distance:
        raise PropagationError(
            f"position within {min_distance} of mascon {nearest}")
    return -(mascons.masses / dist ** 3) @ d


def mascon_potential(r, mascons):
    d = np.linalg.norm(np.asarray(r, dtype=np.float64)[None, :]
                       - mascons.positions, axis=1)
    return float(-(mascons.masses / d).sum())


def mechanical_energy(r, v, mascons):
    """Kinetic plus mascon potential; conserved when omega = 0 and eta = 0."""
    v = np.asarray(v, dtype=np.float64)
    return 0.5 * float(v @ v) + mascon_potential(r, mascons)


def _acceleration(t, r, v, config, in_eclipse):
    a = np.zeros(3)
    if config.mascons is not None:
        a += mascon_gravity(r, config.mascons, config.mascon_min_distance)
    w = config.omega
    if w != 0.0:
        # -2 w x v - w x (w x r) with w = (0, 0, omega)
        a[0] += 2.0 * w * v[1] + w * w * r[0]
        a[1] += -2.0 * w * v[0] + w * w * r[1]
    if config.srp_eta > 0.0 and not in_eclipse:
        a -= config.srp_eta * sun_direction(t, config)
    return a


def acceleration(state, config, in_eclipse):
    """Right-hand side acceleration for one state and a frozen eclipse flag."""
    return _acceleration(state.t, state.r, state.v, config, in_eclipse)


def eclipse_indicator(state, config):
    """Scalar g with g < 0 exactly when the spacecraft is in eclipse.

    On the anti-Sun side (r . s < 0) g equals the eclipse function of the
    projected point; on the Sun side g = max(F, r . s), which forces
    positivity there (a spacecraft between body and Sun is lit even inside
    the cylinder).
    """
    if config.eclipse_source is None:
        raise PropagationError("no eclipse source configured")
    s = sun_direction(state.t, config)
    axial = float(state.r @ s)
    f = config.eclipse_source.f_value(state.r, s)
    return f if axial < 0.0 else max(f, axial)


def _indicator_negative(t, r, config):
    s = sun_direction(t, config)
    if float(r @ s) >= 0.0:
        return False
    return bool(config.eclipse_source.in_shadow(r, s))


def _rhs(t, y, config, in_eclipse):
    out = np.empty(6)
    out[:3] = y[3:]
    out[3:] = _acceleration(t, y[:3], y[3:], config, in_eclipse)
    return out


def _error_norm(err, y_old, y_new, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(y_old), np.abs(y_new))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def _try_step(t, y, h, k1, config, in_eclipse):
    """One Dormand-Prince attempt; returns (y_new, err_norm, k_last)."""
    k = [k1]
    for i in range(1, 7):
        acc = np.zeros(6)
        for j, a in enumerate(_DP_A[i]):
            if a != 0.0:
                acc += a * k[j]
        k.append(_rhs(t + _DP_C[i] * h, y + h * acc, config, in_eclipse))
    y_new = y + h * sum(b * ki for b, ki in zip(_DP_B5, k) if b != 0.0)
    err = h * sum(e * ki for e, ki in zip(_DP_ERR, k) if e != 0.0)
    return y_new, _error_norm(err, y, y_new, config.rtol, config.atol), k[6]


def _integrate_to(t0, y0, t1, h_init, config, in_eclipse):
    """Adaptive integration from (t0, y0) exactly to t1 with a frozen switch."""
    if t1 <= t0:
        return y0.copy()
    t = t0
    y = y0.copy()
    h = min(h_init, t1 - t0)
    k1 = _rhs(t, y, config, in_eclipse)
    guard = 0
    while t < t1:
        h = min(h, t1 - t)
        y_new, err, k_last = _try_step(t, y, h, k1, config, in_eclipse)
        guard += 1
        if guard > 100_000:
            raise PropagationError("sub-integration exceeded its step budget")
        if err <= 1.0:
            t += h
            y = y_new
            k1 = k_last
            factor = _MAX_STEP_FACTOR if err == 0.0 else min(
                _MAX_STEP_FACTOR, _SAFETY * err ** -0.2)
            h *= max(_MIN_STEP_FACTOR, factor)
        else:
            h *= max(_MIN_STEP_FACTOR, _SAFETY * err ** -0.2)
            if h < 1e-14 * max(1.0, abs(t)):
                raise PropagationError(f"step size underflow at t = {t!r}")
    return y


def _refine_event(t_lo, y_lo, t_hi, h_step, was_negative, config):
    """Bisect the indicator sign flip inside one accepted step.

    Every probe re-integrates from the step start with the old SRP switch, so
    no interpolation crosses the discontinuity.
    """
    lo, hi = t_lo, t_hi
    while hi - lo > config.event_time_tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        y_mid = _integrate_to(t_lo, y_lo, mid, h_step, config, was_negative)
        if _indicator_negative(mid, y_mid[:3], config) == was_negative:
            lo = mid
        else:
            hi = mid
    t_event = 0.5 * (lo + hi)
    y_event = _integrate_to(t_lo, y_lo, t_event, h_step, config, was_negative)
    return t_event, y_event


def propagate(state0, config, t_final, dt_initial):
    """Adaptive propagation with eclipse event detection.

    The eclipse indicator is evaluated after every accepted step; on a sign
    change the event is refined to `event_time_tol`, recorded, and integration
    restarts at the event with the SRP switch flipped, keeping the right-hand
    side smooth within every integrated segment.
    """
    if t_final <= state0.t:
        raise PropagationError("t_final must exceed the initial time")
    if dt_initial <= 0:
        raise PropagationError("dt_initial must be positive")
    has_source = config.eclipse_source is not None

    t = float(state0.t)
    y = np.concatenate([state0.r, state0.v]).astype(np.float64)
    in_ecl = _indicator_negative(t, y[:3], config) if has_source else False

    times = [t]
    states = [y.copy()]
    flags = [in_ecl]
    events = []

    h = min(dt_initial, t_final - t)
    k1 = _rhs(t, y, config, in_ecl)
    n_steps = 0
    while t < t_final:
        h = min(h, t_final - t)
        try:
            y_new, err, k_last = _try_step(t, y, h, k1, config, in_ecl)
        except PropagationError as exc:
            raise PropagationError(f"at t = {t!r}: {exc}") from exc
        n_steps += 1
        if n_steps > config.max_steps:
            raise PropagationError(f"exceeded max_steps = {config.max_steps}")
        if err > 1.0:
            h *= max(_MIN_STEP_FACTOR, _SAFETY * err ** -0.2)
            if h < 1e-14 * max(1.0, abs(t)):
                raise PropagationError(f"step size underflow at t = {t!r}")
            continue
        t_new = t + h
        if has_source and t_new - t > config.event_time_tol:
            neg_new = _indicator_negative(t_new, y_new[:3], config)
            if neg_new != in_ecl:
                t_ev, y_ev = _refine_event(t, y, t_new, h, in_ecl, config)
                state_ev = SpacecraftState(t_ev, y_ev[:3], y_ev[3:])
                residual = abs(eclipse_indicator(state_ev, config))
                kind = "entry" if not in_ecl else "exit"
                in_ecl = not in_ecl
                events.append(EclipseEvent(t_ev, kind, y_ev[:3].copy(),
                                           float(residual)))
                if t_ev > times[-1]:
                    times.append(t_ev)
                    states.append(y_ev.copy())
                    flags.append(in_ecl)
                t = t_ev
                y = y_ev
                k1 = _rhs(t, y, config, in_ecl)
                continue
        t = t_new
        y = y_new
        k1 = k_last
        times.append(t)
        states.append(y.copy())
        flags.append(in_ecl)
        factor = _MAX_STEP_FACTOR if err == 0.0 else min(
            _MAX_STEP_FACTOR, _SAFETY * err ** -0.2)
        h *= max(_MIN_STEP_FACTOR, factor)

    arr = np.array(states)
    return Trajectory(np.array(times), arr[:, :3], arr[:, 3:],
                      np.array(flags, dtype=bool), events)


def compare_trajectories(traj_a, traj_b, n_samples=2000):
    """|delta r|(t) between two trajectories on a shared uniform grid."""
    t0 = max(traj_a.times[0], traj_b.times[0])
    t1 = min(traj_a.times[-1], traj_b.times[-1])
    if t1 <= t0:
        raise PropagationError("trajectories share no time span")
    ts = np.linspace(t0, t1, n_samples)
    dr = np.linalg.norm(traj_a.positions_at(ts) - traj_b.positions_at(ts),
                        axis=1)
    return ts, dr


def save_trajectory_csv(traj, path):
    fmt = geometry._fmt
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,rx,ry,rz,vx,vy,vz\n")
        for t, r, v in zip(traj.times, traj.positions, traj.velocities):
            fh.write(f"{fmt(t)},{fmt(r[0])},{fmt(r[1])},{fmt(r[2])},"
                     f"{fmt(v[0])},{fmt(v[1])},{fmt(v[2])}\n")


def save_events_csv(traj, path):
    fmt = geometry._fmt
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,kind,rx,ry,rz,residual\n")
        for e in traj.events:
            fh.write(f"{fmt(e.t_event)},{e.kind},{fmt(e.r_event[0])},"
                     f"{fmt(e.r_event[1])},{fmt(e.r_event[2])},"
                     f"{fmt(e.residual)}\n")
