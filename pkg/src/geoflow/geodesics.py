"""Geodesic flow: shooting with chart switching, hitting times, cap rotation,
and Newton refinement of closed geodesics through broken-geodesic energy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .profiles import CapProfile
from .surfaces import (
    BAND,
    NORTH,
    SOUTH,
    ChartPoint,
    DomainError,
    FlatTorus,
    RevolutionSurface,
    SurfaceModel,
)


class IntegrationError(RuntimeError):
    pass


class RefinementError(RuntimeError):
    pass


class NonTrappingViolation(RuntimeError):
    """A cap-crossing geodesic failed to exit within the safety horizon."""


# ---------------------------------------------------------------------------
# Orthonormal frames and unit tangents
# ---------------------------------------------------------------------------


def frame_vectors(surface: SurfaceModel, chart_id: int, xy: np.ndarray):
    """Oriented g-orthonormal frame (e1, e2) in chart coordinate components."""
    xy = np.atleast_2d(xy)
    g = surface.metric(chart_id, xy)
    g11, g12, g22 = g[:, 0], g[:, 1], g[:, 2]
    orient = surface.chart_spec(chart_id).orientation
    e1 = np.zeros_like(xy)
    e1[:, 0] = 1.0 / np.sqrt(g11)
    disc = np.sqrt(g22 - g12**2 / g11)
    e2 = np.zeros_like(xy)
    e2[:, 0] = -g12 / g11 / disc * orient
    e2[:, 1] = 1.0 / disc * orient
    return e1, e2


def angle_to_velocity(surface, chart_id, xy, angle):
    """Chart velocity components of the unit vector at the given frame angle."""
    e1, e2 = frame_vectors(surface, chart_id, xy)
    angle = np.atleast_1d(angle)
    return np.cos(angle)[:, None] * e1 + np.sin(angle)[:, None] * e2


def velocity_to_angle(surface, chart_id, xy, vel):
    xy = np.atleast_2d(xy)
    vel = np.atleast_2d(vel)
    g = surface.metric(chart_id, xy)
    e1, e2 = frame_vectors(surface, chart_id, xy)

    def inner(a, b):
        return g[:, 0] * a[:, 0] * b[:, 0] + g[:, 1] * (
            a[:, 0] * b[:, 1] + a[:, 1] * b[:, 0]
        ) + g[:, 2] * a[:, 1] * b[:, 1]

    return np.arctan2(inner(vel, e2), inner(vel, e1))


def g_norm(surface, chart_id, xy, vel):
    g = surface.metric(chart_id, np.atleast_2d(xy))
    vel = np.atleast_2d(vel)
    return np.sqrt(
        g[:, 0] * vel[:, 0] ** 2 + 2 * g[:, 1] * vel[:, 0] * vel[:, 1] + g[:, 2] * vel[:, 1] ** 2
    )


def normalize_velocity(surface, chart_id, xy, vel):
    return np.atleast_2d(vel) / g_norm(surface, chart_id, xy, vel)[:, None]


@dataclass(frozen=True)
class UnitTangent:
    """Unit tangent vector: base chart point plus frame direction angle."""

    point: ChartPoint
    angle: float

    def velocity(self, surface) -> np.ndarray:
        return angle_to_velocity(
            surface, self.point.chart_id, self.point.xy[None, :], np.array([self.angle])
        )[0]

    def reversed(self) -> "UnitTangent":
        return UnitTangent(self.point, self.angle + math.pi)


# ---------------------------------------------------------------------------
# Targets for event detection
# ---------------------------------------------------------------------------


class Target:
    """Closed curve on the surface, detectable as a zero crossing of a smooth
    chart function (parallels, meridians) or as a polyline."""

    target_id: int = -1

    def event_value(self, surface, chart_id, xy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def crossing_angle(self, surface, chart_id, xy, vel) -> float:
        """|sin| of the angle between the geodesic and the target at a crossing."""
        raise NotImplementedError


@dataclass
class ParallelTarget(Target):
    """Circle of revolution r = r_value on a revolution surface."""

    r_value: float
    target_id: int = -1

    def event_value(self, surface, chart_id, xy):
        r, _ = surface.global_r_theta(chart_id, np.atleast_2d(xy))
        return r - self.r_value

    def crossing_angle(self, surface, chart_id, xy, vel):
        ang = velocity_to_angle(surface, chart_id, np.atleast_2d(xy), np.atleast_2d(vel))[0]
        # target direction is the parallel: compute angle of the parallel frame dir
        e_par = _parallel_direction(surface, chart_id, np.atleast_2d(xy))
        ang_t = velocity_to_angle(surface, chart_id, np.atleast_2d(xy), e_par)[0]
        return abs(math.sin(ang - ang_t))


@dataclass
class MeridianTarget(Target):
    """Full meridian circle {theta = theta0} U {theta = theta0 + pi} through
    both poles of a sphere-like revolution surface."""

    theta0: float
    target_id: int = -1

    def event_value(self, surface, chart_id, xy):
        _, th = surface.global_r_theta(chart_id, np.atleast_2d(xy))
        return np.sin(th - self.theta0)

    def crossing_angle(self, surface, chart_id, xy, vel):
        ang = velocity_to_angle(surface, chart_id, np.atleast_2d(xy), np.atleast_2d(vel))[0]
        e_par = _parallel_direction(surface, chart_id, np.atleast_2d(xy))
        ang_t = velocity_to_angle(surface, chart_id, np.atleast_2d(xy), e_par)[0]
        # meridian is orthogonal to the parallel
        return abs(math.cos(ang - ang_t))


@dataclass
class PolylineTarget(Target):
    """Closed polyline target given by chart points (single chart for now)."""

    chart_id: int
    vertices: np.ndarray  # (m, 2), implicitly closed
    target_id: int = -1

    def event_value(self, surface, chart_id, xy):  # pragma: no cover - not smooth
        raise NotImplementedError("polyline targets are detected by segment scans")


def _parallel_direction(surface, chart_id, xy):
    """Unit vector along the parallel (increasing theta), chart components."""
    if not isinstance(surface_base := _revolution_base(surface), RevolutionSurface):
        raise DomainError("parallel direction requires a revolution surface")
    xy = np.atleast_2d(xy)
    h = 1e-6
    r, th = surface_base.global_r_theta(chart_id, xy)
    fwd = _from_global(surface_base, chart_id, r, th + h)
    bwd = _from_global(surface_base, chart_id, r, th - h)
    v = (fwd - bwd) / (2 * h)
    return normalize_velocity(surface, chart_id, xy, v)


def _revolution_base(surface):
    base = surface
    while hasattr(base, "base"):
        base = base.base
    return base


def _from_global(surface: RevolutionSurface, chart_id, r, th):
    r = np.atleast_1d(r)
    th = np.atleast_1d(th)
    if not surface.profile.sphere_like or chart_id == BAND:
        return np.column_stack([r, th])
    if chart_id == NORTH:
        return np.column_stack([r * np.cos(th), r * np.sin(th)])
    s = surface.profile.r_total - r
    return np.column_stack([s * np.cos(th), s * np.sin(th)])


# ---------------------------------------------------------------------------
# Geodesic segments
# ---------------------------------------------------------------------------

REACHED_TIME = "reached_time"
HIT_TARGET = "hit_target"
LEFT_REGION = "left_region"


@dataclass
class GeodesicSegment:
    surface: SurfaceModel
    times: np.ndarray
    chart_ids: np.ndarray
    points: np.ndarray
    velocities: np.ndarray
    termination: str
    target_id: int | None = None
    hit_time: float | None = None
    grazing: bool = False

    @property
    def end_state(self) -> UnitTangent:
        i = len(self.times) - 1
        ang = velocity_to_angle(
            self.surface, int(self.chart_ids[i]), self.points[i][None], self.velocities[i][None]
        )[0]
        return UnitTangent(ChartPoint(int(self.chart_ids[i]), *self.points[i]), float(ang))

    def angles(self) -> np.ndarray:
        out = np.empty(len(self.times))
        for c in np.unique(self.chart_ids):
            m = self.chart_ids == c
            out[m] = velocity_to_angle(self.surface, int(c), self.points[m], self.velocities[m])
        return out

    def to_csv(self, path):
        ang = self.angles()
        data = np.column_stack([self.times, self.chart_ids, self.points, ang])
        np.savetxt(path, data, delimiter=",", header="t,chart_id,x,y,angle", comments="")


def _geodesic_rhs(surface, chart_id):
    def rhs(t, y):
        xy = y[:2][None, :]
        vel = y[2:]
        gam = surface.christoffel(chart_id, xy)[0]
        acc = -np.einsum("kij,i,j->k", gam, vel, vel)
        return np.array([vel[0], vel[1], acc[0], acc[1]])

    return rhs


def _chart_exit_events(surface, chart_id):
    """Terminal events marking where the integrator should switch charts."""
    events = []
    base = _revolution_base(surface)
    if isinstance(base, RevolutionSurface) and base.profile.sphere_like:
        rt = base.profile.r_total
        pol = base.pol_r
        if chart_id in (NORTH, SOUTH):
            def ev(t, y):
                return math.hypot(y[0], y[1]) - 0.9 * pol
            ev.terminal = True
            ev.direction = 1.0
            events.append(("switch", ev))
        else:
            def ev_lo(t, y):
                return y[0] - 0.6 * pol
            ev_lo.terminal = True
            ev_lo.direction = -1.0

            def ev_hi(t, y):
                return y[0] - (rt - 0.6 * pol)
            ev_hi.terminal = True
            ev_hi.direction = 1.0
            events.extend([("switch", ev_lo), ("switch", ev_hi)])
    return events


def shoot(
    surface: SurfaceModel,
    v0: UnitTangent,
    t_max: float,
    targets: Sequence[Target] = (),
    rtol: float = 1e-11,
    atol: float = 1e-13,
    sample_dt: float | None = None,
    skip_time: float = 1e-9,
    grazing_tol: float = 1e-6,
) -> GeodesicSegment:
    """Integrate the geodesic from v0 for time t_max or until a target is hit.

    Adaptive high-order integration (DOP853) on chart coordinates with chart
    switching; target crossings located by the integrator's root finder on the
    dense output.  Unit speed is restored at every chart switch.
    """
    if t_max <= 0:
        raise IntegrationError("t_max must be positive")
    chart = v0.point.chart_id
    xy = v0.point.xy.astype(float)
    vel = v0.velocity(surface)
    t = 0.0
    ts = [0.0]
    charts = [chart]
    pts = [xy.copy()]
    vels = [vel.copy()]
    smooth_targets = [tg for tg in targets if not isinstance(tg, PolylineTarget)]
    poly_targets = [tg for tg in targets if isinstance(tg, PolylineTarget)]

    guard = 0
    while t < t_max * (1 - 1e-14):
        guard += 1
        if guard > 10000:
            raise IntegrationError("too many integration legs (chart thrashing?)")
        rhs = _geodesic_rhs(surface, chart)
        events = _chart_exit_events(surface, chart)
        ev_funcs = [f for _, f in events]
        tgt_offset = len(ev_funcs)
        for tg in smooth_targets:
            def ev_t(tt, y, tg=tg):
                return float(tg.event_value(surface, chart, y[:2][None, :])[0])
            ev_t.terminal = True
            ev_t.direction = 0.0
            ev_funcs.append(ev_t)
        sol = solve_ivp(
            rhs,
            (t, t_max),
            np.concatenate([xy, vel]),
            method="DOP853",
            rtol=rtol,
            atol=atol,
            events=ev_funcs or None,
            dense_output=True,
        )
        if not sol.success:
            raise IntegrationError(f"integrator failed: {sol.message}")

        # earliest event beyond the skip window
        hit_t, hit_kind, hit_idx = np.inf, None, -1
        if ev_funcs:
            for i, te in enumerate(sol.t_events):
                cand = te[te > t + skip_time] if i >= tgt_offset else te
                if len(cand) and cand[0] < hit_t:
                    hit_t, hit_idx = float(cand[0]), i
                    hit_kind = "switch" if i < tgt_offset else "target"

        leg_end = min(hit_t, sol.t[-1])
        # record samples on this leg
        if sample_dt is not None:
            t_samp = np.arange(t + sample_dt, leg_end, sample_dt)
            for tt in t_samp:
                y = sol.sol(tt)
                ts.append(float(tt))
                charts.append(chart)
                pts.append(y[:2])
                vels.append(y[2:])
        # polyline crossing scan along the accepted leg
        if poly_targets:
            scan_t = sol.t[(sol.t >= t) & (sol.t <= leg_end)]
            if len(scan_t) < 2 or scan_t[-1] < leg_end:
                scan_t = np.append(scan_t, leg_end)
            cross = _polyline_crossing(surface, chart, sol, scan_t, poly_targets, t + skip_time)
            if cross is not None and cross[0] < hit_t:
                tc, tg = cross
                y = sol.sol(tc)
                ts.append(float(tc))
                charts.append(chart)
                pts.append(y[:2])
                vels.append(y[2:])
                return GeodesicSegment(
                    surface, np.array(ts), np.array(charts), np.array(pts), np.array(vels),
                    HIT_TARGET, target_id=tg.target_id, hit_time=float(tc),
                )

        if hit_kind == "target":
            tg = smooth_targets[hit_idx - tgt_offset]
            y = sol.sol(hit_t)
            ts.append(hit_t)
            charts.append(chart)
            pts.append(y[:2])
            vels.append(y[2:])
            sin_ang = tg.crossing_angle(surface, chart, y[:2], y[2:])
            return GeodesicSegment(
                surface, np.array(ts), np.array(charts), np.array(pts), np.array(vels),
                HIT_TARGET, target_id=tg.target_id, hit_time=hit_t,
                grazing=bool(sin_ang < grazing_tol),
            )
        if hit_kind == "switch":
            y = sol.sol(hit_t)
            t = hit_t
            xy, vel = y[:2], y[2:]
            new_chart = int(surface.preferred_chart(chart, xy[None, :])[0])
            if new_chart != chart:
                xy2, vel2 = surface.convert_with_velocity(chart, xy[None], vel[None], new_chart)
                chart, xy, vel = new_chart, xy2[0], vel2[0]
            vel = normalize_velocity(surface, chart, xy[None], vel[None])[0]
            ts.append(t)
            charts.append(chart)
            pts.append(xy.copy())
            vels.append(vel.copy())
            continue
        # reached t_max
        y = sol.sol(sol.t[-1])
        ts.append(float(sol.t[-1]))
        charts.append(chart)
        pts.append(y[:2])
        vels.append(y[2:])
        break

    return GeodesicSegment(
        surface, np.array(ts), np.array(charts), np.array(pts), np.array(vels), REACHED_TIME
    )


def _polyline_crossing(surface, chart, sol, scan_t, poly_targets, t_min):
    """First transversal crossing of the leg with any polyline target."""
    pts = sol.sol(scan_t)[:2].T
    best = None
    for tg in poly_targets:
        try:
            verts = surface.convert(tg.chart_id, tg.vertices, chart)
        except DomainError:
            continue
        spec = surface.chart_spec(chart)
        m = len(verts)
        closed = np.vstack([verts, verts[:1]])
        for i in range(len(scan_t) - 1):
            if scan_t[i + 1] <= t_min:
                continue
            p, q = pts[i], pts[i + 1]
            hit = _segment_chain_hit(p, q, closed, spec)
            if hit is not None:
                # bisect on the dense output for the crossing parameter
                lo, hi = scan_t[i], scan_t[i + 1]
                for _ in range(60):
                    mid = 0.5 * (lo + hi)
                    pm = sol.sol(mid)[:2]
                    if _segment_chain_hit(p, pm, closed, spec) is not None:
                        hi = mid
                    else:
                        lo = mid
                tc = 0.5 * (lo + hi)
                if tc > t_min and (best is None or tc < best[0]):
                    best = (tc, tg)
                break
    return best


def _segment_chain_hit(p, q, chain, spec):
    """Does segment p-q cross the polyline chain (chart-periodic aware)?"""
    a = chain[:-1].copy()
    b = chain[1:].copy()
    for axis, period in [(0, spec.x_period), (1, spec.y_period)]:
        if period is not None:
            mid_ref = 0.5 * (p[axis] + q[axis])
            shift = period * np.round((0.5 * (a[:, axis] + b[:, axis]) - mid_ref) / period)
            a[:, axis] -= shift
            b[:, axis] -= shift
    d1 = q - p
    d2 = b - a
    denom = d1[0] * d2[:, 1] - d1[1] * d2[:, 0]
    rel = a - p
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (rel[:, 0] * d2[:, 1] - rel[:, 1] * d2[:, 0]) / denom
        u = (rel[:, 0] * d1[1] - rel[:, 1] * d1[0]) / denom
    ok = (np.abs(denom) > 1e-15) & (s >= 0) & (s <= 1) & (u >= 0) & (u <= 1)
    if np.any(ok):
        idx = int(np.argmax(ok))
        return float(s[idx])
    return None


def hitting_time(
    surface,
    v0: UnitTangent,
    targets: Sequence[Target],
    t_cap: float,
    rtol: float = 1e-11,
    atol: float = 1e-13,
) -> tuple[float, int, bool] | None:
    """First transversal crossing (t_hit, target_id, grazing) before t_cap."""
    # based exactly on a target pointing transversally counts as an immediate hit
    for tg in targets:
        if not isinstance(tg, PolylineTarget):
            val = float(tg.event_value(surface, v0.point.chart_id, v0.point.xy[None, :])[0])
            if abs(val) < 1e-12:
                sin_ang = tg.crossing_angle(
                    surface, v0.point.chart_id, v0.point.xy, v0.velocity(surface)
                )
                if sin_ang > 1e-12:
                    return 0.0, tg.target_id, bool(sin_ang < 1e-6)
    seg = shoot(surface, v0, t_cap, targets=targets, rtol=rtol, atol=atol)
    if seg.termination == HIT_TARGET:
        return seg.hit_time, seg.target_id, seg.grazing
    return None


# ---------------------------------------------------------------------------
# Focusing-cap rotation function
# ---------------------------------------------------------------------------


def cap_rotation(
    cap: CapProfile,
    xi: float,
    with_jacobi: bool = False,
    safety_time: float | None = None,
    rtol: float = 1e-12,
):
    """Total rotation Theta(xi) and exit time of a geodesic entering the cap.

    The entering geodesic starts on the equator with tangent angle xi measured
    from the (counterclockwise) parallel.  Returns (Theta, T_exit); with
    ``with_jacobi`` also the arclength Jacobi transfer matrix over the
    crossing.  xi = pi/2 is the meridian through the pole: Theta = pi exactly
    by symmetry.
    """
    if not 0.0 < xi <= math.pi / 2:
        raise DomainError("entry angle must lie in (0, pi/2]")
    r0 = cap.r0
    if safety_time is None:
        safety_time = 400.0 * r0
    if abs(xi - math.pi / 2) < 1e-13:
        theta, t_exit = math.pi, 2.0 * r0
        if not with_jacobi:
            return theta, t_exit
        transfer = _meridian_chord_transfer(cap, rtol)
        return theta, t_exit, transfer

    def rhs(t, y):
        r, th, ang, u1, du1, u2, du2 = y
        rr = min(max(r, 0.0), r0)
        rho = float(cap.rho(rr))
        rho_dot = float(cap.rho_dot(rr))
        K = float(cap.curvature(rr))
        c = math.cos(ang)
        return [
            -math.sin(ang),
            c / rho,
            -(rho_dot / rho) * c,
            du1,
            -K * u1,
            du2,
            -K * u2,
        ]

    def exit_event(t, y):
        return y[0] - r0
    exit_event.terminal = True
    exit_event.direction = 1.0

    y0 = [r0, 0.0, xi, 1.0, 0.0, 0.0, 1.0]
    sol = solve_ivp(
        rhs, (0.0, safety_time), y0, method="DOP853", rtol=rtol, atol=1e-14,
        events=[exit_event], dense_output=False,
    )
    if not sol.success:
        raise IntegrationError(f"cap integration failed: {sol.message}")
    if not len(sol.t_events[0]):
        raise NonTrappingViolation(
            f"geodesic with entry angle {xi} did not exit the cap within {safety_time}"
        )
    yf = sol.y_events[0][0]
    theta = float(yf[1])
    t_exit = float(sol.t_events[0][0])
    if not with_jacobi:
        return theta, t_exit
    transfer = np.array([[yf[3], yf[5]], [yf[4], yf[6]]])
    return theta, t_exit, transfer


def _meridian_chord_transfer(cap: CapProfile, rtol: float) -> np.ndarray:
    """Jacobi transfer across the cap along the meridian chord (xi = pi/2)."""
    r0 = cap.r0

    def rhs(t, y):
        r = r0 - t if t <= r0 else t - r0
        K = float(cap.curvature(min(r, r0)))
        return [y[1], -K * y[0], y[3], -K * y[2]]

    sol = solve_ivp(
        rhs, (0.0, 2 * r0), [1.0, 0.0, 0.0, 1.0], method="DOP853", rtol=rtol, atol=1e-14
    )
    yf = sol.y[:, -1]
    return np.array([[yf[0], yf[2]], [yf[1], yf[3]]])


def cap_rotation_derivative(cap: CapProfile, xi: float, step: float = 1e-4) -> float:
    """d Theta / d xi by Richardson-extrapolated central differences."""

    def theta(x):
        if x >= math.pi / 2:
            # odd reflection: Theta(pi - x) with the symmetric formula keeps the
            # derivative continuous at pi/2
            return 2 * math.pi - cap_rotation(cap, math.pi - x)[0]
        return cap_rotation(cap, x)[0]

    def d(h):
        return (theta(xi + h) - theta(xi - h)) / (2 * h)

    return (4.0 * d(step / 2) - d(step)) / 3.0


# ---------------------------------------------------------------------------
# Batched short-segment integration (building block for refinement)
# ---------------------------------------------------------------------------


def _acc_batch(surface, chart_ids, xy, vel):
    acc = np.empty_like(vel)
    for c in np.unique(chart_ids):
        m = chart_ids == c
        gam = surface.christoffel(int(c), xy[m])
        acc[m] = -np.einsum("nkij,ni,nj->nk", gam, vel[m], vel[m])
    return acc


def _rk4_sweep(surface, chart_ids, xy0, vel0, T, n_steps=48, jacobi_K=False):
    """Batched fixed-step RK4 for unit-speed geodesic segments.

    Optionally carries two scalar Jacobi fields (u, u') per lane in arclength,
    with curvature evaluated at the moving base point.
    """
    n = xy0.shape[0]
    h = (T / n_steps)[:, None]
    if jacobi_K:
        state = np.concatenate(
            [xy0, vel0, np.tile([1.0, 0.0, 0.0, 1.0], (n, 1))], axis=1
        )
    else:
        state = np.concatenate([xy0, vel0], axis=1)

    def deriv(s):
        xy, vel = s[:, 0:2], s[:, 2:4]
        acc = _acc_batch(surface, chart_ids, xy, vel)
        if not jacobi_K:
            return np.concatenate([vel, acc], axis=1)
        K = np.empty(n)
        for c in np.unique(chart_ids):
            m = chart_ids == c
            K[m] = surface.curvature(int(c), xy[m])
        u1, du1, u2, du2 = s[:, 4], s[:, 5], s[:, 6], s[:, 7]
        return np.concatenate(
            [vel, acc, np.column_stack([du1, -K * u1, du2, -K * u2])], axis=1
        )

    for _ in range(n_steps):
        k1 = deriv(state)
        k2 = deriv(state + 0.5 * h * k1)
        k3 = deriv(state + 0.5 * h * k2)
        k4 = deriv(state + h * k3)
        state = state + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return state


def connect_batch(
    surface,
    chart_ids: np.ndarray,
    starts: np.ndarray,
    targets_xy: np.ndarray,
    guess_angles: np.ndarray,
    guess_times: np.ndarray,
    tol: float = 1e-12,
    max_iter: int = 30,
    n_steps: int = 48,
):
    """Local inverse exponential maps, batched.

    For each lane, finds (angle, T) such that the unit-speed geodesic from
    ``starts`` (in chart ``chart_ids``) at frame angle ``angle`` reaches
    ``targets_xy`` (same chart) at time T.  Returns (angles, times,
    end_velocities, converged mask).
    """
    n = starts.shape[0]
    ang = guess_angles.copy()
    T = guess_times.copy()
    h_ang = 1e-7
    conv = np.zeros(n, dtype=bool)
    end_vel = np.zeros((n, 2))
    for _ in range(max_iter):
        vel0 = np.empty((n, 2))
        for c in np.unique(chart_ids):
            m = chart_ids == c
            vel0[m] = angle_to_velocity(surface, int(c), starts[m], ang[m])
        out = _rk4_sweep(surface, chart_ids, starts, vel0, T, n_steps)
        res = out[:, 0:2] - targets_xy
        end_vel = out[:, 2:4]
        err = np.hypot(res[:, 0], res[:, 1])
        conv = err < tol * np.maximum(1.0, T)
        if np.all(conv):
            break
        act = ~conv
        vel1 = np.empty((int(act.sum()), 2))
        sub_charts = chart_ids[act]
        for c in np.unique(sub_charts):
            m_all = act & (chart_ids == c)
            vel1[sub_charts == c] = angle_to_velocity(
                surface, int(c), starts[m_all], ang[m_all] + h_ang
            )
        out1 = _rk4_sweep(surface, sub_charts, starts[act], vel1, T[act], n_steps)
        dPda = (out1[:, 0:2] - out[act, 0:2]) / h_ang
        dPdT = end_vel[act]
        det = dPda[:, 0] * dPdT[:, 1] - dPda[:, 1] * dPdT[:, 0]
        det = np.where(np.abs(det) < 1e-300, 1e-300, det)
        ra = res[act]
        d_ang = (-ra[:, 0] * dPdT[:, 1] + ra[:, 1] * dPdT[:, 0]) / det
        d_T = (-dPda[:, 0] * ra[:, 1] + dPda[:, 1] * ra[:, 0]) / det
        # damp large updates
        d_ang = np.clip(d_ang, -0.5, 0.5)
        d_T = np.clip(d_T, -0.5 * T[act], 0.5 * T[act])
        ang[act] += d_ang
        T[act] += d_T
    return ang, T, end_vel, conv


# ---------------------------------------------------------------------------
# Closed geodesics
# ---------------------------------------------------------------------------


@dataclass
class ClosedGeodesic:
    """Refined periodic geodesic with dense unit-speed samples."""

    surface: SurfaceModel
    node_charts: np.ndarray
    node_xy: np.ndarray
    seg_angles: np.ndarray
    seg_lengths: np.ndarray
    length: float
    residual: float
    times: np.ndarray = field(default=None, repr=False)
    chart_ids: np.ndarray = field(default=None, repr=False)
    points: np.ndarray = field(default=None, repr=False)
    velocities: np.ndarray = field(default=None, repr=False)
    curvature_values: np.ndarray = field(default=None, repr=False)
    analytic_curvature: Callable[[np.ndarray], np.ndarray] | None = None
    index: int | None = None
    nullity: int | None = None
    floquet: float | str | None = None
    nondegenerate: bool | None = None
    signature: object | None = None
    geodesic_id: str = ""

    @property
    def k(self) -> int:
        return len(self.node_xy)

    def curvature_of_t(self) -> Callable[[np.ndarray], np.ndarray]:
        """Gaussian curvature along the loop as a function of arclength."""
        if self.analytic_curvature is not None:
            return self.analytic_curvature
        t = self.times
        vals = self.curvature_values
        if t[-1] < self.length * (1 - 1e-12):
            t = np.append(t, self.length)
            vals = np.append(vals, vals[0])
        spline = CubicSpline(t, vals, bc_type="periodic")
        L = self.length
        return lambda s: spline(np.mod(s, L))

    def energy(self) -> float:
        """Broken-geodesic energy E_k = k * sum(d_i^2)."""
        return float(self.k * np.sum(self.seg_lengths**2))

    def to_json_dict(self) -> dict:
        ang = np.empty(len(self.times))
        for c in np.unique(self.chart_ids):
            m = self.chart_ids == c
            ang[m] = velocity_to_angle(self.surface, int(c), self.points[m], self.velocities[m])
        d = {
            "length": self.length,
            "residual": self.residual,
            "index": self.index,
            "nullity": self.nullity,
            "floquet": self.floquet if not isinstance(self.floquet, float) else float(self.floquet),
            "nondegenerate": self.nondegenerate,
            "signature": self.signature.to_json_dict() if self.signature is not None else None,
            "id": self.geodesic_id,
            "samples": {
                "t": self.times.tolist(),
                "chart_id": self.chart_ids.tolist(),
                "x": self.points[:, 0].tolist(),
                "y": self.points[:, 1].tolist(),
                "angle": ang.tolist(),
            },
        }
        return d

    def to_csv(self, path):
        ang = np.empty(len(self.times))
        for c in np.unique(self.chart_ids):
            m = self.chart_ids == c
            ang[m] = velocity_to_angle(self.surface, int(c), self.points[m], self.velocities[m])
        data = np.column_stack([self.times, self.chart_ids, self.points, ang])
        np.savetxt(path, data, delimiter=",", header="t,chart_id,x,y,angle", comments="")


def _extract_nodes(surface, seed, k):
    """Equal-arclength nodes from a seed curve (DiscreteCurve-like or segment)."""
    if hasattr(seed, "vertex_charts"):  # DiscreteCurve
        charts = np.asarray(seed.vertex_charts)
        xy = np.asarray(seed.vertex_xy)
    elif isinstance(seed, GeodesicSegment):
        charts = seed.chart_ids
        xy = seed.points
    elif isinstance(seed, ClosedGeodesic):
        charts = seed.chart_ids
        xy = seed.points
    else:
        raise RefinementError(f"unsupported seed type {type(seed)!r}")
    n = len(xy)
    # cumulative chord lengths in local charts
    seg = np.empty(n)
    for i in range(n):
        j = (i + 1) % n
        c = int(charts[i])
        qj = surface.convert(int(charts[j]), xy[j][None], c, ref_xy=xy[i][None])[0]
        seg[i] = g_norm(surface, c, xy[i][None], (qj - xy[i])[None])[0]
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    L = cum[-1]
    want = np.linspace(0.0, L, k, endpoint=False)
    idx = np.searchsorted(cum, want, side="right") - 1
    idx = np.clip(idx, 0, n - 1)
    frac = (want - cum[idx]) / np.maximum(seg[idx], 1e-300)
    node_charts = np.empty(k, dtype=int)
    node_xy = np.empty((k, 2))
    for a, (i, f) in enumerate(zip(idx, frac)):
        c = int(charts[i])
        j = (i + 1) % n
        qj = surface.convert(int(charts[j]), xy[j][None], c, ref_xy=xy[i][None])[0]
        p = xy[i] + f * (qj - xy[i])
        pc = int(surface.preferred_chart(c, p[None])[0])
        node_charts[a] = pc
        node_xy[a] = surface.convert(c, p[None], pc)[0]
    return node_charts, node_xy, L


def injectivity_lower_bound(surface) -> float:
    """Conservative lower bound used only to choose the node count."""
    base = _revolution_base(surface)
    max_k = surface.max_positive_curvature()
    conj = math.pi / math.sqrt(max_k) if max_k > 0 else np.inf
    if isinstance(base, FlatTorus):
        size = 0.5 * min(base.periods)
    elif isinstance(base, RevolutionSurface):
        rt = base.profile.r_total
        rho_min = float(
            np.min(base.profile.rho(np.linspace(0.01 * rt, 0.99 * rt, 513)))
        )
        size = min(0.45 * rt, math.pi * max(rho_min, 0.05 * rt))
    else:
        size = 1.0
    return min(conj, size)


def refine_closed(
    surface,
    seed,
    k: int | None = None,
    tol: float = 1e-11,
    max_iter: int = 60,
) -> ClosedGeodesic:
    """Newton iteration on the broken-geodesic critical equation.

    Nodes are laid out along the seed at equal arclength; each Newton sweep
    re-solves the local two-point problems between consecutive nodes and
    pushes the nodes by a damped Newton step of the discrete energy gradient.
    """
    inj = injectivity_lower_bound(surface)
    base = _revolution_base(surface)
    if k is None:
        _, _, L0 = _extract_nodes(surface, seed, 8)
        k = int(np.clip(math.ceil(L0 / (0.35 * inj)), 16, 96))
        if isinstance(base, RevolutionSurface) and base.profile.sphere_like:
            k = max(k, int(math.ceil(L0 / (0.4 * base.pol_r))))
    if k < 3:
        raise RefinementError("need at least 3 nodes")
    node_charts, node_xy, L0 = _extract_nodes(surface, seed, k)
    if L0 / k > inj:
        raise RefinementError(
            f"segment length {L0 / k:.3g} exceeds injectivity estimate {inj:.3g}; increase k"
        )

    ang = np.zeros(k)
    T = np.full(k, L0 / k)
    have_guess = False
    last_res = np.inf
    for it in range(max_iter):
        # targets: next node converted into this node's chart
        nxt = np.roll(np.arange(k), -1)
        tgt = np.empty((k, 2))
        for c in np.unique(node_charts):
            m = node_charts == c
            tgt[m] = surface.convert_batch_mixed(node_charts[nxt][m], node_xy[nxt][m], int(c), node_xy[m]) \
                if hasattr(surface, "convert_batch_mixed") else _convert_mixed(
                    surface, node_charts[nxt][m], node_xy[nxt][m], int(c), node_xy[m])
        if not have_guess:
            for i in range(k):
                d = tgt[i] - node_xy[i]
                ang[i] = velocity_to_angle(
                    surface, int(node_charts[i]), node_xy[i][None], d[None]
                )[0]
                T[i] = g_norm(surface, int(node_charts[i]), node_xy[i][None], d[None])[0]
            have_guess = True
        ang, T, end_vel, conv = connect_batch(surface, node_charts, node_xy, tgt, ang, T)
        if not np.all(conv):
            raise RefinementError(f"segment BVP failed on {int((~conv).sum())} segments")
        if np.any(T * math.sqrt(max(surface.max_positive_curvature(), 0.0)) > math.pi * 0.98):
            raise RefinementError("segment exceeds conjugate-point bound; increase k")

        # gradient of E_k at the nodes, in node frames
        dep_vel = np.empty((k, 2))
        for c in np.unique(node_charts):
            m = node_charts == c
            dep_vel[m] = angle_to_velocity(surface, int(c), node_xy[m], ang[m])
        arr_vel = np.empty((k, 2))  # arrival velocity of segment i-1 at node i, in node i's chart
        prv = np.roll(np.arange(k), 1)
        for i in range(k):
            j = prv[i]
            cj, ci = int(node_charts[j]), int(node_charts[i])
            v = end_vel[j][None]
            if cj != ci:
                _, v = surface.convert_with_velocity(cj, tgt[j][None], v, ci)
            arr_vel[i] = normalize_velocity(surface, ci, node_xy[i][None], v)[0]

        grad = 2.0 * k * (T[prv][:, None] * arr_vel - T[:, None] * dep_vel)
        gnorm = np.zeros(k)
        for c in np.unique(node_charts):
            m = node_charts == c
            gnorm[m] = g_norm(surface, int(c), node_xy[m], grad[m])
        res = float(np.max(gnorm)) / (2.0 * k * np.mean(T))
        if res < tol:
            break
        if res > last_res * 10 and it > 5:
            raise RefinementError(f"Newton diverged (residual {res:.3e})")
        last_res = min(last_res, res)

        H, frames = _broken_hessian(surface, node_charts, node_xy, ang, T, end_vel, k)
        g_frame = np.empty(2 * k)
        for i in range(k):
            gm = surface.metric(int(node_charts[i]), node_xy[i][None])[0]
            G = np.array([[gm[0], gm[1]], [gm[1], gm[2]]])
            t_hat, n_hat = frames[i]
            g_frame[2 * i] = grad[i] @ G @ t_hat
            g_frame[2 * i + 1] = grad[i] @ G @ n_hat
        delta, *_ = np.linalg.lstsq(H, -g_frame, rcond=1e-9)
        step_cap = 0.4 * float(np.min(T))
        mag = float(np.max(np.abs(delta)))
        if mag > step_cap:
            delta *= step_cap / mag
        for i in range(k):
            t_hat, n_hat = frames[i]
            node_xy[i] = node_xy[i] + delta[2 * i] * t_hat + delta[2 * i + 1] * n_hat
        # keep nodes in their preferred charts
        for i in range(k):
            c = int(node_charts[i])
            pc = int(surface.preferred_chart(c, node_xy[i][None])[0])
            if pc != c:
                node_xy[i] = surface.convert(c, node_xy[i][None], pc)[0]
                node_charts[i] = pc
                have_guess = False
    else:
        raise RefinementError(f"Newton did not converge (last residual {res:.3e})")

    length = float(np.sum(T))
    geo = ClosedGeodesic(
        surface=surface,
        node_charts=node_charts.copy(),
        node_xy=node_xy.copy(),
        seg_angles=ang.copy(),
        seg_lengths=T.copy(),
        length=length,
        residual=res,
    )
    _fill_samples(geo, per_segment=max(6, 384 // k))
    return geo


def _convert_mixed(surface, charts_from, xys, chart_to, refs):
    out = np.empty_like(xys)
    for c in np.unique(charts_from):
        m = charts_from == c
        out[m] = surface.convert(int(c), xys[m], chart_to, ref_xy=refs[m])
    return out


def _node_frames(surface, node_charts, node_xy, dep_vel, arr_vel):
    k = len(node_xy)
    frames = []
    for i in range(k):
        c = int(node_charts[i])
        v = dep_vel[i] + arr_vel[i]
        t_hat = normalize_velocity(surface, c, node_xy[i][None], v[None])[0]
        gm = surface.metric(c, node_xy[i][None])[0]
        det = math.sqrt(gm[0] * gm[2] - gm[1] ** 2)
        orient = surface.chart_spec(c).orientation
        n_hat = orient * np.array(
            [-(gm[1] * t_hat[0] + gm[2] * t_hat[1]), gm[0] * t_hat[0] + gm[1] * t_hat[1]]
        ) / det
        frames.append((t_hat, n_hat))
    return frames


def _broken_hessian(surface, node_charts, node_xy, ang, T, end_vel, k):
    """Index-form Hessian of E_k in per-node (tangent, normal) frames.

    Per segment: tangential block 2k*[[1,-1],[-1,1]]; orthogonal block from the
    arclength Jacobi transfer Psi, namely (2k d/Psi12)*[[Psi11,-1],[-1,Psi22]].
    Exact at critical points; used as a Newton model elsewhere.
    """
    dep_vel = np.empty((k, 2))
    for c in np.unique(node_charts):
        m = node_charts == c
        dep_vel[m] = angle_to_velocity(surface, int(c), node_xy[m], ang[m])
    prv = np.roll(np.arange(k), 1)
    arr_vel = np.empty((k, 2))  # arrival velocity of segment i-1 at node i
    for i in range(k):
        j = prv[i]
        cj, ci = int(node_charts[j]), int(node_charts[i])
        v = end_vel[j][None]
        if cj != ci:
            pos_in_cj = _convert_mixed(
                surface, np.array([ci]), node_xy[i][None], cj, node_xy[j][None]
            )
            _, v = surface.convert_with_velocity(cj, pos_in_cj, v, ci)
        arr_vel[i] = normalize_velocity(surface, ci, node_xy[i][None], v)[0]
    frames = _node_frames(surface, node_charts, node_xy, dep_vel, arr_vel)

    # arclength Jacobi transfer along each segment
    vel0 = np.empty((k, 2))
    for c in np.unique(node_charts):
        m = node_charts == c
        vel0[m] = angle_to_velocity(surface, int(c), node_xy[m], ang[m])
    out = _rk4_sweep(surface, node_charts, node_xy, vel0, T, n_steps=48, jacobi_K=True)
    psi11, psi21, psi12, psi22 = out[:, 4], out[:, 5], out[:, 6], out[:, 7]

    H = np.zeros((2 * k, 2 * k))
    for i in range(k):
        j = (i + 1) % k
        w = 2.0 * k
        # frame rotation angles between segment-end frames and node frames
        ci = int(node_charts[i])
        cj = int(node_charts[j])
        t_i, n_i = frames[i]
        t_j, n_j = frames[j]
        gm_i = surface.metric(ci, node_xy[i][None])[0]
        Gi = np.array([[gm_i[0], gm_i[1]], [gm_i[1], gm_i[2]]])
        gm_j = surface.metric(cj, node_xy[j][None])[0]
        Gj = np.array([[gm_j[0], gm_j[1]], [gm_j[1], gm_j[2]]])
        # departure frame at i: (v_hat_i, n(v_hat_i)); arrival frame at j
        vd = dep_vel[i]
        ca_i = float(vd @ Gi @ t_i)
        sa_i = float(vd @ Gi @ n_i)
        Ri = np.array([[ca_i, -sa_i], [sa_i, ca_i]])  # seg-frame -> node-frame
        va = arr_vel[j]
        ca_j = float(va @ Gj @ t_j)
        sa_j = float(va @ Gj @ n_j)
        Rj = np.array([[ca_j, -sa_j], [sa_j, ca_j]])
        d = T[i]
        s_orth = (2.0 * k * d / psi12[i]) * np.array(
            [[psi11[i], -1.0], [-1.0, psi22[i]]]
        )
        B00 = np.diag([w, s_orth[0, 0]])
        B01 = np.diag([-w, s_orth[0, 1]])
        B11 = np.diag([w, s_orth[1, 1]])
        H[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] += Ri @ B00 @ Ri.T
        H[2 * i : 2 * i + 2, 2 * j : 2 * j + 2] += Ri @ B01 @ Rj.T
        H[2 * j : 2 * j + 2, 2 * i : 2 * i + 2] += Rj @ B01.T @ Ri.T
        H[2 * j : 2 * j + 2, 2 * j : 2 * j + 2] += Rj @ B11 @ Rj.T
    return H, frames


def _fill_samples(geo: ClosedGeodesic, per_segment: int = 8):
    """Densely sample the refined geodesic, segment by segment."""
    surface = geo.surface
    k = geo.k
    n_steps = per_segment
    vel0 = np.empty((k, 2))
    for c in np.unique(geo.node_charts):
        m = geo.node_charts == c
        vel0[m] = angle_to_velocity(surface, int(c), geo.node_xy[m], geo.seg_angles[m])
    ts, charts, pts, vels = [], [], [], []
    t_acc = 0.0
    for i in range(k):
        c = int(geo.node_charts[i])
        h = geo.seg_lengths[i] / n_steps
        state = np.concatenate([geo.node_xy[i], vel0[i]])[None, :]
        cid = np.array([c])
        for s in range(n_steps):
            ts.append(t_acc + s * h)
            charts.append(c)
            pts.append(state[0, :2].copy())
            vels.append(state[0, 2:].copy())
            state = _rk4_single_step(surface, cid, state, h)
        t_acc += geo.seg_lengths[i]
    geo.times = np.array(ts)
    geo.chart_ids = np.array(charts)
    geo.points = np.array(pts)
    geo.velocities = np.array(vels)
    kv = np.empty(len(ts))
    for c in np.unique(geo.chart_ids):
        m = geo.chart_ids == c
        kv[m] = surface.curvature(int(c), geo.points[m])
    geo.curvature_values = kv


def _rk4_single_step(surface, chart_ids, state, h):
    def deriv(s):
        xy, vel = s[:, 0:2], s[:, 2:4]
        acc = _acc_batch(surface, chart_ids, xy, vel)
        return np.concatenate([vel, acc], axis=1)

    k1 = deriv(state)
    k2 = deriv(state + 0.5 * h * k1)
    k3 = deriv(state + 0.5 * h * k2)
    k4 = deriv(state + h * k3)
    return state + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


# ---------------------------------------------------------------------------
# Exact closed geodesics on symmetric surfaces
# ---------------------------------------------------------------------------


def exact_parallel(surface, r_value: float, orientation: int = 1) -> ClosedGeodesic:
    """The circle of revolution r = r_value, which must satisfy rho'(r) = 0."""
    base = _revolution_base(surface)
    if not isinstance(base, RevolutionSurface):
        raise DomainError("exact parallels require a revolution surface")
    prof = base.profile
    if abs(float(prof.rho_dot(r_value))) > 1e-8:
        raise DomainError(f"parallel r={r_value} is not a geodesic (rho' != 0)")
    if surface is not base:
        # conformal factor must be flat across the parallel for it to stay geodesic
        f_grad = surface.f_grad_chart(BAND if prof.sphere_like else 0,
                                      np.array([[r_value, 0.0]]))
        if abs(f_grad[0, 0]) > 1e-10:
            raise DomainError("parallel is not geodesic for the perturbed metric")
    rho = float(prof.rho(r_value))
    scale = 1.0
    if surface is not base:
        scale = math.exp(float(surface.f_value(BAND if prof.sphere_like else 0,
                                               np.array([[r_value, 0.0]]))[0]))
    L = 2 * math.pi * rho * scale
    n = 256
    t = np.linspace(0.0, L, n, endpoint=False)
    th = orientation * t / (rho * scale)
    chart = BAND if prof.sphere_like else 0
    pts = np.column_stack([np.full(n, r_value), th])
    vels = np.column_stack([np.zeros(n), np.full(n, orientation / (rho * scale))])
    Kval = float(surface.curvature(chart, np.array([[r_value, 0.0]]))[0])
    geo = ClosedGeodesic(
        surface=surface,
        node_charts=np.full(16, chart, dtype=int),
        node_xy=np.column_stack(
            [np.full(16, r_value), orientation * np.linspace(0, L, 16, endpoint=False) / (rho * scale)]
        ),
        seg_angles=np.zeros(16),
        seg_lengths=np.full(16, L / 16),
        length=L,
        residual=0.0,
        times=t,
        chart_ids=np.full(n, chart, dtype=int),
        points=pts,
        velocities=vels,
        curvature_values=np.full(n, Kval),
        analytic_curvature=lambda s, K=Kval: np.full(np.shape(np.asarray(s)), K),
    )
    return geo


def exact_meridian(surface, theta0: float = 0.0) -> ClosedGeodesic:
    """The meridian through both poles of a sphere-like revolution surface.

    Exact by symmetry; its curvature along arclength is the profile curvature
    at the sawtooth radial coordinate, so downstream Jacobi integrations are
    not limited by refinement error.
    """
    base = _revolution_base(surface)
    if not isinstance(base, RevolutionSurface) or not base.profile.sphere_like:
        raise DomainError("exact meridians require a sphere-like revolution surface")
    if surface is not base:
        raise DomainError("exact meridians only available for unperturbed metrics")
    prof = base.profile
    rt = prof.r_total
    L = 2.0 * rt
    n = 512
    t = np.linspace(0.0, L, n, endpoint=False)

    def r_of_t(tt):
        tt = np.mod(tt, L)
        return np.where(tt <= rt, tt, L - tt)

    branch_b = t > rt
    r = r_of_t(t)
    th = np.where(branch_b, theta0 + math.pi, theta0)
    charts = np.asarray(base.preferred_chart(BAND, np.column_stack([np.clip(r, 1e-9, rt - 1e-9), th])))
    pts = np.empty((n, 2))
    vels = np.empty((n, 2))
    for i in range(n):
        c = int(charts[i])
        if c == BAND:
            pts[i] = (r[i], th[i])
            vels[i] = (1.0, 0.0) if not branch_b[i] else (-1.0, 0.0)
        elif c == NORTH:
            pts[i] = (r[i] * math.cos(th[i]), r[i] * math.sin(th[i]))
            sgn = 1.0 if not branch_b[i] else 1.0
            # velocity passes straight through the pole along (cos theta0, sin theta0)
            vels[i] = (math.cos(theta0), math.sin(theta0))
        else:
            s = rt - r[i]
            pts[i] = (s * math.cos(th[i]), s * math.sin(th[i]))
            vels[i] = (-math.cos(theta0), -math.sin(theta0))

    def curv(s):
        return prof.curvature_r(r_of_t(np.asarray(s, dtype=float)))

    k = 32
    tn = np.linspace(0.0, L, k, endpoint=False)
    rn = r_of_t(tn)
    thn = np.where(tn > rt, theta0 + math.pi, theta0)
    node_charts = np.asarray(
        base.preferred_chart(BAND, np.column_stack([np.clip(rn, 1e-9, rt - 1e-9), thn]))
    )
    node_xy = np.empty((k, 2))
    for i in range(k):
        c = int(node_charts[i])
        if c == BAND:
            node_xy[i] = (rn[i], thn[i])
        elif c == NORTH:
            node_xy[i] = (rn[i] * math.cos(thn[i]), rn[i] * math.sin(thn[i]))
        else:
            s = rt - rn[i]
            node_xy[i] = (s * math.cos(thn[i]), s * math.sin(thn[i]))
    kv = prof.curvature_r(r)
    return ClosedGeodesic(
        surface=surface,
        node_charts=node_charts,
        node_xy=node_xy,
        seg_angles=np.zeros(k),
        seg_lengths=np.full(k, L / k),
        length=L,
        residual=0.0,
        times=t,
        chart_ids=np.asarray(charts),
        points=pts,
        velocities=vels,
        curvature_values=np.asarray(kv),
        analytic_curvature=curv,
    )


def exact_meridian_circle(surface, theta0: float = 0.0) -> ClosedGeodesic:
    """The theta = const meridian circle of a periodic revolution profile."""
    base = _revolution_base(surface)
    if not isinstance(base, RevolutionSurface) or base.profile.sphere_like:
        raise DomainError("meridian circles require a periodic revolution profile")
    if surface is not base:
        raise DomainError("exact meridian circles only available for unperturbed metrics")
    prof = base.profile
    L = prof.r_total
    n = 256
    t = np.linspace(0.0, L, n, endpoint=False)
    pts = np.column_stack([t, np.full(n, theta0)])
    vels = np.column_stack([np.ones(n), np.zeros(n)])
    k = 16
    tk = np.linspace(0.0, L, k, endpoint=False)
    return ClosedGeodesic(
        surface=surface,
        node_charts=np.zeros(k, dtype=int),
        node_xy=np.column_stack([tk, np.full(k, theta0)]),
        seg_angles=np.zeros(k),
        seg_lengths=np.full(k, L / k),
        length=L,
        residual=0.0,
        times=t,
        chart_ids=np.zeros(n, dtype=int),
        points=pts,
        velocities=vels,
        curvature_values=np.asarray(prof.curvature_r(t)),
        analytic_curvature=lambda s: prof.curvature_r(np.mod(np.asarray(s, dtype=float), L)),
    )


def exact_torus_line(torus: FlatTorus, m: int, n: int, offset: tuple[float, float] = (0.0, 0.0)) -> ClosedGeodesic:
    """Straight closed geodesic of homology class (m, n) on a flat torus."""
    if m == 0 and n == 0:
        raise DomainError("class (0,0) has no closed geodesic")
    p1, p2 = torus.periods
    L = math.hypot(m * p1, n * p2)
    direction = np.array([m * p1, n * p2]) / L
    nn = 256
    t = np.linspace(0.0, L, nn, endpoint=False)
    pts = np.asarray(offset)[None, :] + t[:, None] * direction[None, :]
    vels = np.tile(direction, (nn, 1))
    k = 16
    tk = np.linspace(0.0, L, k, endpoint=False)
    return ClosedGeodesic(
        surface=torus,
        node_charts=np.zeros(k, dtype=int),
        node_xy=np.asarray(offset)[None, :] + tk[:, None] * direction[None, :],
        seg_angles=np.full(k, math.atan2(direction[1], direction[0])),
        seg_lengths=np.full(k, L / k),
        length=L,
        residual=0.0,
        times=t,
        chart_ids=np.zeros(nn, dtype=int),
        points=pts,
        velocities=vels,
        curvature_values=np.zeros(nn),
        analytic_curvature=lambda s: np.zeros(np.shape(np.asarray(s))),
    )
