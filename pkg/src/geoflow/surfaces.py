"""Chart-based surface models: metrics, Christoffel symbols, Gaussian curvature.

Every surface is described by a small atlas of coordinate charts.  Surfaces of
revolution carry a cylindrical band chart (r, theta) plus, when the profile
closes up at poles, two polar disk charts in normal-like coordinates that stay
regular where the band chart degenerates.

All core evaluators are vectorized over point arrays of shape (n, 2); scalar
wrappers taking a ChartPoint are provided for convenience.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .profiles import CapProfile, build_cap, bump


class DomainError(ValueError):
    """Point outside the chart atlas or otherwise invalid for the surface."""


@dataclass(frozen=True)
class ChartPoint:
    chart_id: int
    x: float
    y: float

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class ChartSpec:
    chart_id: int
    name: str
    # validity rectangle, open; None bound means unbounded
    x_range: tuple[float | None, float | None]
    y_range: tuple[float | None, float | None]
    # coordinate periods (None if not periodic)
    x_period: float | None
    y_period: float | None
    orientation: int = 1


def _wrap_near(values, ref, period):
    """Shift periodic coordinates by multiples of the period to land nearest ref."""
    if period is None:
        return values
    return values - period * np.round((values - ref) / period)


def invert_metric(g):
    """Inverse of (n,3)-packed symmetric 2x2 metrics; returns (n,3)."""
    g11, g12, g22 = g[..., 0], g[..., 1], g[..., 2]
    det = g11 * g22 - g12 * g12
    return np.stack([g22 / det, -g12 / det, g11 / det], axis=-1)


def christoffel_from_jac(g, dg):
    """Levi-Civita symbols from metric (n,3) and derivatives (n,2,3).

    dg[:, l, m] is the partial derivative along coordinate l of the m-th packed
    coefficient (g11, g12, g22).  Returns (n,2,2,2) indexed [point, k, i, j].
    """
    n = g.shape[0]
    gm = np.empty((n, 2, 2))
    gm[:, 0, 0], gm[:, 0, 1], gm[:, 1, 0], gm[:, 1, 1] = g[:, 0], g[:, 1], g[:, 1], g[:, 2]
    ginv_p = invert_metric(g)
    gi = np.empty((n, 2, 2))
    gi[:, 0, 0], gi[:, 0, 1], gi[:, 1, 0], gi[:, 1, 1] = (
        ginv_p[:, 0],
        ginv_p[:, 1],
        ginv_p[:, 1],
        ginv_p[:, 2],
    )
    dgm = np.empty((n, 2, 2, 2))  # [point, l, i, j]
    dgm[:, :, 0, 0], dgm[:, :, 0, 1] = dg[:, :, 0], dg[:, :, 1]
    dgm[:, :, 1, 0], dgm[:, :, 1, 1] = dg[:, :, 1], dg[:, :, 2]
    # Gamma^k_ij = 1/2 g^{kl} (d_i g_jl + d_j g_il - d_l g_ij)
    di_gjl = np.einsum("nilj->nijl", dgm)  # d_i g_lj -> [n,i,j,l]
    dj_gil = np.einsum("njli->nijl", dgm)
    dl_gij = np.einsum("nlij->nijl", dgm)
    brackets = di_gjl + dj_gil - dl_gij
    return 0.5 * np.einsum("nkl,nijl->nkij", gi, brackets)


class SurfaceModel(ABC):
    """A closed orientable Riemannian surface with a finite chart atlas."""

    kind: str = "abstract"
    genus: int = 0

    def __init__(self):
        self._area: float | None = None
        self._max_curv = None

    # -- abstract vectorized core -----------------------------------------

    @property
    @abstractmethod
    def charts(self) -> list[ChartSpec]: ...

    @abstractmethod
    def metric(self, chart_id: int, xy: np.ndarray) -> np.ndarray:
        """Packed metric coefficients (g11, g12, g22), shape (n,3)."""

    @abstractmethod
    def metric_jac(self, chart_id: int, xy: np.ndarray) -> np.ndarray:
        """Coordinate derivatives of the packed coefficients, shape (n,2,3)."""

    @abstractmethod
    def curvature(self, chart_id: int, xy: np.ndarray) -> np.ndarray:
        """Gaussian curvature, shape (n,)."""

    @abstractmethod
    def preferred_chart(self, chart_id: int, xy: np.ndarray) -> np.ndarray:
        """Chart each point should be represented in, shape (n,) int."""

    @abstractmethod
    def convert(self, chart_from: int, xy: np.ndarray, chart_to: int,
                ref_xy: np.ndarray | None = None) -> np.ndarray:
        """Transition map between charts; ref_xy picks the periodic branch."""

    # -- shared implementations -------------------------------------------

    def chart_spec(self, chart_id: int) -> ChartSpec:
        for spec in self.charts:
            if spec.chart_id == chart_id:
                return spec
        raise DomainError(f"unknown chart {chart_id} for {self.kind}")

    def point_valid(self, chart_id: int, xy: np.ndarray) -> np.ndarray:
        spec = self.chart_spec(chart_id)
        xy = np.atleast_2d(xy)
        ok = np.ones(xy.shape[0], dtype=bool)
        for axis, (rng, period) in enumerate(
            [(spec.x_range, spec.x_period), (spec.y_range, spec.y_period)]
        ):
            if period is not None:
                continue
            lo, hi = rng
            if lo is not None:
                ok &= xy[:, axis] >= lo - 1e-12
            if hi is not None:
                ok &= xy[:, axis] <= hi + 1e-12
        return ok

    def christoffel(self, chart_id: int, xy: np.ndarray) -> np.ndarray:
        xy = np.atleast_2d(xy)
        return christoffel_from_jac(self.metric(chart_id, xy), self.metric_jac(chart_id, xy))

    def convert_with_velocity(self, chart_from, xy, vel, chart_to, ref_xy=None):
        """Transition points and push tangent vectors through the chart jacobian."""
        xy = np.atleast_2d(xy)
        vel = np.atleast_2d(vel)
        xy2 = self.convert(chart_from, xy, chart_to, ref_xy)
        jac = self.transition_jacobian(chart_from, xy, chart_to)
        vel2 = np.einsum("nij,nj->ni", jac, vel)
        return xy2, vel2

    def transition_jacobian(self, chart_from, xy, chart_to) -> np.ndarray:
        """Jacobian of the transition map, default by central differences."""
        xy = np.atleast_2d(xy)
        h = 1e-7
        jac = np.empty((xy.shape[0], 2, 2))
        base_ref = self.convert(chart_from, xy, chart_to)
        for axis in range(2):
            dp = xy.copy()
            dp[:, axis] += h
            dm = xy.copy()
            dm[:, axis] -= h
            jac[:, :, axis] = (
                self.convert(chart_from, dp, chart_to, base_ref)
                - self.convert(chart_from, dm, chart_to, base_ref)
            ) / (2 * h)
        return jac

    def area_element(self, chart_id: int, xy: np.ndarray) -> np.ndarray:
        g = self.metric(chart_id, xy)
        return np.sqrt(g[:, 0] * g[:, 2] - g[:, 1] ** 2)

    # -- scalar wrappers (spec-facing operations) ---------------------------

    def metric_at(self, p: ChartPoint) -> tuple[float, float, float]:
        if not bool(self.point_valid(p.chart_id, p.xy[None, :])[0]):
            raise DomainError(f"point {p} outside atlas of {self.kind}")
        g = self.metric(p.chart_id, p.xy[None, :])[0]
        return float(g[0]), float(g[1]), float(g[2])

    def gaussian_curvature(self, p: ChartPoint) -> float:
        if not bool(self.point_valid(p.chart_id, p.xy[None, :])[0]):
            raise DomainError(f"point {p} outside atlas of {self.kind}")
        return float(self.curvature(p.chart_id, p.xy[None, :])[0])

    def christoffel_at(self, p: ChartPoint) -> np.ndarray:
        """Christoffel symbols at p, shape (2,2,2), symmetric in lower indices."""
        if not bool(self.point_valid(p.chart_id, p.xy[None, :])[0]):
            raise DomainError(f"point {p} outside atlas of {self.kind}")
        return self.christoffel(p.chart_id, p.xy[None, :])[0]

    # -- global measurements -------------------------------------------------

    def area(self) -> float:
        if self._area is None:
            self._area = self._compute_area()
        return self._area

    @abstractmethod
    def _compute_area(self) -> float: ...

    @abstractmethod
    def diameter_estimate(self) -> float: ...

    def max_positive_curvature(self) -> float:
        if self._max_curv is None:
            self._max_curv = self._scan_max_curvature()
        return self._max_curv

    @abstractmethod
    def _scan_max_curvature(self) -> float: ...


def brioschi_curvature(surface: SurfaceModel, chart_id: int, xy: np.ndarray,
                       h: float = 1e-4) -> np.ndarray:
    """Gaussian curvature from metric coefficients alone (Brioschi formula),
    with finite-difference derivatives.  Cross-check for analytic curvature."""
    xy = np.atleast_2d(xy)

    def m(dx, dy):
        shifted = xy + np.array([dx, dy])
        return surface.metric(chart_id, shifted)

    g = m(0, 0)
    gx = (m(h, 0) - m(-h, 0)) / (2 * h)
    gy = (m(0, h) - m(0, -h)) / (2 * h)
    gxx = (m(h, 0) - 2 * g + m(-h, 0)) / h**2
    gyy = (m(0, h) - 2 * g + m(0, -h)) / h**2
    gxy = (m(h, h) - m(h, -h) - m(-h, h) + m(-h, -h)) / (4 * h**2)

    E, F, G = g[:, 0], g[:, 1], g[:, 2]
    Eu, Ev = gx[:, 0], gy[:, 0]
    Fu, Fv = gx[:, 1], gy[:, 1]
    Gu, Gv = gx[:, 2], gy[:, 2]
    Evv, Guu, Fuv = gyy[:, 0], gxx[:, 2], gxy[:, 1]

    det1 = (
        (-0.5 * Evv + Fuv - 0.5 * Guu) * (E * G - F * F)
        - (0.5 * Eu) * ((Fv - 0.5 * Gu) * G - 0.5 * Gv * F)
        + (Fu - 0.5 * Ev) * ((Fv - 0.5 * Gu) * F - 0.5 * Gv * E)
    )
    det2 = -(0.5 * Ev) * (0.5 * Ev * G - 0.5 * Gu * F) + (0.5 * Gu) * (
        0.5 * Ev * F - 0.5 * Gu * E
    )
    return (det1 - det2) / (E * G - F * F) ** 2


# ---------------------------------------------------------------------------
# Flat torus
# ---------------------------------------------------------------------------


class FlatTorus(SurfaceModel):
    kind = "flat_torus"
    genus = 1

    def __init__(self, periods: tuple[float, float] = (2 * math.pi, 2 * math.pi)):
        super().__init__()
        self.periods = (float(periods[0]), float(periods[1]))
        self._charts = [
            ChartSpec(0, "torus", (None, None), (None, None), self.periods[0], self.periods[1])
        ]

    @property
    def charts(self):
        return self._charts

    def metric(self, chart_id, xy):
        xy = np.atleast_2d(xy)
        g = np.zeros((xy.shape[0], 3))
        g[:, 0] = 1.0
        g[:, 2] = 1.0
        return g

    def metric_jac(self, chart_id, xy):
        xy = np.atleast_2d(xy)
        return np.zeros((xy.shape[0], 2, 3))

    def curvature(self, chart_id, xy):
        xy = np.atleast_2d(xy)
        return np.zeros(xy.shape[0])

    def preferred_chart(self, chart_id, xy):
        xy = np.atleast_2d(xy)
        return np.zeros(xy.shape[0], dtype=int)

    def convert(self, chart_from, xy, chart_to, ref_xy=None):
        xy = np.atleast_2d(xy).copy()
        if ref_xy is not None:
            ref_xy = np.atleast_2d(ref_xy)
            xy[:, 0] = _wrap_near(xy[:, 0], ref_xy[:, 0], self.periods[0])
            xy[:, 1] = _wrap_near(xy[:, 1], ref_xy[:, 1], self.periods[1])
        return xy

    def transition_jacobian(self, chart_from, xy, chart_to):
        xy = np.atleast_2d(xy)
        jac = np.zeros((xy.shape[0], 2, 2))
        jac[:, 0, 0] = 1.0
        jac[:, 1, 1] = 1.0
        return jac

    def _compute_area(self):
        return self.periods[0] * self.periods[1]

    def diameter_estimate(self):
        return 0.5 * math.hypot(self.periods[0], self.periods[1])

    def _scan_max_curvature(self):
        return 0.0


# ---------------------------------------------------------------------------
# Profiles for surfaces of revolution
# ---------------------------------------------------------------------------


class RevolutionProfileBase(ABC):
    """Profile rho(r) of the warped metric dr^2 + rho(r)^2 dtheta^2."""

    r_total: float
    sphere_like: bool  # poles at r = 0 and r = r_total

    @abstractmethod
    def rho(self, r): ...

    @abstractmethod
    def rho_dot(self, r): ...

    @abstractmethod
    def curvature_r(self, r):
        """-rho''/rho with the pole limit filled in."""

    def rho_ddot(self, r):
        r = np.asarray(r, dtype=float)
        return -self.curvature_r(r) * self.rho(r)

    # stabilized combinations for the polar charts (sphere-like only):
    # V(d) = (rho(d)^2 - d^2) / d^4 as a function of the distance d to the pole
    def pole_V(self, d, south: bool):  # pragma: no cover - overridden when sphere_like
        raise NotImplementedError

    def pole_V_dot(self, d, south: bool):  # pragma: no cover
        raise NotImplementedError


class SinProfile(RevolutionProfileBase):
    """Round sphere of radius a: rho(r) = a sin(r/a) on [0, pi a]."""

    sphere_like = True

    def __init__(self, radius: float):
        self.radius = float(radius)
        self.r_total = math.pi * self.radius

    def rho(self, r):
        return self.radius * np.sin(np.asarray(r, dtype=float) / self.radius)

    def rho_dot(self, r):
        return np.cos(np.asarray(r, dtype=float) / self.radius)

    def curvature_r(self, r):
        r = np.asarray(r, dtype=float)
        return np.full(r.shape, 1.0 / self.radius**2)

    # (sin^2 s / s^2 - 1)/s^2 = -1/3 + 2s^2/45 - s^4/315 + 2s^6/14175 - 2s^8/467775

    def pole_V(self, d, south: bool):
        d = np.asarray(d, dtype=float)
        s = d / self.radius
        small = np.abs(s) < 0.5
        s2 = s * s
        series = (
            -1.0 / 3.0
            + s2 * (2.0 / 45.0 + s2 * (-1.0 / 315.0 + s2 * (2.0 / 14175.0 - s2 * 2.0 / 467775.0)))
        ) / self.radius**2
        with np.errstate(divide="ignore", invalid="ignore"):
            phi = np.sin(s) / np.where(s == 0, 1.0, s)
            direct = (phi * phi - 1.0) / np.where(d == 0, 1.0, d * d)
        return np.where(small, series, direct)

    def pole_V_dot(self, d, south: bool):
        d = np.asarray(d, dtype=float)
        s = d / self.radius
        small = np.abs(s) < 0.5
        s2 = s * s
        series = (
            s * (4.0 / 45.0 + s2 * (-4.0 / 315.0 + s2 * (12.0 / 14175.0 - s2 * 16.0 / 467775.0)))
        ) / self.radius**3
        with np.errstate(divide="ignore", invalid="ignore"):
            phi = np.sin(s) / np.where(s == 0, 1.0, s)
            dphi = (np.cos(s) - phi) / np.where(s == 0, 1.0, s) / self.radius
            V = self.pole_V(d, south)
            direct = (2.0 * phi * dphi) / np.where(d == 0, 1.0, d * d) - 2.0 * V / np.where(
                d == 0, 1.0, d
            )
        return np.where(small, series, direct)


class TorusProfile(RevolutionProfileBase):
    """Torus of revolution: rho(u) = R + a cos(u/a), u the minor arclength."""

    sphere_like = False

    def __init__(self, major: float, minor: float):
        if not major > minor > 0:
            raise DomainError("torus of revolution requires major > minor > 0")
        self.major = float(major)
        self.minor = float(minor)
        self.r_total = 2 * math.pi * self.minor

    def rho(self, r):
        r = np.asarray(r, dtype=float)
        return self.major + self.minor * np.cos(r / self.minor)

    def rho_dot(self, r):
        return -np.sin(np.asarray(r, dtype=float) / self.minor)

    def curvature_r(self, r):
        r = np.asarray(r, dtype=float)
        c = np.cos(r / self.minor)
        return c / (self.minor * (self.major + self.minor * c))


class CapPairProfile(RevolutionProfileBase):
    """Two copies of a focusing cap joined by a flat cylinder of given length."""

    sphere_like = True

    def __init__(self, cap: CapProfile, cylinder_length: float):
        if cylinder_length < 0:
            raise DomainError("cylinder length must be nonnegative")
        self.cap = cap
        self.cylinder_length = float(cylinder_length)
        self.r_total = 2 * cap.r0 + self.cylinder_length

    def _split(self, r):
        r = np.asarray(r, dtype=float)
        r0 = self.cap.r0
        in_cap1 = r <= r0
        in_cap2 = r >= r0 + self.cylinder_length
        in_cyl = ~(in_cap1 | in_cap2)
        return r, in_cap1, in_cyl, in_cap2

    def rho(self, r):
        r, c1, cyl, c2 = self._split(r)
        out = np.ones_like(r)
        out[c1] = self.cap.rho(r[c1])
        out[c2] = self.cap.rho(self.r_total - r[c2])
        return out

    def rho_dot(self, r):
        r, c1, cyl, c2 = self._split(r)
        out = np.zeros_like(r)
        out[c1] = self.cap.rho_dot(r[c1])
        out[c2] = -self.cap.rho_dot(self.r_total - r[c2])
        return out

    def curvature_r(self, r):
        r, c1, cyl, c2 = self._split(r)
        out = np.zeros_like(r)
        out[c1] = self.cap.curvature(r[c1])
        out[c2] = self.cap.curvature(self.r_total - r[c2])
        return out

    def pole_V(self, d, south: bool):
        d = np.asarray(d, dtype=float)
        dm = self.cap.rho_minus_r(d)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = dm * (dm + 2.0 * d) / np.where(d == 0, 1.0, d**4)
        c3, c4, c5 = self.cap._series
        return np.where(d < self.cap.r0 * 1e-6, 2.0 * c3, out)

    def pole_V_dot(self, d, south: bool):
        d = np.asarray(d, dtype=float)
        dm = self.cap.rho_minus_r(d)
        dmd = self.cap.rho_dot_minus_one(d)
        c3, c4, c5 = self.cap._series
        with np.errstate(divide="ignore", invalid="ignore"):
            V = dm * (dm + 2.0 * d) / np.where(d == 0, 1.0, d**4)
            out = (dmd * (dm + 2.0 * d) + dm * (dmd + 2.0)) / np.where(d == 0, 1.0, d**4) - (
                4.0 * V / np.where(d == 0, 1.0, d)
            )
        small = d < self.cap.r0 * 1e-4
        series = 2.0 * c4 + 2.0 * (c3 * c3 + 2.0 * c5) * d
        return np.where(small, series, out)


# ---------------------------------------------------------------------------
# Surface of revolution
# ---------------------------------------------------------------------------

NORTH, BAND, SOUTH = 0, 1, 2


class RevolutionSurface(SurfaceModel):
    """Surface of revolution over a profile, with pole-safe atlas.

    Sphere-like profiles get three charts: a north polar disk (chart 0) in
    normal-like Cartesian coordinates, a cylindrical band (chart 1) in (r,
    theta), and a south polar disk (chart 2).  Periodic profiles (tori) use a
    single doubly periodic (r, theta) chart with id 0.
    """

    def __init__(self, profile: RevolutionProfileBase, kind: str = "revolution", genus: int = 0):
        super().__init__()
        self.profile = profile
        self.kind = kind
        self.genus = genus
        rt = profile.r_total
        if profile.sphere_like:
            self.pol_r = 0.35 * rt
            band_lo, band_hi = 0.5 * self.pol_r, rt - 0.5 * self.pol_r
            self._charts = [
                ChartSpec(NORTH, "north_polar", (-self.pol_r, self.pol_r),
                          (-self.pol_r, self.pol_r), None, None, orientation=1),
                ChartSpec(BAND, "band", (band_lo, band_hi), (None, None), None, 2 * math.pi),
                ChartSpec(SOUTH, "south_polar", (-self.pol_r, self.pol_r),
                          (-self.pol_r, self.pol_r), None, None, orientation=-1),
            ]
            self.band_range = (band_lo, band_hi)
        else:
            self._charts = [
                ChartSpec(0, "band", (None, None), (None, None), rt, 2 * math.pi)
            ]
            self.band_range = (0.0, rt)

    @property
    def charts(self):
        return self._charts

    # -- chart geometry -----------------------------------------------------

    def point_valid(self, chart_id, xy):
        xy = np.atleast_2d(xy)
        if not self.profile.sphere_like:
            return np.ones(xy.shape[0], dtype=bool)
        if chart_id == BAND:
            lo, hi = self.band_range
            return (xy[:, 0] > lo - 1e-12) & (xy[:, 0] < hi + 1e-12)
        if chart_id in (NORTH, SOUTH):
            return np.hypot(xy[:, 0], xy[:, 1]) < self.pol_r + 1e-12
        raise DomainError(f"unknown chart {chart_id}")

    def global_r_theta(self, chart_id, xy):
        """Global profile coordinates (r, theta) for any chart point."""
        xy = np.atleast_2d(xy)
        if not self.profile.sphere_like or chart_id == BAND:
            r = xy[:, 0]
            th = xy[:, 1]
            return r, th
        d = np.hypot(xy[:, 0], xy[:, 1])
        th = np.arctan2(xy[:, 1], xy[:, 0])
        if chart_id == NORTH:
            return d, th
        if chart_id == SOUTH:
            return self.profile.r_total - d, th
        raise DomainError(f"unknown chart {chart_id}")

    def convert(self, chart_from, xy, chart_to, ref_xy=None):
        xy = np.atleast_2d(xy)
        if chart_from == chart_to:
            out = xy.copy()
            spec = self.chart_spec(chart_to)
            if ref_xy is not None and spec.y_period is not None:
                ref_xy = np.atleast_2d(ref_xy)
                out[:, 1] = _wrap_near(out[:, 1], ref_xy[:, 1], spec.y_period)
                if spec.x_period is not None:
                    out[:, 0] = _wrap_near(out[:, 0], ref_xy[:, 0], spec.x_period)
            return out
        r, th = self.global_r_theta(chart_from, xy)
        if chart_to == BAND:
            if ref_xy is not None:
                th = _wrap_near(th, np.atleast_2d(ref_xy)[:, 1], 2 * math.pi)
            return np.column_stack([r, th])
        if chart_to == NORTH:
            return np.column_stack([r * np.cos(th), r * np.sin(th)])
        if chart_to == SOUTH:
            s = self.profile.r_total - r
            return np.column_stack([s * np.cos(th), s * np.sin(th)])
        raise DomainError(f"unknown chart {chart_to}")

    def transition_jacobian(self, chart_from, xy, chart_to):
        xy = np.atleast_2d(xy)
        n = xy.shape[0]
        if chart_from == chart_to:
            jac = np.zeros((n, 2, 2))
            jac[:, 0, 0] = jac[:, 1, 1] = 1.0
            return jac
        r, th = self.global_r_theta(chart_from, xy)
        # jacobian from (r, theta) to target coordinates
        if chart_to == BAND:
            j_to = np.zeros((n, 2, 2))
            j_to[:, 0, 0] = j_to[:, 1, 1] = 1.0
        elif chart_to in (NORTH, SOUTH):
            sgn = 1.0 if chart_to == NORTH else -1.0
            d = r if chart_to == NORTH else self.profile.r_total - r
            j_to = np.empty((n, 2, 2))
            j_to[:, 0, 0] = sgn * np.cos(th)
            j_to[:, 0, 1] = -d * np.sin(th)
            j_to[:, 1, 0] = sgn * np.sin(th)
            j_to[:, 1, 1] = d * np.cos(th)
        else:
            raise DomainError(f"unknown chart {chart_to}")
        # jacobian from source coordinates to (r, theta)
        if chart_from == BAND or not self.profile.sphere_like:
            j_from = np.zeros((n, 2, 2))
            j_from[:, 0, 0] = j_from[:, 1, 1] = 1.0
        else:
            sgn = 1.0 if chart_from == NORTH else -1.0
            d = np.hypot(xy[:, 0], xy[:, 1])
            j_from = np.empty((n, 2, 2))
            j_from[:, 0, 0] = sgn * xy[:, 0] / d
            j_from[:, 0, 1] = sgn * xy[:, 1] / d
            j_from[:, 1, 0] = -xy[:, 1] / d**2
            j_from[:, 1, 1] = xy[:, 0] / d**2
        return np.einsum("nij,njk->nik", j_to, j_from)

    def preferred_chart(self, chart_id, xy):
        xy = np.atleast_2d(xy)
        if not self.profile.sphere_like:
            return np.zeros(xy.shape[0], dtype=int)
        r, _ = self.global_r_theta(chart_id, xy)
        out = np.full(xy.shape[0], BAND, dtype=int)
        out[r < 0.7 * self.pol_r] = NORTH
        out[r > self.profile.r_total - 0.7 * self.pol_r] = SOUTH
        return out

    # -- metric -------------------------------------------------------------

    def metric(self, chart_id, xy):
        xy = np.atleast_2d(xy)
        n = xy.shape[0]
        if not self.profile.sphere_like or chart_id == BAND:
            g = np.zeros((n, 3))
            g[:, 0] = 1.0
            g[:, 2] = self.profile.rho(xy[:, 0]) ** 2
            return g
        south = chart_id == SOUTH
        x, y = xy[:, 0], xy[:, 1]
        d = np.hypot(x, y)
        V = self.profile.pole_V(d, south)
        g = np.empty((n, 3))
        g[:, 0] = 1.0 + V * y * y
        g[:, 1] = -V * x * y
        g[:, 2] = 1.0 + V * x * x
        return g

    def metric_jac(self, chart_id, xy):
        xy = np.atleast_2d(xy)
        n = xy.shape[0]
        out = np.zeros((n, 2, 3))
        if not self.profile.sphere_like or chart_id == BAND:
            r = xy[:, 0]
            out[:, 0, 2] = 2.0 * self.profile.rho(r) * self.profile.rho_dot(r)
            return out
        south = chart_id == SOUTH
        x, y = xy[:, 0], xy[:, 1]
        d = np.hypot(x, y)
        V = self.profile.pole_V(d, south)
        Vd = self.profile.pole_V_dot(d, south)
        inv_d = np.where(d > 1e-12, 1.0 / np.where(d == 0, 1.0, d), 0.0)
        Vx = Vd * x * inv_d
        Vy = Vd * y * inv_d
        # g = I + V * [[y^2, -xy], [-xy, x^2]]
        out[:, 0, 0] = Vx * y * y
        out[:, 0, 1] = -Vx * x * y - V * y
        out[:, 0, 2] = Vx * x * x + 2.0 * V * x
        out[:, 1, 0] = Vy * y * y + 2.0 * V * y
        out[:, 1, 1] = -Vy * x * y - V * x
        out[:, 1, 2] = Vy * x * x
        return out

    def curvature(self, chart_id, xy):
        xy = np.atleast_2d(xy)
        r, _ = self.global_r_theta(chart_id, xy)
        return self.profile.curvature_r(np.clip(r, 0.0, self.profile.r_total))

    # -- global measurements --------------------------------------------------

    def _compute_area(self):
        r = np.linspace(0.0, self.profile.r_total, 16385)
        return float(2 * math.pi * np.trapezoid(self.profile.rho(r), r))

    def diameter_estimate(self):
        if self.profile.sphere_like:
            return max(self.profile.r_total, float(np.max(self.profile.rho(
                np.linspace(0, self.profile.r_total, 1025)))) * math.pi / 2)
        return max(self.profile.r_total / 2, math.pi * float(np.max(self.profile.rho(
            np.linspace(0, self.profile.r_total, 1025)))))

    def _scan_max_curvature(self):
        r = np.linspace(0.0, self.profile.r_total, 8193)
        return float(np.max(self.profile.curvature_r(r)))


class ModelSphere(RevolutionSurface):
    """Sphere of revolution: flat cylinder capped by two focusing caps.

    The parallels r = const with r in [cap.r0, cap.r0 + cylinder_length] form
    the family of equatorial closed geodesics; the extreme ones bound the caps.
    """

    def __init__(self, cap: CapProfile, cylinder_length: float):
        profile = CapPairProfile(cap, cylinder_length)
        super().__init__(profile, kind="model_sphere", genus=0)
        self.cap = cap
        self.cylinder_length = float(cylinder_length)
        self.equator_r = (cap.r0, cap.r0 + cylinder_length)

    @property
    def meridian_length(self) -> float:
        return 2.0 * self.profile.r_total


def build_model_sphere(cap: CapProfile, cylinder_length: float) -> ModelSphere:
    if not cap.is_valid():
        raise DomainError("cap profile does not satisfy the focusing-cap invariants")
    if cylinder_length <= 0:
        raise DomainError("cylinder length must be positive")
    return ModelSphere(cap, cylinder_length)


class RoundSphere(RevolutionSurface):
    kind = "round_sphere"

    def __init__(self, radius: float = 1.0):
        super().__init__(SinProfile(radius), kind="round_sphere", genus=0)
        self.radius = float(radius)


class TorusOfRevolution(RevolutionSurface):
    kind = "torus_of_revolution"

    def __init__(self, major: float = 2.0, minor: float = 1.0):
        super().__init__(TorusProfile(major, minor), kind="torus_of_revolution", genus=1)
        self.major = float(major)
        self.minor = float(minor)
        # inner equator at u = pi * minor, outer at u = 0
        self.inner_equator_r = math.pi * self.minor
        self.outer_equator_r = 0.0


# ---------------------------------------------------------------------------
# Conformal perturbations
# ---------------------------------------------------------------------------


class ConformalFactor(ABC):
    """Scalar field f on a surface, expressed in global coordinates
    ((r, theta) for revolution surfaces, chart coordinates for flat tori)."""

    @abstractmethod
    def value(self, u: np.ndarray, v: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def grad(self, u, v) -> tuple[np.ndarray, np.ndarray]: ...

    def sup_norm(self) -> float:
        u = np.linspace(0, 2 * math.pi, 181)
        v = np.linspace(0, 2 * math.pi, 181)
        uu, vv = np.meshgrid(u, v)
        return float(np.max(np.abs(self.value(uu.ravel(), vv.ravel()))))


class ConstantFactor(ConformalFactor):
    def __init__(self, value: float):
        self.c = float(value)

    def value(self, u, v):
        return np.full(np.shape(np.asarray(u)), self.c)

    def grad(self, u, v):
        z = np.zeros(np.shape(np.asarray(u)))
        return z, z.copy()

    def sup_norm(self):
        return abs(self.c)


def _bump_derivs(s):
    """bump(s), bump'(s) with bump = exp(1 - 1/(1-s^2)) inside |s| < 1."""
    s = np.asarray(s, dtype=float)
    B = bump(s)
    inside = np.abs(s) < 1.0
    w = np.zeros_like(s)
    one_minus = 1.0 - s[inside] ** 2
    w[inside] = -2.0 * s[inside] / one_minus**2
    return B, B * w


class RadialBumpFactor(ConformalFactor):
    """Bump in the first global coordinate: f = A * bump((u - center)/width)."""

    def __init__(self, amplitude: float, center: float, width: float):
        self.amplitude = float(amplitude)
        self.center = float(center)
        self.width = float(width)

    def value(self, u, v):
        s = (np.asarray(u, dtype=float) - self.center) / self.width
        return self.amplitude * bump(s)

    def grad(self, u, v):
        s = (np.asarray(u, dtype=float) - self.center) / self.width
        _, dB = _bump_derivs(s)
        return self.amplitude * dB / self.width, np.zeros(np.shape(np.asarray(u)))

    def sup_norm(self):
        return abs(self.amplitude)


class LocalizedBumpFactor(ConformalFactor):
    """Product bump localized at (u0, v0); v treated as an angle mod 2*pi."""

    def __init__(self, amplitude: float, u0: float, v0: float,
                 u_width: float, v_width: float, v_period: float = 2 * math.pi):
        self.amplitude = float(amplitude)
        self.u0 = float(u0)
        self.v0 = float(v0)
        self.u_width = float(u_width)
        self.v_width = float(v_width)
        self.v_period = float(v_period)

    def _s(self, u, v):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        su = (u - self.u0) / self.u_width
        dv = v - self.v0
        dv = dv - self.v_period * np.round(dv / self.v_period)
        sv = dv / self.v_width
        return su, sv

    def value(self, u, v):
        su, sv = self._s(u, v)
        return self.amplitude * bump(su) * bump(sv)

    def grad(self, u, v):
        su, sv = self._s(u, v)
        Bu, dBu = _bump_derivs(su)
        Bv, dBv = _bump_derivs(sv)
        return (
            self.amplitude * dBu * Bv / self.u_width,
            self.amplitude * Bu * dBv / self.v_width,
        )

    def sup_norm(self):
        return abs(self.amplitude)


class ConformalPerturbation(SurfaceModel):
    """Metric e^{2f} g over a base surface; shares the base atlas."""

    def __init__(self, base: SurfaceModel, factor: ConformalFactor):
        super().__init__()
        if isinstance(base, ConformalPerturbation):
            raise DomainError("nested conformal perturbations are not supported")
        self.base = base
        self.factor = factor
        self.kind = f"conformal({base.kind})"
        self.genus = base.genus

    @property
    def charts(self):
        return self.base.charts

    def _global_uv(self, chart_id, xy):
        if isinstance(self.base, RevolutionSurface):
            r, th = self.base.global_r_theta(chart_id, xy)
            return r, th
        xy = np.atleast_2d(xy)
        return xy[:, 0], xy[:, 1]

    def _uv_jacobian(self, chart_id, xy):
        """d(global uv)/d(chart xy), shape (n,2,2)."""
        xy = np.atleast_2d(xy)
        n = xy.shape[0]
        if not isinstance(self.base, RevolutionSurface) or (
            not self.base.profile.sphere_like
        ) or chart_id == BAND:
            jac = np.zeros((n, 2, 2))
            jac[:, 0, 0] = jac[:, 1, 1] = 1.0
            return jac
        sgn = 1.0 if chart_id == NORTH else -1.0
        d = np.hypot(xy[:, 0], xy[:, 1])
        d_safe = np.where(d > 1e-12, d, 1.0)
        jac = np.empty((n, 2, 2))
        jac[:, 0, 0] = sgn * xy[:, 0] / d_safe
        jac[:, 0, 1] = sgn * xy[:, 1] / d_safe
        jac[:, 1, 0] = -xy[:, 1] / d_safe**2
        jac[:, 1, 1] = xy[:, 0] / d_safe**2
        return jac

    def f_value(self, chart_id, xy):
        u, v = self._global_uv(chart_id, xy)
        return self.factor.value(u, v)

    def f_grad_chart(self, chart_id, xy):
        u, v = self._global_uv(chart_id, xy)
        fu, fv = self.factor.grad(u, v)
        jac = self._uv_jacobian(chart_id, xy)
        return np.stack(
            [fu * jac[:, 0, 0] + fv * jac[:, 1, 0], fu * jac[:, 0, 1] + fv * jac[:, 1, 1]],
            axis=-1,
        )

    def metric(self, chart_id, xy):
        scale = np.exp(2.0 * self.f_value(chart_id, xy))
        return self.base.metric(chart_id, xy) * scale[:, None]

    def metric_jac(self, chart_id, xy):
        g = self.base.metric(chart_id, xy)
        dg = self.base.metric_jac(chart_id, xy)
        f = self.f_value(chart_id, xy)
        df = self.f_grad_chart(chart_id, xy)
        scale = np.exp(2.0 * f)
        return scale[:, None, None] * (dg + 2.0 * df[:, :, None] * g[:, None, :])

    def curvature(self, chart_id, xy):
        # R_h = e^{-2f} (R_g - Lap_g f); Laplacian via FD on f along chart coords
        xy = np.atleast_2d(xy)
        lam = self._laplacian_f(chart_id, xy)
        f = self.f_value(chart_id, xy)
        return np.exp(-2.0 * f) * (self.base.curvature(chart_id, xy) - lam)

    def _laplacian_f(self, chart_id, xy, h: float = 1e-5):
        g = self.base.metric(chart_id, xy)
        gi = invert_metric(g)
        sq = np.sqrt(g[:, 0] * g[:, 2] - g[:, 1] ** 2)

        def flux(shift):
            pts = xy + shift
            gg = self.base.metric(chart_id, pts)
            gin = invert_metric(gg)
            sg = np.sqrt(gg[:, 0] * gg[:, 2] - gg[:, 1] ** 2)
            grad = self.f_grad_chart(chart_id, pts)
            vx = sg * (gin[:, 0] * grad[:, 0] + gin[:, 1] * grad[:, 1])
            vy = sg * (gin[:, 1] * grad[:, 0] + gin[:, 2] * grad[:, 1])
            return vx, vy

        vxp, _ = flux(np.array([h, 0.0]))
        vxm, _ = flux(np.array([-h, 0.0]))
        _, vyp = flux(np.array([0.0, h]))
        _, vym = flux(np.array([0.0, -h]))
        div = (vxp - vxm) / (2 * h) + (vyp - vym) / (2 * h)
        return div / sq

    def preferred_chart(self, chart_id, xy):
        return self.base.preferred_chart(chart_id, xy)

    def convert(self, chart_from, xy, chart_to, ref_xy=None):
        return self.base.convert(chart_from, xy, chart_to, ref_xy)

    def transition_jacobian(self, chart_from, xy, chart_to):
        return self.base.transition_jacobian(chart_from, xy, chart_to)

    def point_valid(self, chart_id, xy):
        return self.base.point_valid(chart_id, xy)

    def _compute_area(self):
        if isinstance(self.base, RevolutionSurface):
            prof = self.base.profile
            r = np.linspace(0.0, prof.r_total, 2049)
            th = np.linspace(0.0, 2 * math.pi, 513)
            rr, tt = np.meshgrid(r, th, indexing="ij")
            w = np.exp(2.0 * self.factor.value(rr.ravel(), tt.ravel())).reshape(rr.shape)
            integrand = prof.rho(r)[:, None] * w
            return float(np.trapezoid(np.trapezoid(integrand, th, axis=1), r))
        p1, p2 = self.base.periods
        x = np.linspace(0.0, p1, 513)
        y = np.linspace(0.0, p2, 513)
        xx, yy = np.meshgrid(x, y, indexing="ij")
        w = np.exp(2.0 * self.factor.value(xx.ravel(), yy.ravel())).reshape(xx.shape)
        return float(np.trapezoid(np.trapezoid(w, y, axis=1), x))

    def diameter_estimate(self):
        return self.base.diameter_estimate() * math.exp(self.factor.sup_norm())

    def _scan_max_curvature(self):
        best = 0.0
        for spec in self.charts:
            lo_x = spec.x_range[0] if spec.x_range[0] is not None else 0.0
            hi_x = spec.x_range[1] if spec.x_range[1] is not None else (spec.x_period or 1.0)
            lo_y = spec.y_range[0] if spec.y_range[0] is not None else 0.0
            hi_y = spec.y_range[1] if spec.y_range[1] is not None else (spec.y_period or 1.0)
            x = np.linspace(lo_x + 1e-6, hi_x - 1e-6, 65)
            y = np.linspace(lo_y + 1e-6, hi_y - 1e-6, 65)
            xx, yy = np.meshgrid(x, y)
            pts = np.column_stack([xx.ravel(), yy.ravel()])
            pts = pts[self.point_valid(spec.chart_id, pts)]
            if len(pts):
                best = max(best, float(np.max(self.curvature(spec.chart_id, pts))))
        return best


# ---------------------------------------------------------------------------
# JSON loading
# ---------------------------------------------------------------------------

_FACTOR_KEYS = {
    "const": {"type", "value"},
    "radial_bump": {"type", "amplitude", "center", "width"},
    "localized_bump": {"type", "amplitude", "u0", "v0", "u_width", "v_width"},
}


def factor_from_json(doc: dict) -> ConformalFactor:
    kind = doc.get("type")
    if kind not in _FACTOR_KEYS:
        raise DomainError(f"unknown conformal factor type: {kind!r}")
    extra = set(doc) - _FACTOR_KEYS[kind]
    if extra:
        raise DomainError(f"unknown keys in conformal factor: {sorted(extra)}")
    if kind == "const":
        return ConstantFactor(doc["value"])
    if kind == "radial_bump":
        return RadialBumpFactor(doc["amplitude"], doc["center"], doc["width"])
    return LocalizedBumpFactor(
        doc["amplitude"], doc["u0"], doc["v0"], doc["u_width"], doc["v_width"]
    )


def cap_from_json(doc: dict) -> CapProfile:
    allowed = {"r0", "shoot_tolerance", "curvature_profile"}
    extra = set(doc) - allowed
    if extra:
        raise DomainError(f"unknown keys in cap spec: {sorted(extra)}")
    r0 = float(doc["r0"])
    tol = float(doc.get("shoot_tolerance", 1e-10))
    prof = doc.get("curvature_profile", {"family": "scaled_bump"})
    if prof.get("family", "scaled_bump") != "scaled_bump":
        raise DomainError(f"unknown curvature family: {prof.get('family')!r}")
    return build_cap(r0, shoot_tolerance=tol)


def surface_from_json(doc: dict) -> SurfaceModel:
    """Build a surface from its JSON description; unknown keys are rejected."""
    if not isinstance(doc, dict) or "kind" not in doc:
        raise DomainError("surface spec must be an object with a 'kind' key")
    kind = doc["kind"]
    allowed = {
        "round_sphere": {"kind", "radius"},
        "flat_torus": {"kind", "periods"},
        "torus_of_revolution": {"kind", "major", "minor"},
        "model_sphere": {"kind", "cap", "cylinder_length"},
        "conformal": {"kind", "base", "factor"},
    }
    if kind not in allowed:
        raise DomainError(f"unknown surface kind: {kind!r}")
    extra = set(doc) - allowed[kind]
    if extra:
        raise DomainError(f"unknown keys in surface spec: {sorted(extra)}")
    if kind == "round_sphere":
        return RoundSphere(float(doc.get("radius", 1.0)))
    if kind == "flat_torus":
        p = doc.get("periods", [2 * math.pi, 2 * math.pi])
        return FlatTorus((float(p[0]), float(p[1])))
    if kind == "torus_of_revolution":
        return TorusOfRevolution(float(doc.get("major", 2.0)), float(doc.get("minor", 1.0)))
    if kind == "model_sphere":
        cap = cap_from_json(doc["cap"])
        return build_model_sphere(cap, float(doc.get("cylinder_length", 1.0)))
    base = surface_from_json(doc["base"])
    return ConformalPerturbation(base, factor_from_json(doc["factor"]))
