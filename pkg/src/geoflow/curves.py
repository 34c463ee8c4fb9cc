"""Discrete closed curves on chart atlases: resampling, discrete geodesic
curvature, length, and seed-curve generators for flows and experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geodesics import ClosedGeodesic, g_norm, normalize_velocity
from .surfaces import BAND, RevolutionSurface, SurfaceModel


class CurveError(ValueError):
    pass


@dataclass
class DiscreteCurve:
    """Closed polygonal loop; vertex i lives in chart ``vertex_charts[i]``.

    Consecutive vertices must be representable in a common chart.  The loop is
    implicitly closed (vertex n-1 connects back to vertex 0).
    """

    surface: SurfaceModel
    vertex_charts: np.ndarray
    vertex_xy: np.ndarray
    target_spacing: float
    orientation: int = 1

    def __post_init__(self):
        self.vertex_charts = np.asarray(self.vertex_charts, dtype=int)
        self.vertex_xy = np.asarray(self.vertex_xy, dtype=float)
        if len(self.vertex_xy) < 4:
            raise CurveError("a discrete curve needs at least 4 vertices")

    @property
    def n(self) -> int:
        return len(self.vertex_xy)

    def copy(self) -> "DiscreteCurve":
        return replace(
            self, vertex_charts=self.vertex_charts.copy(), vertex_xy=self.vertex_xy.copy()
        )

    # -- chart-aware neighbor access ---------------------------------------

    def neighbors_local(self):
        """Previous and next vertex positions expressed in each vertex's chart."""
        surface = self.surface
        n = self.n
        prev_xy = np.empty((n, 2))
        next_xy = np.empty((n, 2))
        idx_prev = np.roll(np.arange(n), 1)
        idx_next = np.roll(np.arange(n), -1)
        for c in np.unique(self.vertex_charts):
            m = self.vertex_charts == c
            for out, nb in ((prev_xy, idx_prev), (next_xy, idx_next)):
                nb_idx = nb[m]
                nb_charts = self.vertex_charts[nb_idx]
                sub = np.empty((int(m.sum()), 2))
                for cc in np.unique(nb_charts):
                    mm = nb_charts == cc
                    sub[mm] = surface.convert(
                        int(cc), self.vertex_xy[nb_idx[mm]], int(c),
                        ref_xy=self.vertex_xy[m][mm],
                    )
                out[m] = sub
        return prev_xy, next_xy

    def edge_lengths(self) -> np.ndarray:
        """Metric chord length of each edge (i, i+1)."""
        _, next_xy = self.neighbors_local()
        n = self.n
        out = np.empty(n)
        for c in np.unique(self.vertex_charts):
            m = self.vertex_charts == c
            mid = 0.5 * (self.vertex_xy[m] + next_xy[m])
            d = next_xy[m] - self.vertex_xy[m]
            g = self.surface.metric(int(c), mid)
            out[m] = np.sqrt(
                g[:, 0] * d[:, 0] ** 2 + 2 * g[:, 1] * d[:, 0] * d[:, 1] + g[:, 2] * d[:, 1] ** 2
            )
        return out

    def length(self) -> float:
        return float(np.sum(self.edge_lengths()))

    # -- discrete geodesic curvature ----------------------------------------

    def curvature_data(self):
        """Three-point covariant curvature stencil at every vertex.

        Returns (kappa_signed, kappa_normal_vec, tangents, normals,
        edge_next) where the vectors are chart components at each vertex and
        ``edge_next[i]`` is the metric length of the edge (i, i+1).
        """
        surface = self.surface
        prev_xy, next_xy = self.neighbors_local()
        n = self.n
        kappa = np.empty(n)
        kvec = np.empty((n, 2))
        tangents = np.empty((n, 2))
        normals = np.empty((n, 2))
        edge_next = np.empty(n)
        p = self.vertex_xy
        for c in np.unique(self.vertex_charts):
            m = self.vertex_charts == c
            a, b, q = prev_xy[m], next_xy[m], p[m]
            g = surface.metric(int(c), q)
            h1 = np.sqrt(
                g[:, 0] * (q - a)[:, 0] ** 2
                + 2 * g[:, 1] * (q - a)[:, 0] * (q - a)[:, 1]
                + g[:, 2] * (q - a)[:, 1] ** 2
            )
            h2 = np.sqrt(
                g[:, 0] * (b - q)[:, 0] ** 2
                + 2 * g[:, 1] * (b - q)[:, 0] * (b - q)[:, 1]
                + g[:, 2] * (b - q)[:, 1] ** 2
            )
            # nonuniform central stencils in the arclength-like parameter
            d1 = ((b - q) * (h1 / h2)[:, None] + (q - a) * (h2 / h1)[:, None]) / (
                h1 + h2
            )[:, None]
            d2 = 2.0 * ((b - q) / h2[:, None] - (q - a) / h1[:, None]) / (h1 + h2)[:, None]
            gam = surface.christoffel(int(c), q)
            acc = d2 + np.einsum("nkij,ni,nj->nk", gam, d1, d1)
            sp = np.sqrt(
                g[:, 0] * d1[:, 0] ** 2 + 2 * g[:, 1] * d1[:, 0] * d1[:, 1] + g[:, 2] * d1[:, 1] ** 2
            )
            t_hat = d1 / sp[:, None]
            det = np.sqrt(g[:, 0] * g[:, 2] - g[:, 1] ** 2)
            orient = surface.chart_spec(int(c)).orientation * self.orientation
            n_hat = orient * np.column_stack(
                [
                    -(g[:, 1] * t_hat[:, 0] + g[:, 2] * t_hat[:, 1]) / det,
                    (g[:, 0] * t_hat[:, 0] + g[:, 1] * t_hat[:, 1]) / det,
                ]
            )
            inner_acc_t = (
                g[:, 0] * acc[:, 0] * t_hat[:, 0]
                + g[:, 1] * (acc[:, 0] * t_hat[:, 1] + acc[:, 1] * t_hat[:, 0])
                + g[:, 2] * acc[:, 1] * t_hat[:, 1]
            )
            inner_acc_n = (
                g[:, 0] * acc[:, 0] * n_hat[:, 0]
                + g[:, 1] * (acc[:, 0] * n_hat[:, 1] + acc[:, 1] * n_hat[:, 0])
                + g[:, 2] * acc[:, 1] * n_hat[:, 1]
            )
            kap = inner_acc_n / sp**2
            kappa[m] = kap
            kvec[m] = kap[:, None] * n_hat
            tangents[m] = t_hat
            normals[m] = n_hat
            edge_next[m] = h2
        return kappa, kvec, tangents, normals, edge_next

    def max_abs_curvature(self) -> float:
        return float(np.max(np.abs(self.curvature_data()[0])))

    # -- resampling -----------------------------------------------------------

    def resample(self, spacing: float | None = None, n_target: int | None = None) -> "DiscreteCurve":
        """Uniform arclength resampling; vertices land in preferred charts."""
        surface = self.surface
        h = spacing if spacing is not None else self.target_spacing
        seg = self.edge_lengths()
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        L = cum[-1]
        if n_target is None:
            n_target = max(16, int(round(L / h)))
        want = np.linspace(0.0, L, n_target, endpoint=False)
        idx = np.clip(np.searchsorted(cum, want, side="right") - 1, 0, self.n - 1)
        frac = (want - cum[idx]) / np.maximum(seg[idx], 1e-300)
        _, next_xy = self.neighbors_local()
        pts = self.vertex_xy[idx] + frac[:, None] * (next_xy[idx] - self.vertex_xy[idx])
        charts = self.vertex_charts[idx]
        # move to preferred charts
        out_charts = np.empty(n_target, dtype=int)
        out_xy = np.empty((n_target, 2))
        for c in np.unique(charts):
            m = charts == c
            pref = surface.preferred_chart(int(c), pts[m])
            for pc in np.unique(pref):
                mm = pref == pc
                sel = np.where(m)[0][mm]
                out_charts[sel] = pc
                out_xy[sel] = surface.convert(int(c), pts[m][mm], int(pc))
        return replace(self, vertex_charts=out_charts, vertex_xy=out_xy)

    def spacing_ratio(self) -> float:
        seg = self.edge_lengths()
        return float(np.max(seg) / np.min(seg))

    def max_turning_angle(self) -> float:
        """Largest discrete turning angle per edge (immersion proxy)."""
        kappa, _, _, _, seg = self.curvature_data()
        return float(np.max(np.abs(kappa) * seg))

    def global_coords(self):
        """Global (r/u, theta) coordinates for revolution-type surfaces."""
        base = self.surface
        while hasattr(base, "base"):
            base = base.base
        if not isinstance(base, RevolutionSurface):
            return self.vertex_xy[:, 0].copy(), self.vertex_xy[:, 1].copy()
        r = np.empty(self.n)
        th = np.empty(self.n)
        for c in np.unique(self.vertex_charts):
            m = self.vertex_charts == c
            rr, tt = base.global_r_theta(int(c), self.vertex_xy[m])
            r[m] = rr
            th[m] = tt
        return r, th

    def to_frame_dict(self) -> dict:
        return {
            "chart_id": self.vertex_charts.tolist(),
            "x": self.vertex_xy[:, 0].tolist(),
            "y": self.vertex_xy[:, 1].tolist(),
        }


def curve_from_closed_geodesic(geo: ClosedGeodesic, spacing: float) -> DiscreteCurve:
    c = DiscreteCurve(
        surface=geo.surface,
        vertex_charts=geo.chart_ids.copy(),
        vertex_xy=geo.points.copy(),
        target_spacing=spacing,
    )
    return c.resample(spacing)


# ---------------------------------------------------------------------------
# Seed-curve generators
# ---------------------------------------------------------------------------


def chart_circle(surface, chart_id: int, center, radius: float, spacing: float,
                 n: int | None = None) -> DiscreteCurve:
    """Round circle in chart coordinates (metric-small circles only)."""
    if n is None:
        n = max(24, int(round(2 * math.pi * radius / spacing)))
    t = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
    pts = np.column_stack([center[0] + radius * np.cos(t), center[1] + radius * np.sin(t)])
    return DiscreteCurve(surface, np.full(n, chart_id), pts, spacing).resample(spacing)


def perturbed_parallel(surface, r_value: float, amplitude: float, mode: int,
                       spacing: float, phase: float = 0.0) -> DiscreteCurve:
    """Parallel circle r = r_value with a radial Fourier perturbation."""
    base = surface
    while hasattr(base, "base"):
        base = base.base
    rho = float(base.profile.rho(r_value))
    n = max(32, int(round(2 * math.pi * rho / spacing)))
    th = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
    r = r_value + amplitude * np.sin(mode * th + phase)
    chart = BAND if base.profile.sphere_like else 0
    return DiscreteCurve(surface, np.full(n, chart), np.column_stack([r, th]), spacing).resample(spacing)


def perturbed_geodesic_curve(geo: ClosedGeodesic, amplitude: float, mode: int,
                             spacing: float, phase: float = 0.0) -> DiscreteCurve:
    """Push a closed geodesic along its normal by amplitude*sin(mode*s+phase)."""
    surface = geo.surface
    pts = geo.points.copy()
    charts = geo.chart_ids.copy()
    disp = amplitude * np.sin(2 * math.pi * mode * geo.times / geo.length + phase)
    out = np.empty_like(pts)
    for c in np.unique(charts):
        m = charts == c
        g = surface.metric(int(c), pts[m])
        det = np.sqrt(g[:, 0] * g[:, 2] - g[:, 1] ** 2)
        orient = surface.chart_spec(int(c)).orientation
        v = geo.velocities[m]
        n_hat = orient * np.column_stack(
            [
                -(g[:, 1] * v[:, 0] + g[:, 2] * v[:, 1]) / det,
                (g[:, 0] * v[:, 0] + g[:, 1] * v[:, 1]) / det,
            ]
        )
        out[m] = pts[m] + disp[m][:, None] * n_hat
    c = DiscreteCurve(surface, charts, out, spacing)
    return c.resample(spacing)


def figure_eight(surface, chart_id: int, center, size: float, spacing: float,
                 n: int | None = None) -> DiscreteCurve:
    """Lemniscate-like figure-eight in chart coordinates, one transverse
    self-crossing, unequal lobes."""
    if n is None:
        n = max(64, int(round(8 * size / spacing)))
    t = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
    x = center[0] + size * np.sin(t)
    y = center[1] + 0.55 * size * np.sin(t) * np.cos(t) + 0.22 * size * np.sin(t) ** 2
    pts = np.column_stack([x, y])
    return DiscreteCurve(surface, np.full(n, chart_id), pts, spacing).resample(spacing)
