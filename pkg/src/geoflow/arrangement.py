"""Arrangements of closed geodesics on a surface: face extraction via a
rotation system, corner angles, and Gauss-Bonnet audits of every face.

Face area and curvature integrals use Green's theorem in the (r, theta)
cylinder of a revolution surface: with F(r) = int_0^r R rho and A(r) =
int_0^r rho, the face integrals become boundary integrals of F dtheta and
A dtheta, which stay accurate on faces that touch the poles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .curves import DiscreteCurve, curve_from_closed_geodesic
from .geodesics import ClosedGeodesic, velocity_to_angle
from .knots import curve_pair_intersections, self_intersections
from .surfaces import BAND, FlatTorus, RevolutionSurface, SurfaceModel


class ArrangementError(RuntimeError):
    pass


@dataclass
class FaceReport:
    face_id: int
    n_boundary_arcs: int
    corner_angles: list[float]
    has_corner: bool
    convex: bool
    is_disk: bool | None
    area: float
    curvature_integral: float
    gauss_bonnet_residual: float
    below_area_bound: bool
    touches_pole: bool = False


@dataclass
class PolygonAuditReport:
    faces: list[FaceReport]
    n_vertices: int
    n_edges: int
    n_faces: int
    euler_characteristic_ok: bool
    area_bound: float
    total_area: float

    def all_convex(self) -> bool:
        return all(f.convex for f in self.faces)

    def to_json_dict(self):
        return {
            "faces": [
                {
                    "face_id": f.face_id,
                    "arcs": f.n_boundary_arcs,
                    "corner_angles": f.corner_angles,
                    "has_corner": f.has_corner,
                    "convex": f.convex,
                    "is_disk": f.is_disk,
                    "area": f.area,
                    "curvature_integral": f.curvature_integral,
                    "gauss_bonnet_residual": f.gauss_bonnet_residual,
                    "below_area_bound": f.below_area_bound,
                }
                for f in self.faces
            ],
            "V": self.n_vertices,
            "E": self.n_edges,
            "F": self.n_faces,
            "euler_ok": self.euler_characteristic_ok,
            "area_bound": self.area_bound,
            "total_area": self.total_area,
        }


# ---------------------------------------------------------------------------
# Green-theorem boundary integrals on the (r, theta) cylinder
# ---------------------------------------------------------------------------


class _GreenTables:
    def __init__(self, surface):
        base = surface
        while hasattr(base, "base"):
            base = base.base
        self.base = base
        if isinstance(base, FlatTorus):
            self.period = None
            return
        prof = base.profile
        # periodic profiles get the unwrapped antiderivative
        self.period = None if prof.sphere_like else prof.r_total
        grid = np.linspace(0.0, prof.r_total, 8193)
        rho = prof.rho(grid)
        Rv = prof.curvature_r(grid)
        self.grid = grid
        self.A = np.concatenate([[0.0], np.cumsum(0.5 * (rho[1:] + rho[:-1]) * np.diff(grid))])
        f = Rv * rho
        self.F = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(grid))])

    def _eval(self, table, r):
        r = np.asarray(r, dtype=float)
        if self.period is None:
            return np.interp(r, self.grid, table)
        k = np.floor(r / self.period)
        return k * table[-1] + np.interp(r - k * self.period, self.grid, table)

    def area_fn(self, r):
        if isinstance(self.base, FlatTorus):
            return np.asarray(r, dtype=float)
        return self._eval(self.A, r)

    def curv_fn(self, r):
        if isinstance(self.base, FlatTorus):
            return np.zeros_like(np.asarray(r, dtype=float))
        return self._eval(self.F, r)

    def area_total(self):
        return float(self.A[-1])

    def curv_total(self):
        return float(self.F[-1])


def _boundary_integrals(tables: _GreenTables, chain_r, chain_th, jump_pole):
    """(area, curvature integral) of the region left of the lifted chain.

    jump_pole marks pole-passage segments: 0 regular, -1 north, +1 south.
    A passage sweeps theta at the pole itself, so it contributes the
    antiderivative evaluated exactly there: zero at the north pole, the full
    profile integral at the south pole.  The identified cut edges of the
    lifted region run along theta = const and contribute nothing.
    """
    r0, r1 = chain_r[:-1], chain_r[1:]
    dth = np.diff(chain_th)
    rm = 0.5 * (r0 + r1)
    regular = jump_pole == 0
    south = jump_pole > 0
    area = float(np.sum(tables.area_fn(rm[regular]) * dth[regular]))
    curv = float(np.sum(tables.curv_fn(rm[regular]) * dth[regular]))
    if np.any(south):
        area += float(tables.area_total() * np.sum(dth[south]))
        curv += float(tables.curv_total() * np.sum(dth[south]))
    return area, curv


# ---------------------------------------------------------------------------
# Arrangement construction
# ---------------------------------------------------------------------------


@dataclass
class _Arc:
    arc_id: int
    curve_id: int
    v_start: int
    v_end: int
    r: np.ndarray  # dense global samples (raw, pole samples dropped)
    th: np.ndarray  # raw angular coordinate (mod 2*pi, not lifted)
    dir_start: float  # outgoing direction angle at start vertex
    dir_end: float  # incoming direction angle at end vertex (direction of travel)


def _global_polyline(surface, curve: DiscreteCurve):
    base = surface
    while hasattr(base, "base"):
        base = base.base
    if isinstance(base, FlatTorus):
        return curve.vertex_xy[:, 0].copy(), curve.vertex_xy[:, 1].copy()
    return curve.global_coords()


def _direction_angle(surface, curve: DiscreteCurve, param: float) -> float:
    """Direction angle of the curve at a fractional edge parameter, in the
    oriented frame of the local vertex chart."""
    i = int(math.floor(param)) % curve.n
    j = (i + 1) % curve.n
    c = int(curve.vertex_charts[i])
    q = surface.convert(
        int(curve.vertex_charts[j]), curve.vertex_xy[j][None], c, ref_xy=curve.vertex_xy[i][None]
    )[0]
    d = q - curve.vertex_xy[i]
    frac = param - math.floor(param)
    p = curve.vertex_xy[i] + frac * d
    return float(velocity_to_angle(surface, c, p[None], d[None])[0])


def build_arrangement(surface, curves: list[DiscreteCurve]):
    """Vertices, arcs, and rotation system of the curve arrangement."""
    n_curves = len(curves)
    for i, c in enumerate(curves):
        rep = self_intersections(c)
        if rep.count or rep.grazing:
            raise ArrangementError(f"curve {i} is not simple")
    crossings = []  # (curve_a, param_a, curve_b, param_b)
    for a in range(n_curves):
        for b in range(a + 1, n_curves):
            rep = curve_pair_intersections(curves[a], curves[b])
            if rep.grazing:
                raise ArrangementError(f"curves {a} and {b} have a grazing intersection")
            for cr in rep.crossings:
                crossings.append((a, cr.param_a, b, cr.param_b))
    # vertices
    vertices = []  # (curve_a, param_a, curve_b, param_b)
    per_curve_params: list[list[tuple[float, int]]] = [[] for _ in range(n_curves)]
    for (a, pa, b, pb) in crossings:
        vid = len(vertices)
        vertices.append((a, pa, b, pb))
        per_curve_params[a].append((pa, vid))
        per_curve_params[b].append((pb, vid))
    # phantom vertices for crossing-free curves
    phantom = {}
    for i in range(n_curves):
        if not per_curve_params[i]:
            vid = len(vertices)
            vertices.append((i, 0.0, i, 0.0))
            phantom[vid] = i
            per_curve_params[i].append((0.0, vid))
    # arcs: split each curve at its sorted params
    base = surface
    while hasattr(base, "base"):
        base = base.base
    if isinstance(base, FlatTorus):
        r_per, r_tot = base.periods[0], None
    elif isinstance(base, RevolutionSurface) and not base.profile.sphere_like:
        r_per, r_tot = base.profile.r_total, None
    else:
        r_per, r_tot = None, base.profile.r_total
    arcs: list[_Arc] = []
    for i in range(n_curves):
        plist = sorted(per_curve_params[i])
        r_all, th_all = _global_polyline(surface, curves[i])
        m = len(plist)
        for k in range(m):
            p0, v0 = plist[k]
            p1, v1 = plist[(k + 1) % m]
            if m == 1:
                p1 = p0 + curves[i].n  # full loop back to the phantom vertex
            elif p1 <= p0:
                p1 += curves[i].n
            rs, ths = _arc_samples(curves[i], r_all, th_all, p0, p1, r_per, r_tot)
            arcs.append(
                _Arc(
                    arc_id=len(arcs),
                    curve_id=i,
                    v_start=v0,
                    v_end=v1,
                    r=rs,
                    th=ths,
                    dir_start=_direction_angle(surface, curves[i], p0 % curves[i].n),
                    dir_end=_direction_angle(surface, curves[i], p1 % curves[i].n),
                )
            )
    return vertices, arcs, phantom


def _arc_samples(curve: DiscreteCurve, r_all, th_all, p0, p1, r_period=None,
                 r_total=None):
    """Raw (r, theta) samples of the curve between fractional params.

    Samples sitting exactly on a pole carry no angular information and are
    dropped; the lift across the resulting gap is resolved per face.
    """
    n = curve.n
    i0 = int(math.ceil(p0))
    i1 = int(math.floor(p1))
    idx = [k % n for k in range(i0, i1 + 1)]
    rs = [float(_interp_wrapped(r_all, p0, n, r_period))]
    ths = [float(_interp_wrapped(th_all, p0, n, 2 * math.pi))]
    for k in idx:
        rs.append(float(r_all[k]))
        ths.append(float(th_all[k]))
    rs.append(float(_interp_wrapped(r_all, p1, n, r_period)))
    ths.append(float(_interp_wrapped(th_all, p1, n, 2 * math.pi)))
    rs = np.asarray(rs)
    ths = np.asarray(ths)
    keep = rs > 1e-9
    if r_total is not None:
        keep &= rs < r_total - 1e-9
    keep[0] = keep[-1] = True
    return rs[keep], ths[keep]


def _interp_wrapped(vals, p, n, period=None):
    i = int(p) % n
    j = (i + 1) % n
    f = p - math.floor(p)
    d = vals[j] - vals[i]
    if period is not None:
        d -= period * np.round(d / period)
    return vals[i] + f * d


def extract_faces(surface, vertices, arcs, phantom):
    """Orbits of the face permutation of the rotation system.

    Each arc yields two half-edges; at every vertex the outgoing half-edges
    are sorted counterclockwise by direction angle, and the face walk keeps
    the face on the left.
    """
    # half-edge h = (arc_id, forward?) ; outgoing stubs per vertex
    stubs: dict[int, list[tuple[float, tuple[int, bool]]]] = {}
    for arc in arcs:
        stubs.setdefault(arc.v_start, []).append((arc.dir_start, (arc.arc_id, True)))
        stubs.setdefault(arc.v_end, []).append(
            ((arc.dir_end + math.pi) % (2 * math.pi), (arc.arc_id, False))
        )
    rotation: dict[int, list[tuple[int, bool]]] = {}
    for v, lst in stubs.items():
        lst = sorted(lst, key=lambda x: x[0] % (2 * math.pi))
        rotation[v] = [h for _, h in lst]

    def target(h):
        arc = arcs[h[0]]
        return arc.v_end if h[1] else arc.v_start

    def next_face_halfedge(h):
        arc = arcs[h[0]]
        v = target(h)
        twin = (h[0], not h[1])
        order = rotation[v]
        i = order.index(twin)
        return order[(i - 1) % len(order)]  # clockwise-next after the twin

    faces = []
    visited = set()
    for arc in arcs:
        for fwd in (True, False):
            h0 = (arc.arc_id, fwd)
            if h0 in visited:
                continue
            walk = []
            h = h0
            while h not in visited:
                visited.add(h)
                walk.append(h)
                h = next_face_halfedge(h)
            faces.append(walk)
    return faces, rotation


def polygon_audit(surface, geodesics: list[ClosedGeodesic], spacing: float = 0.02,
                  angle_tol: float = 1e-6) -> PolygonAuditReport:
    """Arrangement of the geodesic images: per-face convexity and
    Gauss-Bonnet verdicts, with areas from Green-theorem boundary integrals.

    Faces below the curvature area bound 2*pi/max(R+) are flagged as provably
    free of simple closed geodesics.
    """
    curves = [curve_from_closed_geodesic(g, spacing) for g in geodesics]
    vertices, arcs, phantom = build_arrangement(surface, curves)
    faces, rotation = extract_faces(surface, vertices, arcs, phantom)
    V, E, F = len(vertices), len(arcs), len(faces)
    chi = 2 - 2 * surface.genus
    euler_ok = (V - E + F) == chi
    tables = _GreenTables(surface)
    max_r = surface.max_positive_curvature()
    area_bound = 2 * math.pi / max_r if max_r > 0 else math.inf
    total_area = surface.area()

    reports = []
    bad = []
    for fid, walk in enumerate(faces):
        chain_r, chain_th, jump_pole, angles, winding_r = _face_geometry(
            surface, arcs, walk, vertices, phantom, angle_tol, spacing
        )
        area, curv = _boundary_integrals(tables, chain_r, chain_th, jump_pole)
        corner_defect = float(sum(math.pi - a for a in angles))
        gb = corner_defect + curv - 2 * math.pi
        has_corner = len(angles) > 0
        convex = has_corner and all(a < math.pi - angle_tol for a in angles)
        touches_pole = bool(np.any(jump_pole != 0))
        if winding_r != 0 or area <= 1e-9:
            bad.append(fid)
        reports.append(
            FaceReport(
                face_id=fid,
                n_boundary_arcs=len(walk),
                corner_angles=[float(a) for a in angles],
                has_corner=has_corner,
                convex=convex,
                is_disk=True if euler_ok else None,
                area=area,
                curvature_integral=curv,
                gauss_bonnet_residual=gb,
                below_area_bound=bool(area < area_bound),
                touches_pole=touches_pole,
            )
        )
    # a face that winds around the cut cylinder (or is traced from the
    # complement side) cannot be integrated directly; with exactly one such
    # face its data follows from the totals
    if len(bad) == 1 and euler_ok:
        i = bad[0]
        others = sum(r.area for j, r in enumerate(reports) if j != i)
        reports[i].area = total_area - others
        total_curv = 2 * math.pi * chi
        reports[i].curvature_integral = total_curv - sum(
            r.curvature_integral for j, r in enumerate(reports) if j != i
        )
        corner_defect = float(sum(math.pi - a for a in reports[i].corner_angles))
        reports[i].gauss_bonnet_residual = (
            corner_defect + reports[i].curvature_integral - 2 * math.pi
        )
        reports[i].below_area_bound = bool(reports[i].area < area_bound)
    elif len(bad) > 1:
        raise ArrangementError(
            f"{len(bad)} faces are not directly integrable; arrangement unsupported"
        )
    return PolygonAuditReport(
        faces=reports,
        n_vertices=V,
        n_edges=E,
        n_faces=F,
        euler_characteristic_ok=euler_ok,
        area_bound=area_bound,
        total_area=total_area,
    )


def _face_geometry(surface, arcs, walk, vertices, phantom, angle_tol, spacing):
    """Lifted boundary chain in the (r, theta) plane, pole-jump markers, and
    interior corner angles.

    Pole passages get a lift jump of exactly -pi (north) or +pi (south):
    with the face kept on the left of the walk, the passage sweeps through
    the face's side of the pole, which is clockwise in the north chart and
    counterclockwise in the south chart.
    """
    base = surface
    while hasattr(base, "base"):
        base = base.base
    sphere_like = isinstance(base, RevolutionSurface) and base.profile.sphere_like
    rt = base.profile.r_total if isinstance(base, RevolutionSurface) else None
    r_period = None if (sphere_like or rt is None) else rt
    th_period = base.periods[1] if isinstance(base, FlatTorus) else 2 * math.pi
    x_period = base.periods[0] if isinstance(base, FlatTorus) else r_period
    jump_r_tol = 4.0 * spacing

    raw_r: list[float] = []
    raw_th: list[float] = []
    angles = []
    n = len(walk)
    for k, h in enumerate(walk):
        arc = arcs[h[0]]
        rs = arc.r if h[1] else arc.r[::-1]
        ths = arc.th if h[1] else arc.th[::-1]
        raw_r.extend(rs[:-1])
        raw_th.extend(ths[:-1])
        # corner at the end vertex of h, between h and the next half-edge
        h2 = walk[(k + 1) % n]
        v = arcs[h[0]].v_end if h[1] else arcs[h[0]].v_start
        d_in = arc.dir_end if h[1] else (arc.dir_start + math.pi) % (2 * math.pi)
        arc2 = arcs[h2[0]]
        d_out = arc2.dir_start if h2[1] else (arc2.dir_end + math.pi) % (2 * math.pi)
        turn = (d_out - d_in + math.pi) % (2 * math.pi) - math.pi
        interior = math.pi - turn
        if abs(interior - math.pi) > angle_tol and v not in phantom:
            angles.append(interior)
    raw_r.append(raw_r[0])
    raw_th.append(raw_th[0])

    chain_r = np.empty(len(raw_r))
    chain_th = np.empty(len(raw_r))
    jump_pole = np.zeros(len(raw_r) - 1, dtype=int)
    chain_r[0], chain_th[0] = raw_r[0], raw_th[0]
    for i in range(1, len(raw_r)):
        dr = raw_r[i] - (chain_r[i - 1] % x_period if x_period else chain_r[i - 1])
        if x_period:
            dr -= x_period * np.round(dr / x_period)
        dth = raw_th[i] - (chain_th[i - 1] % th_period)
        dth -= th_period * np.round(dth / th_period)
        if abs(dth) > th_period / 4:
            if not sphere_like:
                raise ArrangementError("angular jump away from a pole (unsupported face)")
            near_n = min(raw_r[i], raw_r[i - 1]) < jump_r_tol
            near_s = max(raw_r[i], raw_r[i - 1]) > rt - jump_r_tol
            if not (near_n or near_s):
                raise ArrangementError("angular jump away from a pole (unsupported face)")
            jump_pole[i - 1] = 1 if near_s else -1
            dth = math.pi * jump_pole[i - 1]
        chain_r[i] = chain_r[i - 1] + dr
        chain_th[i] = chain_th[i - 1] + dth
    winding_r = 0
    if x_period:
        winding_r = int(round((chain_r[-1] - chain_r[0]) / x_period))
    return chain_r, chain_th, jump_pole, angles, winding_r
