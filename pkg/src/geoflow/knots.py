"""Intersection combinatorics and flat-knot signatures.

Crossing detection is chart-aware: on sphere-like revolution surfaces edges
are partitioned into polar-cap groups (tested in the polar disk charts) and a
band group (tested in (r, theta) with angular wrap), so that pole passages and
theta-winding never corrupt counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .curves import DiscreteCurve
from .surfaces import BAND, NORTH, SOUTH, FlatTorus, RevolutionSurface, SurfaceModel


class TangencyError(RuntimeError):
    """A self-intersection is numerically non-transverse."""


TANGENCY_TOL = 1e-4


# ---------------------------------------------------------------------------
# Edge-group representation
# ---------------------------------------------------------------------------


def _base_surface(surface):
    base = surface
    while hasattr(base, "base"):
        base = base.base
    return base


@dataclass
class _EdgeGroup:
    frame: str  # 'north' | 'south' | 'band' | 'torus'
    chart_id: int
    p0: np.ndarray
    p1: np.ndarray
    edge_idx: np.ndarray  # original edge indices
    periods: tuple[float | None, float | None]


def _curve_edge_groups(curve: DiscreteCurve) -> list[_EdgeGroup]:
    surface = curve.surface
    base = _base_surface(surface)
    n = curve.n
    nxt = np.roll(np.arange(n), -1)
    if isinstance(base, FlatTorus):
        p0 = curve.vertex_xy
        p1 = surface.convert(0, curve.vertex_xy[nxt], 0, ref_xy=curve.vertex_xy)
        return [_EdgeGroup("torus", 0, p0, p1, np.arange(n), base.periods)]
    if not isinstance(base, RevolutionSurface):
        raise NotImplementedError(f"intersections unsupported on {surface.kind}")
    r, th = curve.global_coords()
    # unwrap theta continuously along the loop
    th = np.unwrap(th)
    rt = base.profile.r_total
    if not base.profile.sphere_like:
        p0 = np.column_stack([r, th])
        p1 = np.column_stack([r[nxt], th[nxt]])
        dth = p1[:, 1] - p0[:, 1]
        p1[:, 1] = p0[:, 1] + (dth - 2 * math.pi * np.round(dth / (2 * math.pi)))
        du = p1[:, 0] - p0[:, 0]
        p1[:, 0] = p0[:, 0] + (du - rt * np.round(du / rt))
        return [_EdgeGroup("band", 0, p0, p1, np.arange(n), (rt, 2 * math.pi))]
    pol_test = 0.45 * base.pol_r
    r_mid = 0.5 * (r + r[nxt])
    north = r_mid < pol_test
    south = r_mid > rt - pol_test
    band = ~(north | south)
    groups = []
    for name, chart, mask in (("north", NORTH, north), ("south", SOUTH, south)):
        if np.any(mask):
            idx = np.where(mask)[0]
            a = _to_polar(base, r[idx], th[idx], chart)
            b = _to_polar(base, r[nxt][idx], th[nxt][idx], chart)
            groups.append(_EdgeGroup(name, chart, a, b, idx, (None, None)))
    if np.any(band):
        idx = np.where(band)[0]
        a = np.column_stack([r[idx], th[idx]])
        b = np.column_stack([r[nxt][idx], th[nxt][idx]])
        dth = b[:, 1] - a[:, 1]
        b[:, 1] = a[:, 1] + (dth - 2 * math.pi * np.round(dth / (2 * math.pi)))
        groups.append(_EdgeGroup("band", BAND, a, b, idx, (None, 2 * math.pi)))
    return groups


def _to_polar(base, r, th, chart):
    d = r if chart == NORTH else base.profile.r_total - r
    return np.column_stack([d * np.cos(th), d * np.sin(th)])


def _pair_frames(ga: _EdgeGroup, gb: _EdgeGroup):
    """Common test frame for a group pair, or None if they cannot cross."""
    kinds = {ga.frame, gb.frame}
    if kinds == {"north", "south"}:
        return None
    if ga.frame == gb.frame:
        return ga.frame
    if "north" in kinds:
        return "north"
    if "south" in kinds:
        return "south"
    return "band"


def _group_in_frame(base, g: _EdgeGroup, frame: str):
    if g.frame == frame:
        return g.p0, g.p1
    # band edges re-expressed in a polar frame
    chart = NORTH if frame == "north" else SOUTH
    a = _to_polar(base, g.p0[:, 0], g.p0[:, 1], chart)
    b = _to_polar(base, g.p1[:, 0], g.p1[:, 1], chart)
    return a, b


def _cross_pairs(a0, a1, b0, b1, periods):
    """Vectorized segment-pair crossing (na x nb); returns s, u, valid mask."""
    na, nb = len(a0), len(b0)
    A0 = a0[:, None, :]
    A1 = a1[:, None, :]
    B0 = b0[None, :, :].repeat(na, axis=0)
    B1 = b1[None, :, :].repeat(na, axis=0)
    for axis, period in enumerate(periods):
        if period is None:
            continue
        mid_a = 0.5 * (A0[..., axis] + A1[..., axis])
        mid_b = 0.5 * (B0[..., axis] + B1[..., axis])
        shift = period * np.round((mid_b - mid_a) / period)
        B0[..., axis] -= shift
        B1[..., axis] -= shift
    d1 = A1 - A0
    d2 = B1 - B0
    rel = B0 - A0
    denom = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (rel[..., 0] * d2[..., 1] - rel[..., 1] * d2[..., 0]) / denom
        u = (rel[..., 0] * d1[..., 1] - rel[..., 1] * d1[..., 0]) / denom
    valid = (
        (np.abs(denom) > 1e-300)
        & (s >= 0.0)
        & (s < 1.0)
        & (u >= 0.0)
        & (u < 1.0)
    )
    return s, u, valid, d2


@dataclass
class Crossing:
    param_a: float  # edge index + fraction along curve a
    param_b: float
    chart_id: int
    xy: np.ndarray
    sin_angle: float


@dataclass
class IntersectionReport:
    count: int
    crossings: list[Crossing]
    grazing: list[Crossing]
    min_sin_angle: float
    degenerate_retry: bool = False

    @property
    def locations(self):
        return [(c.chart_id, float(c.xy[0]), float(c.xy[1])) for c in self.crossings]


def _collect_crossings(surface, groups_a, groups_b, same_curve, n_edges_a, tangency_tol):
    base = _base_surface(surface)
    out: list[Crossing] = []
    for ga in groups_a:
        for gb in groups_b:
            frame = _pair_frames(ga, gb)
            if frame is None:
                continue
            if ga.frame != gb.frame and frame in ("north", "south"):
                # skip band edges too far from the pole to be convertible
                pass
            a0, a1 = _group_in_frame(base, ga, frame)
            b0, b1 = _group_in_frame(base, gb, frame)
            if frame == "band":
                periods = ga.periods if ga.frame == "band" else gb.periods
            elif frame == "torus":
                periods = ga.periods
            else:
                periods = (None, None)
            s, u, valid, d2 = _cross_pairs(a0, a1, b0, b1, periods)
            if same_curve and ga.frame == gb.frame:
                ii = ga.edge_idx[:, None]
                jj = gb.edge_idx[None, :]
                # count each unordered pair once; exclude adjacency
                adjacent = (np.abs(ii - jj) <= 1) | (np.abs(ii - jj) == n_edges_a - 1)
                valid &= (ii < jj) & ~adjacent
            elif same_curve:
                ii = ga.edge_idx[:, None]
                jj = gb.edge_idx[None, :]
                adjacent = (np.abs(ii - jj) <= 1) | (np.abs(ii - jj) == n_edges_a - 1)
                order = {"north": 0, "south": 1, "band": 2, "torus": 3}
                if order[ga.frame] > order[gb.frame]:
                    continue  # each cross-frame pair visited once
                valid &= ~adjacent
            if not np.any(valid):
                continue
            ia, ib = np.nonzero(valid)
            d1_sel = a1[ia] - a0[ia]
            pts = a0[ia] + s[ia, ib][:, None] * d1_sel
            chart = {"north": NORTH, "south": SOUTH, "band": BAND, "torus": 0}[frame]
            if isinstance(base, FlatTorus):
                chart = 0
            sin_ang = _metric_sin_angle(surface, base, frame, chart, pts, d1_sel, d2[ia, ib])
            for t in range(len(ia)):
                out.append(
                    Crossing(
                        param_a=float(ga.edge_idx[ia[t]] + s[ia[t], ib[t]]),
                        param_b=float(gb.edge_idx[ib[t]] + u[ia[t], ib[t]]),
                        chart_id=chart,
                        xy=pts[t],
                        sin_angle=float(sin_ang[t]),
                    )
                )
    # dedupe crossings found in overlapping frames (band vs polar partitions are
    # exclusive by construction, so duplicates can only come from identical pairs)
    seen = {}
    unique = []
    for c in out:
        key = (round(c.param_a, 6), round(c.param_b, 6))
        if key not in seen:
            seen[key] = True
            unique.append(c)
    return unique


def _metric_sin_angle(surface, base, frame, chart, pts, d1, d2):
    if frame == "band" and isinstance(base, RevolutionSurface):
        # points carry unwrapped theta; metric only depends on r
        g = surface.metric(chart, np.column_stack([pts[:, 0], np.mod(pts[:, 1], 2 * math.pi)]))
    else:
        g = surface.metric(chart, pts)
    det = np.sqrt(g[:, 0] * g[:, 2] - g[:, 1] ** 2)
    cross = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    n1 = np.sqrt(
        g[:, 0] * d1[:, 0] ** 2 + 2 * g[:, 1] * d1[:, 0] * d1[:, 1] + g[:, 2] * d1[:, 1] ** 2
    )
    n2 = np.sqrt(
        g[:, 0] * d2[:, 0] ** 2 + 2 * g[:, 1] * d2[:, 0] * d2[:, 1] + g[:, 2] * d2[:, 1] ** 2
    )
    return np.abs(cross) * det / (n1 * n2)


def _jittered(curve: DiscreteCurve) -> DiscreteCurve:
    rng = np.random.Generator(np.random.Philox(key=12345))
    out = curve.copy()
    out.vertex_xy = out.vertex_xy + 1e-10 * curve.target_spacing * (
        rng.random(out.vertex_xy.shape) - 0.5
    )
    return out


def self_intersections(curve: DiscreteCurve, tangency_tol: float = TANGENCY_TOL) -> IntersectionReport:
    """Transverse self-crossing count of the closed polygon.

    Grazing crossings (|sin angle| below the tangency tolerance) are listed
    separately; vertex-coincident degeneracies trigger one deterministic
    jitter retry.
    """
    for attempt in range(2):
        groups = _curve_edge_groups(curve)
        crossings = _collect_crossings(
            curve.surface, groups, groups, True, curve.n, tangency_tol
        )
        degenerate = any(
            min(c.param_a % 1.0, 1.0 - c.param_a % 1.0) < 1e-9
            or min(c.param_b % 1.0, 1.0 - c.param_b % 1.0) < 1e-9
            for c in crossings
        )
        if not degenerate:
            break
        curve = _jittered(curve)
    transverse = [c for c in crossings if c.sin_angle >= tangency_tol]
    grazing = [c for c in crossings if c.sin_angle < tangency_tol]
    min_sin = min((c.sin_angle for c in crossings), default=1.0)
    return IntersectionReport(
        count=len(transverse),
        crossings=transverse,
        grazing=grazing,
        min_sin_angle=float(min_sin),
        degenerate_retry=attempt > 0,
    )


def link_intersections(curve: DiscreteCurve, refs, tangency_tol: float = TANGENCY_TOL):
    """Transverse crossing counts of a curve with each reference curve.

    Returns (counts, min_sin_angle) so callers can monitor tangency proximity.
    """
    counts = []
    min_sin = 1.0
    for ref in refs:
        rep = curve_pair_intersections(curve, ref, tangency_tol)
        counts.append(rep.count)
        min_sin = min(min_sin, rep.min_sin_angle)
    return counts, float(min_sin)


def homotopy_label(surface, curve: DiscreteCurve):
    """Homology-class label: 'trivial' on spheres, winding pair on tori."""
    base = _base_surface(surface)
    if surface.genus == 0:
        return "trivial"
    if surface.genus != 1:
        raise NotImplementedError("homotopy labels support genus 0 and 1 only")
    if isinstance(base, FlatTorus):
        xy = curve.vertex_xy
        nxt = np.roll(np.arange(curve.n), -1)
        d = xy[nxt] - xy
        p1, p2 = base.periods
        d[:, 0] -= p1 * np.round(d[:, 0] / p1)
        d[:, 1] -= p2 * np.round(d[:, 1] / p2)
        tot = d.sum(axis=0)
        return int(round(tot[0] / p1)), int(round(tot[1] / p2))
    r, th = curve.global_coords()
    nxt = np.roll(np.arange(curve.n), -1)
    dth = th[nxt] - th
    dth -= 2 * math.pi * np.round(dth / (2 * math.pi))
    rt = base.profile.r_total
    dr = r[nxt] - r
    dr -= rt * np.round(dr / rt)
    m = int(round(float(dth.sum()) / (2 * math.pi)))
    n = int(round(float(dr.sum()) / rt))
    return m, n


@dataclass
class FlatKnotSignature:
    """Computable invariant tuple of a relative flat knot type (a proxy for
    the full path-component invariant; see package docs)."""

    self_x: int
    ref_x: tuple[int, ...]
    htpy: object
    primitive: bool
    min_sin_self: float = 1.0
    min_sin_ref: float = 1.0

    def key(self):
        return (self.self_x, self.ref_x, self.htpy)

    def matches(self, other: "FlatKnotSignature") -> bool:
        return self.key() == other.key()

    def to_json_dict(self):
        return {
            "self_x": self.self_x,
            "ref_x": list(self.ref_x),
            "htpy": list(self.htpy) if isinstance(self.htpy, tuple) else self.htpy,
            "primitive": self.primitive,
        }


def signature(surface, curve: DiscreteCurve, refs=()) -> FlatKnotSignature:
    """Assemble the intersection signature of a curve relative to reference
    curves."""
    rep = self_intersections(curve)
    ref_counts = []
    min_sin_ref = 1.0
    for ref in refs:
        lrep = curve_pair_intersections(curve, ref)
        ref_counts.append(lrep.count)
        min_sin_ref = min(min_sin_ref, lrep.min_sin_angle)
    htpy = homotopy_label(surface, curve)
    if htpy == "trivial":
        primitive = rep.count == 0
    else:
        m, n = htpy
        primitive = math.gcd(abs(m), abs(n)) == 1
    return FlatKnotSignature(
        self_x=rep.count,
        ref_x=tuple(ref_counts),
        htpy=htpy,
        primitive=primitive,
        min_sin_self=rep.min_sin_angle,
        min_sin_ref=min_sin_ref,
    )


def curve_pair_intersections(curve_a: DiscreteCurve, curve_b: DiscreteCurve,
                             tangency_tol: float = TANGENCY_TOL) -> IntersectionReport:
    """Transverse crossings between two distinct curves."""
    ga = _curve_edge_groups(curve_a)
    gb = _curve_edge_groups(curve_b)
    crossings = _collect_crossings(curve_a.surface, ga, gb, False, curve_a.n, tangency_tol)
    transverse = [c for c in crossings if c.sin_angle >= tangency_tol]
    grazing = [c for c in crossings if c.sin_angle < tangency_tol]
    min_sin = min((c.sin_angle for c in crossings), default=1.0)
    return IntersectionReport(len(transverse), transverse, grazing, float(min_sin))


# ---------------------------------------------------------------------------
# Areas and point location (shared geometric helpers)
# ---------------------------------------------------------------------------


def polygon_area_metric(surface, chart_id: int, pts: np.ndarray, refine: int = 1) -> float:
    """Signed metric area of a chart polygon by fan quadrature of sqrt(det g)."""
    centroid = pts.mean(axis=0)
    a = pts
    b = np.roll(pts, -1, axis=0)
    tris = [(np.full_like(a, centroid), a, b)]
    for _ in range(refine):
        new = []
        for (p, q, r) in tris:
            pq, qr, rp = 0.5 * (p + q), 0.5 * (q + r), 0.5 * (r + p)
            new.extend([(p, pq, rp), (pq, q, qr), (rp, qr, r), (pq, qr, rp)])
        tris = new
    total = 0.0
    for (p, q, r) in tris:
        cen = (p + q + r) / 3.0
        w = surface.area_element(chart_id, cen)
        signed = 0.5 * ((q[:, 0] - p[:, 0]) * (r[:, 1] - p[:, 1]) - (q[:, 1] - p[:, 1]) * (r[:, 0] - p[:, 0]))
        total += float(np.sum(signed * w))
    return total


def point_in_polygon(pts: np.ndarray, query: np.ndarray) -> bool:
    """Planar even-odd test (chart coordinates)."""
    x, y = query
    a = pts
    b = np.roll(pts, -1, axis=0)
    cond = (a[:, 1] > y) != (b[:, 1] > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_int = a[:, 0] + (y - a[:, 1]) / (b[:, 1] - a[:, 1]) * (b[:, 0] - a[:, 0])
    return bool(np.sum(cond & (x_int > x)) % 2)


def curve_hausdorff(curve_a: DiscreteCurve, curve_b: DiscreteCurve) -> float:
    """Approximate symmetric Hausdorff distance between curve images."""
    base = _base_surface(curve_a.surface)
    if isinstance(base, FlatTorus):
        pa = curve_a.vertex_xy
        pb = curve_b.vertex_xy
        d = pa[:, None, :] - pb[None, :, :]
        for axis, period in enumerate(base.periods):
            d[..., axis] -= period * np.round(d[..., axis] / period)
        dist = np.hypot(d[..., 0], d[..., 1])
    else:
        ra, tha = curve_a.global_coords()
        rb, thb = curve_b.global_coords()
        rho = base.profile.rho(0.5 * (np.median(ra) + np.median(rb)))
        dr = ra[:, None] - rb[None, :]
        dth = tha[:, None] - thb[None, :]
        dth -= 2 * math.pi * np.round(dth / (2 * math.pi))
        if not base.profile.sphere_like:
            dr -= base.profile.r_total * np.round(dr / base.profile.r_total)
        dist = np.hypot(dr, float(rho) * dth)
    return float(max(dist.min(axis=1).max(), dist.min(axis=0).max()))


# ---------------------------------------------------------------------------
# Length spectra per signature class
# ---------------------------------------------------------------------------


@dataclass
class SpectrumEntry:
    length: float
    index: int | None
    nullity: int | None
    geodesic_id: str
    circle_family: bool = False


@dataclass
class SpectrumReport:
    signature: FlatKnotSignature | None
    entries: list[SpectrumEntry]
    morse_table: list[dict]
    diagnostics: list[str] = field(default_factory=list)
    seeds_used: int = 0
    seeds_converged: int = 0

    def lengths(self):
        return [e.length for e in self.entries]

    def to_json_dict(self):
        return {
            "signature": self.signature.to_json_dict() if self.signature else None,
            "entries": [
                {
                    "length": e.length,
                    "index": e.index,
                    "nullity": e.nullity,
                    "id": e.geodesic_id,
                    "circle_family": e.circle_family,
                }
                for e in self.entries
            ],
            "advisory": {"morse_table": self.morse_table},
            "diagnostics": self.diagnostics,
            "seeds": {"used": self.seeds_used, "converged": self.seeds_converged},
        }


def signature_feasible(surface, sig: FlatKnotSignature, refs) -> str | None:
    """Cheap obstruction check: on genus-0 surfaces every loop meets every
    closed curve in an even number of transverse points."""
    if surface.genus == 0:
        for i, cnt in enumerate(sig.ref_x):
            if cnt % 2 != 0:
                return f"ref_x[{i}] = {cnt} violates mod-2 intersection invariance on the sphere"
    return None


def spectrum(surface, signature_filter, refs, seed_curves, flow_policy=None,
             dedup_spacing=None) -> SpectrumReport:
    """Flow seed curves, refine converged limits, and collect the length
    spectrum of geodesics matching a signature filter.

    seed_curves: iterable of DiscreteCurve.  flow_policy: kwargs for csf.run.
    """
    from .flow import CONVERGED, run
    from .geodesics import refine_closed
    from .variational import AmbiguousSpectrumError, make_index_report
    from .curves import curve_from_closed_geodesic

    diagnostics = []
    if signature_filter is not None:
        obstruction = signature_feasible(surface, signature_filter, refs)
        if obstruction:
            return SpectrumReport(signature_filter, [], [], [obstruction])
    policy = dict(flow_policy or {})
    kept: list[tuple] = []
    used = converged = 0
    for ci, c0 in enumerate(seed_curves):
        used += 1
        fr = run(surface, c0, references=refs, **policy)
        if fr.fate != CONVERGED:
            diagnostics.append(f"seed {ci}: fate {fr.fate}")
            continue
        try:
            geo = refine_closed(surface, fr.frames[-1])
        except Exception as exc:  # refinement failures are reported, not fatal
            diagnostics.append(f"seed {ci}: refinement failed ({exc})")
            continue
        converged += 1
        spacing = dedup_spacing or c0.target_spacing
        image = curve_from_closed_geodesic(geo, spacing)
        sig = signature(surface, image, refs)
        if signature_filter is not None and not sig.matches(signature_filter):
            diagnostics.append(f"seed {ci}: signature {sig.key()} does not match filter")
            continue
        geo.signature = sig
        geo.geodesic_id = f"geo-{ci:03d}"
        kept.append((geo, image))
    # geometric-distinctness dedup
    distinct: list[tuple] = []
    for geo, image in kept:
        dup = False
        for geo2, image2 in distinct:
            tol = max(image.target_spacing, 1e-6 * geo.length)
            if abs(geo.length - geo2.length) < 10 * tol and curve_hausdorff(image, image2) <= tol:
                dup = True
                break
        if not dup:
            distinct.append((geo, image))
    entries = []
    morse_table = []
    for geo, image in distinct:
        try:
            rep = make_index_report(surface, geo)
            morse_table.append(
                {"id": geo.geodesic_id, "index": rep.index, "nullity": rep.nullity,
                 "local_homology": [[d, r] for d, r in rep.local_homology]}
            )
        except AmbiguousSpectrumError as exc:
            diagnostics.append(f"{geo.geodesic_id}: {exc}")
        entries.append(
            SpectrumEntry(
                length=geo.length,
                index=geo.index,
                nullity=geo.nullity,
                geodesic_id=geo.geodesic_id,
            )
        )
    entries.sort(key=lambda e: e.length)
    # annotate circle families: distinct geodesics at the same length whose
    # nullity exceeds 1 (e.g. meridian circles)
    for i, e in enumerate(entries):
        same = [f for f in entries if abs(f.length - e.length) < 1e-6 * max(1.0, e.length)]
        if len(same) > 1 or (e.nullity or 1) >= 2:
            e.circle_family = True
    return SpectrumReport(
        signature_filter, entries, morse_table, diagnostics, used, converged
    )
