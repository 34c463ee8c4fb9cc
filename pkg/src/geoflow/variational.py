"""Second-variation machinery: Jacobi fields, monodromy, Morse index and
nullity by two independent discretizations, and local-homology rank formulas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import eigh

from .geodesics import ClosedGeodesic, cap_rotation, cap_rotation_derivative, refine_closed
from .profiles import CapProfile


class DegenerateInputError(ValueError):
    """Closed-form local homology formulas require nondegenerate critical sets."""


class AmbiguousSpectrumError(RuntimeError):
    """An eigenvalue cluster straddles the zero tolerance; increase n_nodes."""


ZERO_EIG_REL_TOL = 1e-6


# ---------------------------------------------------------------------------
# Monodromy of the orthogonal Jacobi equation
# ---------------------------------------------------------------------------


def monodromy(surface, gamma: ClosedGeodesic, n_steps: int | None = None) -> np.ndarray:
    """Transfer matrix of u'' + R(t) u = 0 over one period, in arclength.

    Maps (u(0), u'(0)) to (u(L), u'(L)).  When the geodesic carries an
    analytic curvature profile the integration runs in extended precision with
    a fixed-step RK4 on a precomputed curvature grid, so that near-parabolic
    eigenvalue structure survives; otherwise DOP853 on the splined curvature.
    """
    if gamma.residual > 1e-8:
        raise ValueError(f"geodesic not refined enough (residual {gamma.residual:.2e})")
    L = gamma.length
    R_of_t = gamma.curvature_of_t()
    if gamma.analytic_curvature is not None:
        if n_steps is None:
            n_steps = max(8192, int(L / 3e-4))
        return _monodromy_rk4_extended(R_of_t, L, n_steps)

    def rhs(t, y):
        R = float(R_of_t(t))
        return [y[1], -R * y[0], y[3], -R * y[2]]

    sol = solve_ivp(rhs, (0.0, L), [1.0, 0.0, 0.0, 1.0], method="DOP853",
                    rtol=1e-12, atol=1e-14)
    yf = sol.y[:, -1]
    return np.array([[yf[0], yf[2]], [yf[1], yf[3]]])


def _monodromy_rk4_extended(R_of_t, L, n_steps):
    ld = np.longdouble
    h = ld(L) / n_steps
    t_grid = np.arange(n_steps + 1, dtype=ld) * h
    t_mid = t_grid[:-1] + h / 2
    R_grid = np.asarray(R_of_t(np.asarray(t_grid, dtype=float)), dtype=ld)
    R_mid = np.asarray(R_of_t(np.asarray(t_mid, dtype=float)), dtype=ld)
    U = np.eye(2, dtype=ld)

    def mat(R):
        return np.array([[ld(0), ld(1)], [-R, ld(0)]], dtype=ld)

    for i in range(n_steps):
        A0 = mat(R_grid[i])
        Am = mat(R_mid[i])
        A1 = mat(R_grid[i + 1])
        k1 = A0 @ U
        k2 = Am @ (U + (h / 2) * k1)
        k3 = Am @ (U + (h / 2) * k2)
        k4 = A1 @ (U + h * k3)
        U = U + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
    return U


def floquet_data(M: np.ndarray, tol: float = 1e-6) -> dict:
    """Eigenstructure of a (near-)symplectic 2x2 monodromy matrix."""
    tr = M[0, 0] + M[1, 1]
    det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    disc = (tr / 2) ** 2 - det
    out: dict = {"trace": float(tr), "det": float(det)}
    if disc > tol**2:
        root = np.sqrt(disc)
        q1, q2 = tr / 2 + root, tr / 2 - root
        q = q1 if abs(q1) > abs(q2) else q2
        out.update(type="hyperbolic", q=float(q), eigvals=(float(q1), float(q2)))
    elif disc < -(tol**2):
        out.update(type="elliptic", q=None,
                   eigvals=(complex(float(tr / 2), float(np.sqrt(-disc))),
                            complex(float(tr / 2), -float(np.sqrt(-disc)))))
    else:
        lam = float(tr / 2)
        out.update(type="parabolic", q=None, eigvals=(lam, lam))
    # rank of M - I at the relative tolerance, via singular values
    Mf = np.asarray(M, dtype=float)
    sv = np.linalg.svd(Mf - np.eye(2), compute_uv=False)
    scale = max(1.0, float(np.linalg.norm(Mf)))
    out["ker_dim"] = int(np.sum(sv < tol * scale))
    return out


# ---------------------------------------------------------------------------
# Focusing-cap Jacobi transfer check
# ---------------------------------------------------------------------------


def cap_jacobi_transfer_check(cap: CapProfile, xi: float) -> float:
    """Residual of the cap-crossing Jacobi transfer against the closed form
    u(T) = -u(0) + sin(xi) Theta'(xi) u'(0), u'(T) = -u'(0)."""
    theta, t_exit, transfer = cap_rotation(cap, xi, with_jacobi=True)
    dtheta = cap_rotation_derivative(cap, xi)
    expected = np.array([[-1.0, math.sin(xi) * dtheta], [0.0, -1.0]])
    return float(np.max(np.abs(transfer - expected)))


# ---------------------------------------------------------------------------
# Sturm-Liouville index (periodic P1 finite elements)
# ---------------------------------------------------------------------------


def _periodic_p1_matrices(L: float, R_vals: np.ndarray):
    """Stiffness, weighted-potential, and mass matrices on a periodic grid."""
    n = len(R_vals)
    h = L / n
    idx = np.arange(n)
    nxt = (idx + 1) % n
    A = np.zeros((n, n))
    B = np.zeros((n, n))
    Mm = np.zeros((n, n))
    Rj, Rj1 = R_vals, R_vals[nxt]
    a_diag = 1.0 / h
    np.add.at(A, (idx, idx), a_diag)
    np.add.at(A, (nxt, nxt), a_diag)
    np.add.at(A, (idx, nxt), -a_diag)
    np.add.at(A, (nxt, idx), -a_diag)
    np.add.at(Mm, (idx, idx), h / 3.0)
    np.add.at(Mm, (nxt, nxt), h / 3.0)
    np.add.at(Mm, (idx, nxt), h / 6.0)
    np.add.at(Mm, (nxt, idx), h / 6.0)
    # int R phi_a phi_b with R piecewise linear on the element
    np.add.at(B, (idx, idx), h * (3 * Rj + Rj1) / 12.0)
    np.add.at(B, (nxt, nxt), h * (Rj + 3 * Rj1) / 12.0)
    np.add.at(B, (idx, nxt), h * (Rj + Rj1) / 12.0)
    np.add.at(B, (nxt, idx), h * (Rj + Rj1) / 12.0)
    return A, B, Mm


def index_sturm_liouville(surface, gamma: ClosedGeodesic, n_nodes: int = 256):
    """Morse index and total nullity from the periodic quadratic form
    Q(u) = int (u'^2 - R u^2) dt on scalar orthogonal fields.

    Returns (index, total_nullity); total nullity includes the tangential
    direction along the geodesic.
    """
    if n_nodes < 64:
        raise ValueError("n_nodes must be at least 64")
    L = gamma.length
    R_of_t = gamma.curvature_of_t()
    t = np.linspace(0.0, L, n_nodes, endpoint=False)
    R_vals = np.asarray(R_of_t(t), dtype=float)
    A, B, Mm = _periodic_p1_matrices(L, R_vals)
    evals = eigh(A - B, Mm, eigvals_only=True)
    tol = ZERO_EIG_REL_TOL * float(np.max(np.abs(evals)))
    n_neg = int(np.sum(evals < -tol))
    n_zero = int(np.sum(np.abs(evals) <= tol))
    straddle = np.sum((np.abs(evals) > tol / 3.0) & (np.abs(evals) < 3.0 * tol))
    if straddle:
        raise AmbiguousSpectrumError(
            f"{int(straddle)} eigenvalue(s) near the zero tolerance; increase n_nodes"
        )
    return n_neg, n_zero + 1


# ---------------------------------------------------------------------------
# Broken-geodesic index on the transversal-constrained node space
# ---------------------------------------------------------------------------


def index_broken(surface, gamma: ClosedGeodesic, k: int | None = None,
                 transversal=None):
    """Index and constrained nullity of the broken-geodesic energy Hessian,
    with the first node constrained to a transversal through gamma(0).

    The transversal is taken orthogonal to the geodesic at node 0 (an explicit
    curve argument is validated for orthogonality).  Returns (index,
    nullity_constrained).
    """
    from .geodesics import _broken_hessian, angle_to_velocity, connect_batch, _convert_mixed

    if k is not None and k != gamma.k:
        gamma = refine_closed(surface, gamma, k=k)
    if transversal is not None:
        _validate_transversal(surface, gamma, transversal)
    kk = gamma.k
    node_charts, node_xy = gamma.node_charts, gamma.node_xy
    ang, T = gamma.seg_angles.copy(), gamma.seg_lengths.copy()
    nxt = np.roll(np.arange(kk), -1)
    tgt = np.empty((kk, 2))
    for c in np.unique(node_charts):
        m = node_charts == c
        tgt[m] = _convert_mixed(surface, node_charts[nxt][m], node_xy[nxt][m], int(c), node_xy[m])
    ang, T, end_vel, conv = connect_batch(surface, node_charts, node_xy, tgt, ang, T)
    if not np.all(conv):
        raise RuntimeError("segment reconnection failed during Hessian assembly")
    H, _ = _broken_hessian(surface, node_charts, node_xy, ang, T, end_vel, kk)
    # constrain node 0 to the transversal: drop its tangential degree of freedom
    keep = np.ones(2 * kk, dtype=bool)
    keep[0] = False
    Hc = H[np.ix_(keep, keep)]
    evals = np.linalg.eigvalsh(0.5 * (Hc + Hc.T))
    tol = ZERO_EIG_REL_TOL * float(np.max(np.abs(evals)))
    n_neg = int(np.sum(evals < -tol))
    n_zero = int(np.sum(np.abs(evals) <= tol))
    return n_neg, n_zero


def _validate_transversal(surface, gamma, curve):
    """Check that the given curve crosses gamma orthogonally at the base node."""
    from .geodesics import velocity_to_angle, g_norm

    c0 = int(gamma.node_charts[0])
    p0 = gamma.node_xy[0]
    charts = np.asarray(curve.vertex_charts)
    xy = np.asarray(curve.vertex_xy)
    best, best_i = np.inf, 0
    for i in range(len(xy)):
        q = surface.convert(int(charts[i]), xy[i][None], c0, ref_xy=p0[None])[0]
        d = float(g_norm(surface, c0, p0[None], (q - p0)[None])[0])
        if d < best:
            best, best_i = d, i
    if best > 0.05 * gamma.length:
        raise ValueError("transversal does not pass through the geodesic base point")
    i = best_i
    j = (i + 1) % len(xy)
    qi = surface.convert(int(charts[i]), xy[i][None], c0, ref_xy=p0[None])[0]
    qj = surface.convert(int(charts[j]), xy[j][None], c0, ref_xy=p0[None])[0]
    tang_c = qj - qi
    g = surface.metric(c0, p0[None])[0]
    v0 = angle_dir = gamma.velocities[0]
    inner = g[0] * tang_c[0] * v0[0] + g[1] * (tang_c[0] * v0[1] + tang_c[1] * v0[0]) + g[2] * tang_c[1] * v0[1]
    nv = math.sqrt(g[0] * v0[0] ** 2 + 2 * g[1] * v0[0] * v0[1] + g[2] * v0[1] ** 2)
    nt = math.sqrt(g[0] * tang_c[0] ** 2 + 2 * g[1] * tang_c[0] * tang_c[1] + g[2] * tang_c[1] ** 2)
    if abs(inner / (nv * nt)) > 1e-3:
        raise ValueError("transversal is not orthogonal to the geodesic at its base point")


# ---------------------------------------------------------------------------
# Local homology ranks and the assembled index report
# ---------------------------------------------------------------------------


def local_homology_ranks(index: int, nullity: int, critical_kind: str):
    """Closed-form local homology ranks at nondegenerate critical sets.

    critical_kind: 'point' (nullity 1) or 'circle-orientable' (nullity 2).
    """
    if critical_kind == "point":
        if nullity != 1:
            raise DegenerateInputError("point formula requires nullity 1")
        return [(index, 1)]
    if critical_kind == "circle-orientable":
        if nullity != 2:
            raise DegenerateInputError("circle formula requires nullity 2")
        return [(index, 1), (index + 1, 1)]
    raise DegenerateInputError(f"unsupported critical set kind {critical_kind!r}")


@dataclass
class IndexReport:
    index: int
    nullity: int
    floquet_unstable: float | None
    hyperbolic: bool
    method_agreement: bool
    local_homology: list[tuple[int, int]] = field(default_factory=list)
    monodromy_type: str = ""
    ker_dim: int = 0
    broken_index: int = 0
    broken_nullity_constrained: int = 0

    def to_json_dict(self):
        return {
            "index": self.index,
            "nullity": self.nullity,
            "floquet_unstable": self.floquet_unstable,
            "hyperbolic": self.hyperbolic,
            "method_agreement": self.method_agreement,
            "local_homology": [[d, r] for d, r in self.local_homology],
            "monodromy_type": self.monodromy_type,
        }


def make_index_report(surface, gamma: ClosedGeodesic, n_nodes: int = 256,
                      k: int | None = None) -> IndexReport:
    """Full second-variation report; fills the geodesic's index fields.

    Cross-checks the Sturm-Liouville and broken-geodesic indices, the
    nullity/monodromy consistency, and the Floquet parity law.
    """
    sl_index, sl_nullity = index_sturm_liouville(surface, gamma, n_nodes=n_nodes)
    br_index, br_nullity = index_broken(surface, gamma, k=k)
    M = monodromy(surface, gamma)
    fd = floquet_data(M)
    hyperbolic = fd["type"] == "hyperbolic" and abs(fd.get("q") or 0.0) > 1.0
    agreement = (sl_index == br_index) and (br_nullity == sl_nullity - 1)
    if fd["ker_dim"] != sl_nullity - 1:
        agreement = False
    if hyperbolic:
        if sl_nullity != 1:
            agreement = False
        if (fd["q"] > 0) != (sl_index % 2 == 0):
            agreement = False
    ranks: list[tuple[int, int]] = []
    if sl_nullity == 1:
        ranks = local_homology_ranks(sl_index, sl_nullity, "point")
    elif sl_nullity == 2:
        ranks = local_homology_ranks(sl_index, sl_nullity, "circle-orientable")
    report = IndexReport(
        index=sl_index,
        nullity=sl_nullity,
        floquet_unstable=fd.get("q"),
        hyperbolic=hyperbolic,
        method_agreement=agreement,
        local_homology=ranks,
        monodromy_type=fd["type"],
        ker_dim=fd["ker_dim"],
        broken_index=br_index,
        broken_nullity_constrained=br_nullity,
    )
    gamma.index = sl_index
    gamma.nullity = sl_nullity
    gamma.floquet = fd.get("q") if hyperbolic else fd["type"]
    gamma.nondegenerate = sl_nullity == 1
    return report
