"""Rotationally symmetric profiles: focusing caps and assembled revolution profiles.

A profile is the function ``rho(r)`` in the warped-product metric
``dr^2 + rho(r)^2 dtheta^2``.  Focusing caps are generated from a prescribed
curvature profile ``R(r)`` by solving ``rho'' = -R * rho`` and shooting on a
scale parameter until the boundary parallel is a geodesic (``rho'(r0) = 0``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline


class CapConstructionError(RuntimeError):
    """Shooting for a cap profile failed (no bracket or monotonicity break)."""


def bump(s):
    """Smooth bump: 1 at s=0, strictly decreasing, flat-zero at s=1, 0 beyond."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    si = s[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - si * si))
    return out


def scaled_bump_family(r0: float) -> Callable[[float, np.ndarray], np.ndarray]:
    """Curvature family R(c, r) = c * bump(r / r0), monotone in c."""

    def family(c: float, r):
        return c * bump(np.asarray(r, dtype=float) / r0)

    return family


def _fd_derivatives(f: Callable[[float], float], x: float, h: float) -> tuple[float, float]:
    """First and second derivative of a scalar function by Richardson-extrapolated
    central differences."""

    def d1(step):
        return (f(x + step) - f(x - step)) / (2.0 * step)

    def d2(step):
        return (f(x + step) - 2.0 * f(x) + f(x - step)) / (step * step)

    # one Richardson step, O(h^4)
    fp = (4.0 * d1(h / 2.0) - d1(h)) / 3.0
    fpp = (4.0 * d2(h / 2.0) - d2(h)) / 3.0
    return fp, fpp


@dataclass
class CapProfile:
    """Focusing-cap profile on [0, r0], normalized so rho(r0) = 1.

    Attributes
    ----------
    r0 : cap radius in arclength units (after normalization).
    r_grid, rho_grid, rho_dot_grid : dense samples of the profile and its
        derivative, machine-accurate from the generating ODE.
    curvature : vectorized Gaussian curvature R(r) of the cap metric.
    scale_param : the shot value of the family scale parameter (pre-rescaling).
    """

    r0: float
    r_grid: np.ndarray
    rho_grid: np.ndarray
    rho_dot_grid: np.ndarray
    curvature: Callable[[np.ndarray], np.ndarray]
    scale_param: float
    k_flat: int = 4
    _rho_spline: CubicHermiteSpline = field(init=False, repr=False)
    _rho_dot_spline: CubicHermiteSpline = field(init=False, repr=False)
    _d_spline: CubicHermiteSpline = field(init=False, repr=False)
    _series: tuple[float, float, float] = field(init=False, repr=False)

    def __post_init__(self):
        rho_ddot = -self.curvature(self.r_grid) * self.rho_grid
        self._rho_spline = CubicHermiteSpline(self.r_grid, self.rho_grid, self.rho_dot_grid)
        self._rho_dot_spline = CubicHermiteSpline(self.r_grid, self.rho_dot_grid, rho_ddot)
        # d(r) = rho(r) - r, stored separately so rho - r never cancels
        self._d_spline = CubicHermiteSpline(
            self.r_grid, self.rho_grid - self.r_grid, self.rho_dot_grid - 1.0
        )
        r0_series = max(self.r0 * 1e-3, 1e-6)
        R0 = float(self.curvature(0.0))
        Rp0, Rpp0 = _fd_derivatives(lambda r: float(self.curvature(abs(r))), 0.0, r0_series)
        c3 = -R0 / 6.0
        c4 = -Rp0 / 12.0
        c5 = -Rpp0 / 40.0 + R0 * R0 / 120.0
        self._series = (c3, c4, c5)

    # -- basic evaluation -------------------------------------------------

    def rho(self, r):
        return self._rho_spline(np.asarray(r, dtype=float))

    def rho_dot(self, r):
        return self._rho_dot_spline(np.asarray(r, dtype=float))

    def rho_ddot(self, r):
        r = np.asarray(r, dtype=float)
        return -self.curvature(r) * self.rho(r)

    def rho_minus_r(self, r):
        """rho(r) - r without cancellation; series below r0/50."""
        r = np.asarray(r, dtype=float)
        c3, c4, c5 = self._series
        small = r < self.r0 / 50.0
        out = np.where(small, ((c5 * r + c4) * r + c3) * r**3, self._d_spline(r))
        return out

    def rho_dot_minus_one(self, r):
        r = np.asarray(r, dtype=float)
        c3, c4, c5 = self._series
        small = r < self.r0 / 50.0
        out = np.where(
            small, ((5 * c5 * r + 4 * c4) * r + 3 * c3) * r**2, self._d_spline.derivative()(r)
        )
        return out

    # -- invariants --------------------------------------------------------

    def check_invariants(self) -> dict[str, float]:
        """Evaluate the five profile invariants; returns measured residuals."""
        r = self.r_grid
        res: dict[str, float] = {}
        res["rho_at_0"] = abs(float(self.rho_grid[0]))
        res["rho_dot_at_0"] = abs(float(self.rho_dot_grid[0]) - 1.0)
        res["rho_at_r0"] = abs(float(self.rho_grid[-1]) - 1.0)
        interior = r < self.r0 * (1.0 - 1e-9)
        res["min_rho_dot_interior"] = float(np.min(self.rho_dot_grid[interior]))
        R = self.curvature(r)
        dR = np.diff(R)
        res["max_curvature_increase"] = float(np.max(dR[:-1])) if len(dR) > 1 else 0.0
        res["curvature_at_r0"] = abs(float(self.curvature(self.r0)))
        res["rho_dot_at_r0"] = abs(float(self.rho_dot_grid[-1]))
        # flat attachment: derivatives of rho up to order k_flat at r0 via the
        # generating ODE (rho'' = -R rho and its r-derivatives)
        h = self.r0 * 1e-4
        Rp, Rpp = _fd_derivatives(lambda x: float(self.curvature(min(x, self.r0))), self.r0 - 4 * h, h)
        rho_r0 = float(self.rho_grid[-1])
        rho_dot_r0 = float(self.rho_dot_grid[-1])
        d2 = -float(self.curvature(self.r0)) * rho_r0
        d3 = -Rp * 0.0 - float(self.curvature(self.r0)) * rho_dot_r0  # Rdot(r0) = 0 for flat families
        d4 = -Rpp * 0.0
        res["flat_attachment"] = max(abs(rho_dot_r0), abs(d2), abs(d3), abs(d4))
        return res

    def is_valid(self, tol_equator: float = 1e-8, tol_flat: float = 1e-6) -> bool:
        res = self.check_invariants()
        return (
            res["rho_at_0"] < 1e-12
            and res["rho_dot_at_0"] < 1e-12
            and res["rho_at_r0"] < 1e-9
            and res["min_rho_dot_interior"] > 0.0
            and res["max_curvature_increase"] <= 0.0
            and res["curvature_at_r0"] < 1e-12
            and res["rho_dot_at_r0"] < tol_equator
            and res["flat_attachment"] < tol_flat
        )

    def meridian_length(self) -> float:
        """Arclength of a half-meridian from pole to equator (equals r0)."""
        return self.r0

    def area(self) -> float:
        """Cap area 2*pi*Int rho dr by quadrature."""
        return float(2.0 * math.pi * np.trapezoid(self.rho_grid, self.r_grid))

    def to_csv(self, path) -> None:
        """Write columns r, rho, rho_dot, R."""
        data = np.column_stack(
            [self.r_grid, self.rho_grid, self.rho_dot_grid, self.curvature(self.r_grid)]
        )
        header = "r,rho,rho_dot,R"
        np.savetxt(path, data, delimiter=",", header=header, comments="")


def _integrate_profile(curvature, r0: float, n_samples: int):
    """Solve rho'' = -R rho with rho(0)=0, rho'(0)=1 on [0, r0]."""

    def rhs(r, y):
        return [y[1], -float(curvature(r)) * y[0]]

    r_eval = np.linspace(0.0, r0, n_samples)
    sol = solve_ivp(
        rhs, (0.0, r0), [0.0, 1.0], t_eval=r_eval, rtol=3e-14, atol=1e-16, method="DOP853"
    )
    if not sol.success:
        raise CapConstructionError(f"profile ODE failed: {sol.message}")
    return r_eval, sol.y[0], sol.y[1]


def build_cap(
    r0: float,
    curvature_family: Callable[[float, np.ndarray], np.ndarray] | None = None,
    shoot_tolerance: float = 1e-10,
    n_samples: int = 4096,
    k_flat: int = 4,
) -> CapProfile:
    """Construct a focusing cap by bisection on the curvature-family scale.

    The scale c is adjusted until the profile solving rho'' = -R(c,.) rho with
    rho(0)=0, rho'(0)=1 satisfies rho'(r0) = 0 within ``shoot_tolerance``; the
    result is rescaled so that rho(r0) = 1.

    Raises
    ------
    CapConstructionError
        If no bracket exists (r0 too small for the family), if the family is
        not admissible (curvature increasing along the radius), or if the shot
        profile loses monotonicity before the equator.
    """
    if r0 <= 0.0:
        raise CapConstructionError("cap radius must be positive")
    if curvature_family is None:
        curvature_family = scaled_bump_family(r0)

    probe = np.linspace(0.0, r0, 257)
    Rvals = curvature_family(1.0, probe)
    if np.any(Rvals < -1e-14):
        raise CapConstructionError("curvature family must be nonnegative")
    dR = np.diff(Rvals[:-1])
    if np.any(dR > 1e-12):
        raise CapConstructionError("curvature family must be strictly decreasing on (0, r0)")
    if abs(float(curvature_family(1.0, np.array([r0]))[0])) > 1e-14:
        raise CapConstructionError("curvature family must vanish at r0")

    def shot(c: float) -> float:
        _, _, rho_dot = _integrate_profile(lambda r: curvature_family(c, r), r0, 65)
        return float(rho_dot[-1])

    # rho'(r0) = 1 > 0 at c = 0; grow c until the derivative turns negative,
    # then bisect down to machine resolution (the equator kink feeds straight
    # into downstream Jacobi transfer accuracy)
    c_lo, c_hi = 0.0, 1.0
    f_hi = shot(c_hi)
    doubling = 0
    while f_hi > 0.0:
        c_lo, c_hi = c_hi, c_hi * 2.0
        f_hi = shot(c_hi)
        doubling += 1
        if doubling > 60:
            raise CapConstructionError(f"no shooting bracket found for r0={r0}")
    while c_hi - c_lo > 4e-16 * max(1.0, c_hi):
        c_mid = 0.5 * (c_lo + c_hi)
        f_mid = shot(c_mid)
        if f_mid == 0.0:
            c_lo = c_hi = c_mid
        elif f_mid > 0.0:
            c_lo = c_mid
        else:
            c_hi = c_mid
    c_star = c_lo  # the side where rho' stays nonnegative up to the equator

    r_grid, rho, rho_dot = _integrate_profile(lambda r: curvature_family(c_star, r), r0, n_samples)
    body = r_grid < r0 * (1.0 - 8.0 / n_samples)
    if np.any(rho_dot[body] <= 0.0) or np.any(rho_dot[:-1] <= -1e-12):
        raise CapConstructionError("shot profile loses monotonicity before the equator")
    if abs(rho_dot[-1]) > shoot_tolerance:
        raise CapConstructionError(
            f"shooting did not flatten the equator: rho'(r0) = {rho_dot[-1]:.3e}"
        )
    rho_dot[-1] = 0.0  # remove the residual kink at the cylinder junction

    # rescale the metric by 1/lambda so the equator has unit radius
    lam = float(rho[-1])
    r0_new = r0 / lam

    def curvature_rescaled(r):
        r = np.asarray(r, dtype=float)
        return lam * lam * curvature_family(c_star, np.clip(r * lam, 0.0, r0))

    cap = CapProfile(
        r0=r0_new,
        r_grid=r_grid / lam,
        rho_grid=rho / lam,
        rho_dot_grid=rho_dot.copy(),
        curvature=curvature_rescaled,
        scale_param=c_star,
        k_flat=k_flat,
    )
    # exact endpoint normalization (the grid value is lam/lam = 1 by construction)
    cap.rho_grid[-1] = 1.0
    return cap
