"""Potential function -Delta_g f = R - C and Hamilton's entropy monitor.

In the S^1-invariant chart the equation is an ODE, f_ss = e^{phi+omega}(R-C)
in the conformal coordinate, solved by two cumulative quadratures.  The log
singularities  f ~ c_i log x_i  at the ends are split off analytically with
the globally smooth profile

    Lam(x) = (1/2) log( x^2 / (1 + x^2) ) = log x + O(x^2),

whose first and second s-derivatives are closed forms per end kind.  The
coefficients are c_i = e^{phi_i + omega_i}(C - r_i) at a funnel end and
c_i = e^{phi_i + omega_i}(r_i - C) at a cusp end, r_i being the asymptotic
curvature of the full metric; the sign flips because d^2/ds^2 log x_i does.

The first cumulation is anchored at the right face, where bounded gradient
(cusp end) or the Neumann condition (second funnel end) forces the regular
part of f_s to vanish.  Imposing Neumann data at the left funnel too is only
consistent when  ^R int (R - C) dvol = 0, which is enforced to tolerance;
Dirichlet normalization instead pins the regular part of f at the first
funnel end and needs no solvability constraint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .renorm import (renormalized_area, renormalized_surface_integral,
                     simpson_weights_uniform)
from .surface import (InputError, as_field, lap0_apply, scalar_curvature,
                      volume_density)


class SolvabilityError(ValueError):
    """Neumann compatibility integral violated beyond tolerance."""


@dataclass(frozen=True)
class PotentialSolution:
    f: np.ndarray                  # full field, -+inf at a face with c_i != 0
    f_regular: np.ndarray          # f minus the log profiles, finite
    f_s: np.ndarray                # df/ds in the conformal coordinate
    log_coefficients: tuple        # (c_left, c_right)
    residual_norm: float
    grad_sup: float
    boundary_condition: str
    compatibility: float           # measured ^R int (R - C) dvol


def _funnel_profile(y, q, em, sgn):
    """Funnel-end profile in its own coordinate y (= s or L - s).

    Lam(y) = log y + O(y^2), decaying at the far side; q = (sin/k-type
    conformal weight)^2 / y^2 -> e^{-phi} y^2 e^{scale}, u = 1/(1+y^2).
    """
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        lam = -0.5 * np.log1p(y ** (-2.0))
        lam_s = sgn / (y * (1.0 + y**2))
        lam_ss = -(1.0 + 3.0 * y**2) / (y**2 * (1.0 + y**2) ** 2)
        u = 1.0 / (1.0 + y**2)
    enp = -em * q * u * (3.0 - 2.0 * u)
    return lam, lam_s, lam_ss, enp


def potential_profiles(surface):
    """Per-end log profiles (Lam, Lam_s, Lam_ss, e^{-phi} Lam_ss).

    Each profile equals log x_i + O(x_i^2) at its own face and decays at the
    other; all four arrays are global closed forms of the chart coordinate,
    so the telescoped model subtractions in the potential solver are exact.
    On the cusp-cusp cylinder (both faces at s = +-infinity) the pair is
    assembled from the symmetric profile -log sqrt(1+s^2) and the
    antisymmetric -log((s + sqrt(s^2+4))/2).
    """
    em = math.exp(-surface.scale)
    s = surface.s
    if surface.name == "horn":
        left = _funnel_profile(s, np.ones_like(s), em, 1.0)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            lam_r = -0.5 * np.log1p(s**2)
            u = np.where(np.isfinite(s), 1.0 / (1.0 + s**2), 0.0)
            lams_r = np.where(np.isfinite(s), -s * u, 0.0)
        lamss_r = (1.0 - 2.0 * u) * u
        enp_r = em * (1.0 - u) * (1.0 - 2.0 * u)
        lam_r[-1] = -np.inf
        right = (lam_r, lams_r, lamss_r, enp_r)
        return left, right
    if surface.name == "hyperbolic_cylinder":
        k = surface.core_length
        y_r = surface.bdf_right_raw
        q_l = np.sinc(k * s / math.pi) ** 2
        q_r = np.sinc(k * y_r / math.pi) ** 2
        left = _funnel_profile(s, q_l, em, 1.0)
        right = _funnel_profile(y_r, q_r, em, -1.0)
        return left, right
    if surface.name == "cusp_cusp_cylinder":
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            lam = -0.5 * np.log1p(s**2)
            lam_s = -s / (1.0 + s**2)
            lam_ss = (s**2 - 1.0) / (1.0 + s**2) ** 2
            root = np.sqrt(s**2 + 4.0)
            wfun = np.where(s >= 0, (s + root) / 2.0, 2.0 / (root - s))
            b = -np.log(wfun)
            b_s = -1.0 / root
            b_ss = s / root**3
            u = 1.0 / (1.0 + s**2)
            enp_lam = em * (1.0 - 2.0 * u)
            enp_b = em * s * (1.0 + s**2) / root**3
        lam_s = np.where(np.isfinite(lam_s), lam_s, 0.0)
        lam_ss = np.where(np.isfinite(lam_ss), lam_ss, 0.0)
        b_s = np.where(np.isfinite(b_s), b_s, 0.0)
        b_ss = np.where(np.isfinite(b_ss), b_ss, 0.0)
        enp_b = np.where(np.isfinite(enp_b), enp_b,
                         em * np.sign(np.where(np.isfinite(s), s, surface.sigma - 0.5)))
        enp_lam = np.where(np.isfinite(enp_lam), enp_lam, em)
        with np.errstate(invalid="ignore"):
            lam_left = (lam - b) / 2.0
            lam_right = (lam + b) / 2.0
        lam_left[-1] = 0.0      # profile decays at the opposite face
        lam_right[0] = 0.0
        left = (lam_left, (lam_s - b_s) / 2.0,
                (lam_ss - b_ss) / 2.0, (enp_lam - enp_b) / 2.0)
        right = (lam_right, (lam_s + b_s) / 2.0,
                 (lam_ss + b_ss) / 2.0, (enp_lam + enp_b) / 2.0)
        return left, right
    raise InputError(f"no potential profiles for chart {surface.name!r}")


def _log_coefficient(surface, w, side, c):
    e = surface.end(side)
    wi = w[surface.face_index(side)]
    r_g = math.exp(-wi) * e.curvature_asymptote
    sgn = -1.0 if e.kind == "funnel" else 1.0
    return math.exp(e.phi_asymptote + wi) * sgn * (r_g - c)


def _cumulative(y, h, rule):
    if rule == "trapezoid":
        out = np.zeros_like(y)
        out[1:] = np.cumsum((y[1:] + y[:-1]) * (h / 2.0))
        return out
    if rule == "simpson":
        from scipy.integrate import cumulative_simpson
        out = np.zeros_like(y)
        out[1:] = cumulative_simpson(y, dx=h)
        return out
    raise InputError(f"unknown cumulation rule {rule!r}")


def _quadrature_regular_part(surface, w, r, c, c_l, c_r, rule):
    """Log-split double quadrature: regular parts of f and f_s.

    The first cumulation is anchored at the right face (vanishing regular
    f_s there); the second starts from the left face.  Normalization is left
    to the caller.
    """
    h = surface.h
    vd_g = volume_density(surface, w)
    (_, lams_l, lamss_l, _), (_, lams_r, lamss_r, _) = \
        potential_profiles(surface)
    with np.errstate(invalid="ignore"):
        dens = (r - c) * vd_g
        model = (c_l * lamss_l + c_r * lamss_r) * surface.jac
    w_reg = np.where(np.isfinite(dens), dens, 0.0) \
        - np.where(np.isfinite(model), model, 0.0)
    w_reg[0] = 0.0
    w_reg[-1] = 0.0
    cum = _cumulative(w_reg, h, rule)
    g_reg = cum - cum[-1]
    with np.errstate(invalid="ignore"):
        f_s = g_reg + c_l * lams_l + c_r * lams_r
        f_sigma_reg = g_reg * surface.jac
    f_sigma_reg = np.where(np.isfinite(f_sigma_reg), f_sigma_reg, 0.0)
    f_sigma_reg[0] = 0.0
    f_sigma_reg[-1] = 0.0
    f_reg = _cumulative(f_sigma_reg, h, rule)
    return f_reg, f_s, g_reg


def _fd_polish(surface, w, rhs_interior, f_left, f_right):
    """Solve the tridiagonal discrete system Delta_0 f = rhs with Dirichlet
    values at the faces (supplied by the quadrature pass)."""
    from scipy.linalg import solve_banded
    n, h = surface.n, surface.h
    a, b = surface.lap_a, surface.lap_b
    dia = np.ones(n + 1)
    sub = np.zeros(n + 1)
    sup = np.zeros(n + 1)
    dia[1:-1] = 2.0 * a[1:-1] / h**2
    sub[1:-1] = -(a[1:-1] / h**2 - b[1:-1] / (2.0 * h))
    sup[1:-1] = -(a[1:-1] / h**2 + b[1:-1] / (2.0 * h))
    rhs = rhs_interior.copy()
    rhs[0] = f_left
    rhs[-1] = f_right
    ab = np.zeros((3, n + 1))
    ab[0, 1:] = sup[:-1]
    ab[1, :] = dia
    ab[2, :-1] = sub[1:]
    return solve_banded((1, 1), ab, rhs)


def solve_potential(surface, omega, c, bc="dirichlet", rule="simpson",
                    compat_tol=1e-4, fd_polish=True):
    """Solve -Delta_g f = R - C on e^{omega} g_0, log-split.

    The integration constants (hence the boundary behavior) come from a
    double cumulative quadrature anchored at the right face; the interior
    values are then polished by the tridiagonal discrete solve so that the
    finite-difference residual is at roundoff level (set fd_polish=False for
    the pure quadrature solution, used as a cross-check oracle).

    bc = "dirichlet": regular part vanishes at the first funnel end.
    bc = "neumann": Neumann data at every funnel end; requires the
    compatibility integral ^R int (R - C) dvol = 0 to tolerance and
    normalizes by the weighted mean int x_F^2 f dvol = 0.  Surfaces without
    funnel ends always take the finite-area route (compatibility check,
    int f dvol = 0).
    """
    if bc not in ("dirichlet", "neumann"):
        raise InputError(f"unknown boundary condition {bc!r}")
    w = as_field(surface, omega)
    n, h = surface.n, surface.h
    r = scalar_curvature(surface, w)
    has_funnel = any(e.kind == "funnel" for e in surface.ends)

    area = renormalized_area(surface, w).finite_part
    curv = renormalized_surface_integral(surface, w, r).finite_part
    compat = curv - c * area
    scale = max(1.0, float(np.max(np.abs(r - c))))
    if ((bc == "neumann") or not has_funnel) \
            and abs(compat) > compat_tol * scale:
        raise SolvabilityError(
            f"^R int (R - C) dvol = {compat:.3e} violates the Neumann "
            f"solvability constraint (tol {compat_tol:.1e} x {scale:.1e})")

    c_l = _log_coefficient(surface, w, "left", c)
    c_r = _log_coefficient(surface, w, "right", c)
    (lam_l, _, _, enp_l), (lam_r, _, _, enp_r) = potential_profiles(surface)

    f_reg, f_s, g_reg = _quadrature_regular_part(
        surface, w, r, c, c_l, c_r, rule)

    if fd_polish:
        # Delta_0 f_reg = e^{w}(-(R - C)) + (c_l enp_l + c_r enp_r)
        rhs = np.exp(w) * (-(r - c)) + (c_l * enp_l + c_r * enp_r)
        f_reg = _fd_polish(surface, w, rhs, f_reg[0], f_reg[-1])

    with np.errstate(invalid="ignore"):
        log_fields = c_l * lam_l + c_r * lam_r
    f = f_reg + log_fields

    # normalization
    if has_funnel and bc == "dirichlet":
        first = "left" if surface.end("left").kind == "funnel" else "right"
        shift = float(f_reg[surface.face_index(first)])
    else:
        vd_g = volume_density(surface, w)
        weight = vd_g.copy()
        if has_funnel:
            with np.errstate(invalid="ignore"):
                for side in ("left", "right"):
                    if surface.end(side).kind == "funnel":
                        weight = weight * surface.bdf(side) ** 2
        wq = simpson_weights_uniform(n, h) * np.where(np.isfinite(weight),
                                                      weight, 0.0)
        wq[0] = 0.0
        wq[-1] = 0.0
        vals = np.where(np.isfinite(f), f, 0.0)
        shift = float(np.sum(vals * wq) / np.sum(wq))
    f_reg = f_reg - shift
    f = f - shift

    # residual against the discrete operator; the log profiles enter through
    # their exact Laplacians, the smooth part through finite differences
    lap_logs = -np.exp(-w) * (c_l * enp_l + c_r * enp_r)   # Delta_g profiles
    minus_lap_f = -np.exp(-w) * lap0_apply(surface, f_reg) - lap_logs
    resid = minus_lap_f - (r - c)
    residual_norm = float(np.max(np.abs(resid[1:-1])))

    with np.errstate(invalid="ignore", over="ignore"):
        grad_sq = np.exp(-w[1:-1]) * surface.lap_a[1:-1] \
            * (f_s[1:-1] * surface.jac[1:-1]) ** 2
    grad_sup = float(np.sqrt(np.nanmax(grad_sq)))

    return PotentialSolution(
        f=f, f_regular=f_reg, f_s=f_s, log_coefficients=(c_l, c_r),
        residual_norm=residual_norm, grad_sup=grad_sup,
        boundary_condition=bc, compatibility=compat)


def entropy_field(surface, omega, sol):
    """Hamilton's entropy h = -Delta_g f + |grad f|^2_g pointwise.

    Face nodes carry the asymptotic value (r_i - C is folded in through the
    solution's residual identity, so faces use the log-profile limits).
    """
    w = as_field(surface, omega)
    c_l, c_r = sol.log_coefficients
    (_, _, _, enp_l), (_, _, _, enp_r) = potential_profiles(surface)
    lap_logs = -np.exp(-w) * (c_l * enp_l + c_r * enp_r)
    minus_lap_f = -np.exp(-w) * lap0_apply(surface, sol.f_regular) - lap_logs
    # the analytic profile Laplacian already carries the correct face limit
    # of -Delta f (namely r_i - C); only |grad f|^2 needs its face law
    with np.errstate(invalid="ignore", over="ignore"):
        grad_sq = np.exp(-w) * surface.lap_a * (sol.f_s * surface.jac) ** 2
    grad_sq = np.where(np.isfinite(grad_sq), grad_sq, 0.0)
    for side, ci in (("left", c_l), ("right", c_r)):
        j = surface.face_index(side)
        e = surface.end(side)
        grad_sq[j] = ci**2 * math.exp(-(e.phi_asymptote + w[j]))
    return minus_lap_f + grad_sq


@dataclass(frozen=True)
class EntropyMonitor:
    times: np.ndarray
    h_max: np.ndarray
    r_min: np.ndarray
    fitted_decay_rate: float
    normalized_drift: float        # worst increase of h_max e^{-Ct}
    non_increasing: bool
    r_min_lower_ok: bool           # R_min - C >= (R_min(0)-C) e^{Ct} - tol


def monitor_entropy(surface, trajectory, c, bc="dirichlet", drift_tol=0.01,
                    lower_tol=1e-6):
    """h_max(t) along a trajectory with its exponential fit and drift flags."""
    times, hmax, rmin = [], [], []
    for st in trajectory:
        sol = solve_potential(surface, st.omega.omega, c, bc=bc)
        h = entropy_field(surface, st.omega.omega, sol)
        times.append(st.t)
        hmax.append(float(np.max(h[1:-1])))
        rmin.append(float(np.min(st.curvature)))
    times = np.array(times)
    hmax = np.array(hmax)
    rmin = np.array(rmin)

    pos = hmax > 1e-14
    if np.count_nonzero(pos) >= 3:
        rate = float(np.polyfit(times[pos], np.log(hmax[pos]), 1)[0])
    else:
        rate = 0.0
    norm = hmax * np.exp(-c * times)
    ref = max(abs(norm[0]), 1e-14)
    running = np.minimum.accumulate(norm)
    drift = float(np.max((norm - running) / ref))
    lower = (rmin[0] - c) * np.exp(c * times) - lower_tol
    return EntropyMonitor(
        times=times, h_max=hmax, r_min=rmin, fitted_decay_rate=rate,
        normalized_drift=drift, non_increasing=bool(drift <= drift_tol),
        r_min_lower_ok=bool(np.all(rmin - c >= lower)))
