"""S^1-invariant surfaces with funnel and cusp ends, reduced to one dimension.

Every surface here is a conformal cylinder  e^phi (ds^2 + dtheta^2)  with a
theta-circle of length one, compactified to sigma in [0,1] by a fixed
monotone map s(sigma).  Three background geometries are provided:

* horn          (funnel, cusp):   phi = -2 log s on s in (0, inf), R = -2
* hyperbolic cylinder (funnel, funnel):
                phi = -2 log(sin(k s)/k) on s in (0, pi/k), R = -2,
                one primitive closed geodesic of length k
* cusp-cusp cylinder (cusp, cusp):
                phi = -log(1 + s^2) on s in (-inf, inf), finite area pi,
                R = -2 cos(2 pi sigma), asymptotically -2 at both ends

A boundary defining function x_i is attached to each end; it equals the
exact model coordinate near the face and is smoothly clipped to 1 away from
it.  All differential operators are expressed in sigma with bounded
coefficients, so the degeneracy of the Laplacian at the ends appears as a
vanishing coefficient instead of an unbounded one.

The sign convention is the positive (spectral) Laplacian throughout:
Delta u = -u'' on the flat line, and R_g = e^{-omega}(R_0 + Delta_0 omega)
for g = e^{omega} g_0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

FORMAT_VERSION = 1

# chart-scale fraction where each bdf stops being the exact coordinate / is 1
BDF_EXACT_BELOW = 0.25
BDF_ONE_ABOVE = 0.9
# OmegaCond cutoff scale: chi(x) = 1 for x < eps/2, 0 for x > 3 eps/4
CUTOFF_EPS = 0.25


def smooth_step(r):
    """C-infinity monotone step: 0 for r <= 0, 1 for r >= 1."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    out[r >= 1.0] = 1.0
    mid = (r > 0.0) & (r < 1.0)
    rm = r[mid]
    q = np.exp(-1.0 / rm)
    q1 = np.exp(-1.0 / (1.0 - rm))
    out[mid] = q / (q + q1)
    return out if out.ndim else float(out)


def cutoff_chi(x, eps=CUTOFF_EPS):
    """Cutoff profile chi(x): 1 for x < eps/2, 0 for x > 3 eps/4, smooth between."""
    x = np.asarray(x, dtype=float)
    return 1.0 - smooth_step((x - eps / 2.0) / (eps / 4.0))


def _clip_bdf(raw):
    """Clip a raw bdf coordinate to equal 1 away from the face.

    Exact below BDF_EXACT_BELOW, identically 1 above BDF_ONE_ABOVE,
    C-infinity monotone in between (interpolated in log x).
    """
    raw = np.asarray(raw, dtype=float)
    out = np.ones_like(raw)
    small = raw < BDF_ONE_ABOVE
    u = raw[small]
    lu = np.log(np.maximum(u, 1e-300))
    t = smooth_step((lu - math.log(BDF_EXACT_BELOW))
                    / (math.log(BDF_ONE_ABOVE) - math.log(BDF_EXACT_BELOW)))
    out[small] = np.exp(lu * (1.0 - t))
    return out


class InputError(ValueError):
    """Malformed input (non-monotone bdf, bad parameters)."""


@dataclass(frozen=True)
class EndModel:
    """Asymptotic model of one end.

    curvature_asymptote is tied to phi_asymptote by r_i = -2 e^{-phi_i}.
    decay_order is the x^delta rate at which the background approaches its
    model; it is recorded for bookkeeping and reported by diagnostics but not
    enforced as a hard precondition.
    """

    kind: str                 # "funnel" | "cusp"
    bdf_name: str
    phi_asymptote: float
    curvature_asymptote: float
    decay_order: float

    def __post_init__(self):
        if self.kind not in ("funnel", "cusp"):
            raise InputError(f"unknown end kind {self.kind!r}")
        expected = -2.0 * math.exp(-self.phi_asymptote)
        if abs(self.curvature_asymptote - expected) > 1e-12 * (1 + abs(expected)):
            raise InputError("curvature_asymptote must equal -2 exp(-phi_asymptote)")
        if self.decay_order <= 0:
            raise InputError("decay_order must be positive")


@dataclass(frozen=True)
class ConformalSurface:
    """Compactified 1D surface: grid, background factor, end models.

    background_phi carries +/-inf at face nodes where the conformal factor
    genuinely blows up (funnel) or pinches (cusp); all operators consume the
    bounded derived arrays instead.
    """

    name: str
    sigma: np.ndarray            # N+1 nodes in [0,1]
    background_phi: np.ndarray
    ends: tuple  # (EndModel, EndModel)
    euler_characteristic: int
    n_cusps: int
    # bounded derived arrays
    s: np.ndarray                # conformal coordinate (+-inf at cusp faces)
    jac: np.ndarray              # ds/dsigma
    lap_a: np.ndarray            # e^{-phi}/J^2
    lap_b: np.ndarray            # -e^{-phi} J_sigma / J^3
    vol0: np.ndarray             # e^{phi} J, background volume density in sigma
    curv0: np.ndarray            # scalar curvature of the background
    bdf_left: np.ndarray         # clipped bdfs
    bdf_right: np.ndarray
    bdf_left_raw: np.ndarray     # exact coordinates near the faces
    bdf_right_raw: np.ndarray
    dbdf_left: np.ndarray        # d(raw bdf)/dsigma, signed
    dbdf_right: np.ndarray
    phi_eff_left: np.ndarray     # phi relative to the end model (finite at face)
    phi_eff_right: np.ndarray
    grading: tuple               # algebraic grading power of x(sigma) per end
    scale: float = 0.0
    core_length: float = 1.0
    # potential-solver model pieces: d/ds log x_i and d^2/ds^2 log x_i
    dlog_bdf_ds: tuple = field(default=None, repr=False)
    d2log_bdf_ds2: tuple = field(default=None, repr=False)

    @property
    def n(self):
        return len(self.sigma) - 1

    @property
    def h(self):
        return 1.0 / self.n

    @property
    def bdf_total(self):
        return self.bdf_left * self.bdf_right

    def end(self, side):
        return self.ends[0 if side == "left" else 1]

    def face_index(self, side):
        return 0 if side == "left" else self.n

    def bdf(self, side):
        return self.bdf_left if side == "left" else self.bdf_right

    def bdf_raw(self, side):
        return self.bdf_left_raw if side == "left" else self.bdf_right_raw

    def dbdf(self, side):
        return self.dbdf_left if side == "left" else self.dbdf_right

    def phi_eff(self, side):
        return self.phi_eff_left if side == "left" else self.phi_eff_right

    def collar_slice(self, side, x_max=0.2):
        """Indexes of interior nodes with raw bdf <= x_max, nearest face first."""
        if side == "left":
            raw = self.bdf_left_raw
            idx = np.arange(1, self.n)
            sel = idx[raw[idx] <= x_max]
        else:
            raw = self.bdf_right_raw
            idx = np.arange(self.n - 1, 0, -1)
            sel = idx[raw[idx] <= x_max]
        return sel

    def to_json(self):
        phi = [None if not np.isfinite(v) else float(v) for v in self.background_phi]
        doc = {
            "format_version": FORMAT_VERSION,
            "kind": self.name,
            "ends": [self.ends[0].kind, self.ends[1].kind],
            "grid_size": self.n,
            "scale": self.scale,
            "core_length": self.core_length,
            "euler_characteristic": self.euler_characteristic,
            "n_cusps": self.n_cusps,
            "end_models": [
                {"kind": e.kind, "bdf_name": e.bdf_name,
                 "phi_asymptote": e.phi_asymptote,
                 "curvature_asymptote": e.curvature_asymptote,
                 "decay_order": e.decay_order}
                for e in self.ends
            ],
            "phi": phi,
        }
        return json.dumps(doc, sort_keys=True)


def surface_from_json(text):
    doc = json.loads(text)
    if doc.get("format_version") != FORMAT_VERSION:
        raise InputError("unsupported surface format_version")
    surf = build_model_surface(doc["ends"][0], doc["ends"][1], doc["grid_size"],
                               scale=doc.get("scale", 0.0),
                               core_length=doc.get("core_length", 1.0))
    phi = np.array([np.nan if v is None else v for v in doc["phi"]])
    ours = surf.background_phi
    mism = np.nanmax(np.abs(np.where(np.isfinite(ours), ours, np.nan) - phi))
    if not (np.isnan(mism) or mism < 1e-9):
        raise InputError("serialized phi does not match the rebuilt chart")
    return surf


@dataclass(frozen=True)
class ConformalFactor:
    """Conformal factor omega with its end values.

    omega decomposes as  omega = tilde + sum_i omega_i chi(x_i)  against the
    fixed cutoff profile; tilde must be O(x^2) at each end for the Polyakov
    machinery to apply.
    """

    omega: np.ndarray

    @property
    def boundary_values(self):
        return float(self.omega[0]), float(self.omega[-1])

    def tilde(self, surface):
        w = self.omega
        chi_l = cutoff_chi(surface.bdf_left)
        chi_r = cutoff_chi(surface.bdf_right)
        return w - w[0] * chi_l - w[-1] * chi_r

    def to_json(self):
        doc = {
            "format_version": FORMAT_VERSION,
            "omega": [float(v) for v in self.omega],
        }
        return json.dumps(doc, sort_keys=True)


def factor_from_json(text):
    doc = json.loads(text)
    if doc.get("format_version") != FORMAT_VERSION:
        raise InputError("unsupported factor format_version")
    return ConformalFactor(np.asarray(doc["omega"], dtype=float))


def zero_factor(surface):
    return ConformalFactor(np.zeros(surface.n + 1))


def as_field(surface, omega):
    """Accept a ConformalFactor, an array, or None (zero factor)."""
    if omega is None:
        return np.zeros(surface.n + 1)
    if isinstance(omega, ConformalFactor):
        return omega.omega
    w = np.asarray(omega, dtype=float)
    if w.shape != surface.sigma.shape:
        raise InputError("omega field does not match the grid")
    return w


# ---------------------------------------------------------------------------
# charts


def _build_horn(n, scale, core_length):
    sig = np.linspace(0.0, 1.0, n + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = sig**2 / (1.0 - sig) ** 2
        jac = 2.0 * sig / (1.0 - sig) ** 3
        phi = scale - 4.0 * np.log(sig) + 4.0 * np.log1p(-sig)
        xr_raw = (1.0 - sig) ** 2 / sig**2
        dxr = -2.0 * (1.0 - sig) / sig**3
        vol0 = math.exp(scale) * 2.0 * (1.0 - sig) / sig**3
        dlog_l = 1.0 / s          # d/ds log x_L, x_L = s
        d2log_l = -1.0 / s**2
        dlog_r = -1.0 / s         # d/ds log x_R, x_R = 1/s
        d2log_r = 1.0 / s**2
    em = math.exp(-scale)
    lap_a = em * sig**2 * (1.0 - sig) ** 2 / 4.0
    lap_b = -em * sig * (1.0 + 2.0 * sig) * (1.0 - sig) / 4.0
    curv0 = np.full(n + 1, -2.0 * em)
    xl_raw = s.copy()
    dxl = jac.copy()
    phi_eff_l = np.full(n + 1, scale)
    phi_eff_r = np.full(n + 1, scale)
    return dict(sigma=sig, s=s, jac=jac, phi=phi, lap_a=lap_a, lap_b=lap_b,
                vol0=vol0, curv0=curv0, xl_raw=xl_raw, xr_raw=xr_raw,
                dxl=dxl, dxr=dxr, phi_eff_l=phi_eff_l, phi_eff_r=phi_eff_r,
                dlog=(dlog_l, dlog_r), d2log=(d2log_l, d2log_r),
                grading=(2, 2))


def _build_hyperbolic_cylinder(n, scale, core_length):
    k = core_length
    length = math.pi / k
    sig = np.linspace(0.0, 1.0, n + 1)
    s = length * sig**2 * (3.0 - 2.0 * sig)
    # L - s = L (1-sigma)^2 (1+2 sigma), exact near the right face
    xr_raw = length * (1.0 - sig) ** 2 * (1.0 + 2.0 * sig)
    jac = 6.0 * length * sig * (1.0 - sig)
    jac_s = 6.0 * length * (1.0 - 2.0 * sig)
    em = math.exp(-scale)
    # sin(ks)/k evaluated from whichever face is nearer (kL = pi), avoiding
    # the cancellation of sin near pi
    sinc_l = np.sinc(k * s / math.pi)           # sin(ks)/(ks)
    sinc_r = np.sinc(k * xr_raw / math.pi)
    sin_over_k = np.where(sig <= 0.5, s * sinc_l, xr_raw * sinc_r)
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = scale - 2.0 * np.log(sin_over_k)
        vol0 = math.exp(scale) * jac / sin_over_k**2
        lap_a = em * sin_over_k**2 / jac**2
        lap_b = -em * sin_over_k**2 * jac_s / jac**3
        dlog_l = 1.0 / s
        d2log_l = -1.0 / s**2
        dlog_r = -1.0 / xr_raw
        d2log_r = -1.0 / xr_raw**2
        phi_eff_l = scale - 2.0 * np.log(sin_over_k / s)
        phi_eff_r = scale - 2.0 * np.log(sin_over_k / xr_raw)
    # faces: the degenerate coefficients have limit 0
    lap_a[[0, -1]] = 0.0
    lap_b[[0, -1]] = 0.0
    phi_eff_l[0] = scale
    phi_eff_r[-1] = scale
    curv0 = np.full(n + 1, -2.0 * em)
    return dict(sigma=sig, s=s, jac=jac, phi=phi, lap_a=lap_a, lap_b=lap_b,
                vol0=vol0, curv0=curv0, xl_raw=s.copy(), xr_raw=xr_raw,
                dxl=jac.copy(), dxr=-jac, phi_eff_l=phi_eff_l,
                phi_eff_r=phi_eff_r, dlog=(dlog_l, dlog_r),
                d2log=(d2log_l, d2log_r), grading=(2, 2))


def _build_cusp_cusp(n, scale, core_length):
    sig = np.linspace(0.0, 1.0, n + 1)
    em = math.exp(-scale)
    with np.errstate(divide="ignore", invalid="ignore"):
        # tan evaluated near the closer face only, avoiding sin(pi sigma)
        # cancellation at sigma -> 1
        xl_raw = np.tan(np.pi * np.minimum(sig, 0.5))
        xr_raw = np.tan(np.pi * np.minimum(1.0 - sig, 0.5))
        s = np.where(sig <= 0.5, -1.0 / xl_raw, 1.0 / xr_raw)
        x_near = np.minimum(xl_raw, xr_raw)
        sn2 = x_near**2 / (1.0 + x_near**2)       # sin^2(pi sigma), stable
        jac = np.pi / sn2
        phi = scale + np.log(sn2)
        dxl = np.pi * (1.0 + xl_raw**2)
        dxr = -np.pi * (1.0 + xr_raw**2)
        dlog = -1.0 / s            # same form at both cusps
        d2log = 1.0 / s**2
        cos2 = 1.0 / (1.0 + x_near**2)             # cos^2(pi sigma)
        phi_eff_l = scale + np.log(cos2)
        phi_eff_r = phi_eff_l.copy()
    lap_a = em * sn2 / math.pi**2
    lap_b = em * 2.0 * np.sign(0.5 - sig) * np.sqrt(sn2 * cos2) / math.pi
    vol0 = np.full(n + 1, math.exp(scale) * math.pi)
    curv0 = -2.0 * em * (cos2 - sn2)
    phi_eff_l[0] = scale
    phi_eff_r[-1] = scale
    return dict(sigma=sig, s=s, jac=jac, phi=phi, lap_a=lap_a, lap_b=lap_b,
                vol0=vol0, curv0=curv0, xl_raw=xl_raw, xr_raw=xr_raw,
                dxl=dxl, dxr=dxr, phi_eff_l=phi_eff_l, phi_eff_r=phi_eff_r,
                dlog=(dlog, dlog), d2log=(d2log, d2log), grading=(1, 1))


_CHARTS = {
    ("funnel", "cusp"): ("horn", _build_horn),
    ("funnel", "funnel"): ("hyperbolic_cylinder", _build_hyperbolic_cylinder),
    ("cusp", "cusp"): ("cusp_cusp_cylinder", _build_cusp_cusp),
}


def build_model_surface(left, right, grid_size, scale=0.0, core_length=1.0):
    """Build one of the model cylinders.

    (funnel, cusp) is the horn, (funnel, funnel) the hyperbolic cylinder with
    core geodesic length `core_length`, (cusp, cusp) the finite-area cylinder.
    `scale` shifts phi by a constant, moving every r_i to -2 e^{-scale}.
    """
    left, right = left.lower(), right.lower()
    if (left, right) not in _CHARTS:
        raise InputError(
            f"unsupported end combination ({left}, {right}); "
            "orient the funnel end first: (funnel, cusp)")
    if grid_size < 16:
        raise InputError("grid_size must be at least 16")
    if core_length <= 0:
        raise InputError("core_length must be positive")
    name, builder = _CHARTS[(left, right)]
    a = builder(grid_size, scale, core_length)
    r_inf = -2.0 * math.exp(-scale)
    ends = (
        EndModel(left, "x1", scale, r_inf, 2.0),
        EndModel(right, "x2", scale, r_inf, 2.0),
    )
    n_cusps = (left == "cusp") + (right == "cusp")
    return ConformalSurface(
        name=name, sigma=a["sigma"], background_phi=a["phi"], ends=ends,
        euler_characteristic=0, n_cusps=n_cusps, s=a["s"], jac=a["jac"],
        lap_a=a["lap_a"], lap_b=a["lap_b"], vol0=a["vol0"], curv0=a["curv0"],
        bdf_left=_clip_bdf(a["xl_raw"]), bdf_right=_clip_bdf(a["xr_raw"]),
        bdf_left_raw=a["xl_raw"], bdf_right_raw=a["xr_raw"],
        dbdf_left=a["dxl"], dbdf_right=a["dxr"],
        phi_eff_left=a["phi_eff_l"], phi_eff_right=a["phi_eff_r"],
        grading=a["grading"], scale=scale, core_length=core_length,
        dlog_bdf_ds=a["dlog"], d2log_bdf_ds2=a["d2log"])


# ---------------------------------------------------------------------------
# discrete operators


def _d1(u, h):
    out = np.zeros_like(u)
    out[1:-1] = (u[2:] - u[:-2]) / (2.0 * h)
    out[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h)
    out[-1] = (3.0 * u[-1] - 4.0 * u[-2] + u[-3]) / (2.0 * h)
    return out


def _d2(u, h):
    out = np.zeros_like(u)
    out[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / h**2
    out[0] = (2.0 * u[0] - 5.0 * u[1] + 4.0 * u[2] - u[3]) / h**2
    out[-1] = (2.0 * u[-1] - 5.0 * u[-2] + 4.0 * u[-3] - u[-4]) / h**2
    return out


def lap0_apply(surface, u):
    """Background positive Laplacian Delta_0 u, zero at the degenerate faces."""
    h = surface.h
    out = -(surface.lap_a * _d2(u, h) + surface.lap_b * _d1(u, h))
    out[0] = 0.0
    out[-1] = 0.0
    return out


def laplacian_apply(surface, omega, u):
    """Positive Laplacian of u in the metric e^{omega} g_0."""
    w = as_field(surface, omega)
    return np.exp(-w) * lap0_apply(surface, u)


def gradient_norm_sq(surface, omega, u):
    """|grad u|^2 in the metric e^{omega} g_0."""
    w = as_field(surface, omega)
    du = _d1(u, surface.h)
    out = np.exp(-w) * surface.lap_a * du**2
    return np.where(np.isfinite(out), out, 0.0)


def scalar_curvature(surface, omega):
    """Pointwise scalar curvature of e^{omega} g_0.

    Faces follow the asymptotic law R -> e^{-omega_i} r_i; the interior uses
    R = e^{-omega}(R_0 + Delta_0 omega).
    """
    w = as_field(surface, omega)
    r = np.exp(-w) * (surface.curv0 + lap0_apply(surface, w))
    r[0] = math.exp(-w[0]) * surface.ends[0].curvature_asymptote
    r[-1] = math.exp(-w[-1]) * surface.ends[1].curvature_asymptote
    return r


def volume_density(surface, omega):
    """sigma-density of dvol for e^{omega} g_0 (theta already integrated)."""
    w = as_field(surface, omega)
    return np.exp(w) * surface.vol0


# ---------------------------------------------------------------------------
# end diagnostics


@dataclass(frozen=True)
class EndReport:
    side: str
    linear_coefficient: float
    fit_residual: float
    tol: float

    @property
    def totally_geodesic(self):
        return abs(self.linear_coefficient) <= self.tol


def check_totally_geodesic(surface, omega, tol=1e-3):
    """Fit (phi+omega) minus its end model against powers of each bdf.

    The reported linear_coefficient is the x_i^1 coefficient of the deviation;
    the end is flagged totally geodesic when it does not exceed tol.
    """
    from . import renorm  # local import; renorm builds on this module

    w = as_field(surface, omega)
    reports = []
    for side in ("left", "right"):
        idx = surface.collar_slice(side)
        x = surface.bdf_raw(side)[idx]
        gr = surface.grading[0 if side == "left" else 1]
        u = (surface.phi_eff(side)[idx] + w[idx])
        u = u - (surface.end(side).phi_asymptote + w[surface.face_index(side)])
        step = 1.0 / gr
        basis = [(k * step, 0) for k in range(1, int(round(2.5 * gr)) + 1)]
        exp = renorm.fit_boundary_expansion(u, x, basis)
        coeff = exp.coefficient(1.0, 0)
        reports.append(EndReport(side, coeff, exp.residual, tol))
    return reports


def geodesic_bdf_shift(surface, omega):
    """Leading geodesic-bdf correction -1/2 (phi_i + omega_i) per funnel end."""
    w = as_field(surface, omega)
    out = {}
    for side in ("left", "right"):
        e = surface.end(side)
        if e.kind == "funnel":
            out[side] = -0.5 * (e.phi_asymptote + w[surface.face_index(side)])
    return out
