"""Exact bootstrap probabilities and rejection rates for analytic regions.

Regions:

* ``halfspace``: ``H = {v <= 0}`` in the plane.
* ``curve_boundary``: ``H = {(u, v): v <= -h(u)}`` with
  ``h(u) = sign * sqrt(a + u**2 / 3)``. ``sign = -1`` gives a concave H,
  ``+1`` a convex H; ``a = 0`` puts a cone vertex at the origin.
* ``sphere_shell``: ``H = {||mu|| >= theta}`` (``H_outside``, concave) or
  ``H = {||mu|| <= theta}`` (``H_inside``, convex) in R^dim.

The selective region is always the complement of H. Probabilities are
computed by quadrature (split at the cone kink) or through the noncentral
chi-square law, never by simulation. The z-value derivatives at scale 1 come
from a five-point stencil in the scale, after which the same Taylor p-value
code as the count-based pipeline is applied.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss

from .bootstrap_engine import ScaleGrid
from .core_stats import (
    composite_legendre,
    noncentral_chisq_cdf,
    noncentral_chisq_sf,
    std_normal_upper,
    upper_inv_extended,
)
from .pvalues import PValueReport, report_from_derivatives, taylor_pvalues
from .scaling_models import fisher_weights, fit_wls, model_derivatives

logger = logging.getLogger(__name__)

METHODS = ("BP", "AU2", "AU3", "2BP", "2AU2", "2AU3", "SI2", "SI3", "SDBP", "ETSI")
TABLE_METHODS = ("BP", "AU3", "2BP", "2AU2", "2AU3", "SDBP", "SI2", "SI3")
TABLE_THETAS = tuple(0.5 * np.arange(8))
BIAS_THETAS = tuple(0.05 * np.arange(71))
NAMED_REGIONS = {
    "concave-smooth": (-1.0, 1.0),
    "concave-nonsmooth": (-1.0, 0.0),
    "convex-smooth": (1.0, 1.0),
    "convex-nonsmooth": (1.0, 0.0),
}


@dataclass(frozen=True)
class RegionSpec:
    """Analytic hypothesis region; the selective region is its complement."""

    kind: str
    sign: float = -1.0
    a: float = 1.0
    theta: float = 1.0
    dim: int = 2
    orientation: str = "H_outside"

    def __post_init__(self):
        if self.kind not in ("halfspace", "curve_boundary", "sphere_shell"):
            raise ValueError(f"unknown region kind {self.kind!r}")
        if self.kind == "curve_boundary" and (self.sign not in (-1.0, 1.0) or self.a < 0):
            raise ValueError("curve_boundary needs sign in {-1, +1} and a >= 0")
        if self.kind == "sphere_shell":
            if self.theta <= 0 or self.dim < 1:
                raise ValueError("sphere_shell needs theta > 0 and dim >= 1")
            if self.orientation not in ("H_outside", "H_inside"):
                raise ValueError("orientation must be H_outside or H_inside")

    @classmethod
    def halfspace(cls) -> "RegionSpec":
        return cls("halfspace", sign=0.0, a=0.0)

    @classmethod
    def curve(cls, sign: float, a: float) -> "RegionSpec":
        return cls("curve_boundary", sign=float(sign), a=float(a))

    @classmethod
    def sphere(cls, theta: float, dim: int, orientation: str = "H_outside") -> "RegionSpec":
        return cls("sphere_shell", theta=float(theta), dim=int(dim), orientation=orientation)

    @classmethod
    def named(cls, name: str) -> "RegionSpec":
        """``halfspace`` or ``{concave,convex}-{smooth,nonsmooth}``."""
        if name == "halfspace":
            return cls.halfspace()
        if name not in NAMED_REGIONS:
            raise ValueError(f"unknown region {name!r}; choose from halfspace, {', '.join(NAMED_REGIONS)}")
        return cls.curve(*NAMED_REGIONS[name])

    @property
    def planar(self) -> bool:
        return self.kind != "sphere_shell"

    def h(self, u):
        """Boundary function; the boundary is ``v = -h(u)``."""
        u = np.asarray(u, dtype=float)
        if self.kind == "halfspace":
            return np.zeros_like(u)
        return self.sign * np.sqrt(self.a + u * u / 3.0)

    def boundary_point(self, theta: float):
        """Boundary point indexed by ``theta`` (the u coordinate, or the radius direction for spheres)."""
        if self.planar:
            return np.array([theta, -float(self.h(theta))])
        e = np.zeros(self.dim)
        e[0] = self.theta
        return e


@dataclass(frozen=True)
class OracleConfig:
    """Numerical settings of the oracle.

    Attributes:
        inner_order: Legendre nodes on each side of the kink for the
            expectation over the tangential coordinate.
        inner_halfwidth: Truncation of that expectation in standard deviations.
        panel_order: Legendre nodes per unit panel of the outer u-integral.
        u_window: Outer integration range, panel edges at integers.
        bisect_iter: Bisection steps for rejection thresholds.
        fd_step: Scale step of the five-point derivative stencil around 1.
        sdbp_vpoints: v-grid size for inverting the first-level double-bootstrap p-value.
        sdbp_inner_sigma2: Scale of the numerator bootstrap probability in that p-value.
        sphere_window: Radial search width below/above the sphere boundary.
    """

    inner_order: int = 80
    inner_halfwidth: float = 10.0
    panel_order: int = 20
    u_window: tuple = (-14, 18)
    bisect_iter: int = 45
    fd_step: float = 0.02
    sdbp_vpoints: int = 1201
    sdbp_inner_sigma2: float = 1.0
    sphere_window: float = 20.0

    def __post_init__(self):
        if self.inner_order < 16 or self.panel_order < 2:
            raise ValueError("quadrature orders too small")
        if self.fd_step <= 0 or self.fd_step >= 0.5 or self.bisect_iter < 10:
            raise ValueError("invalid step or bisection settings")

    def refined(self) -> "OracleConfig":
        """Same settings with both quadrature orders doubled."""
        return OracleConfig(**{**asdict(self), "inner_order": 2 * self.inner_order,
                               "panel_order": 2 * self.panel_order})


DEFAULT_CONFIG = OracleConfig()
FD_OFFSETS = (-2, -1, 0, 1, 2)


@lru_cache(maxsize=8)
def _legendre(order):
    return leggauss(order)


@lru_cache(maxsize=8)
def _outer_rule(cfg: OracleConfig):
    """Outer u nodes, built from the nonnegative half so that r(|u|) is shared exactly."""
    lo, hi = cfg.u_window
    pos_x, pos_w = composite_legendre(np.arange(0, hi + 1), cfg.panel_order)
    neg_n = -lo * cfg.panel_order
    U = np.r_[-pos_x[:neg_n][::-1], pos_x]
    W = np.r_[pos_w[:neg_n][::-1], pos_w]
    idx = np.r_[np.arange(neg_n)[::-1], np.arange(pos_x.size)]
    return U, W, pos_x, idx


def _phi(x):
    return np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)


# ----------------------------------------------------------------------------
# bootstrap probabilities
# ----------------------------------------------------------------------------

def _alpha_curve(region: RegionSpec, u, v, s, cfg: OracleConfig):
    """P(V* <= -h(U*)) for (U*, V*) ~ N((u, v), s I), split at the kink of h."""
    u = np.asarray(u, dtype=float)[..., None]
    v = np.asarray(v, dtype=float)[..., None]
    sd = math.sqrt(s)
    L = cfg.inner_halfwidth
    x, w = _legendre(cfg.inner_order)
    z0 = np.clip(-u / sd, -L, L)
    total = 0.0
    for lo, hi in ((-L, z0), (z0, L)):
        half = 0.5 * (hi - lo)
        z = 0.5 * (hi + lo) + half * x
        f = _phi(z) * std_normal_upper((v + region.h(u + sd * z)) / sd)
        total = total + half[..., 0] * (f @ w)
    return total


def _sphere_alpha(region: RegionSpec, r, s):
    """Probability of H for ||Y*||^2 / s ~ noncentral chi-square(dim, r^2/s)."""
    x = region.theta**2 / s
    r = np.atleast_1d(np.asarray(r, dtype=float))
    f = noncentral_chisq_sf if region.orientation == "H_outside" else noncentral_chisq_cdf
    return np.array([f(x, region.dim, ri * ri / s) for ri in r])


def _radius(region, y):
    y = np.asarray(y, dtype=float)
    if y.ndim == 0:
        return np.abs(y)
    if y.shape[-1] != region.dim:
        raise ValueError(f"points must have {region.dim} coordinates")
    return np.linalg.norm(y, axis=-1)


def _split_planar(y):
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != 2:
        raise ValueError("planar regions take points of shape (..., 2)")
    return y[..., 0], y[..., 1]


def exact_bootstrap_prob(region: RegionSpec, y, sigma2: float, cfg: OracleConfig = DEFAULT_CONFIG,
                         side: str = "H"):
    """Probability that ``Y* ~ N(y, sigma2 I)`` lies in H (or in S = H^c).

    Args:
        region: Region description.
        y: Point(s); shape (..., 2) for planar regions, (..., dim) or a radius
            for spheres.
        sigma2: Bootstrap scale, > 0.
        side: ``"H"`` or ``"S"``.
    """
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    if region.kind == "halfspace":
        _, v = _split_planar(y)
        a = std_normal_upper(v / math.sqrt(sigma2))
    elif region.kind == "curve_boundary":
        u, v = _split_planar(y)
        a = _alpha_curve(region, u, v, sigma2, cfg)
    else:
        r = _radius(region, y)
        a = _sphere_alpha(region, r.ravel(), sigma2).reshape(np.shape(r))
    return a if side == "H" else 1.0 - a


def _alpha_at(region, coord, s, cfg):
    """Bootstrap probability of H at planar points (u, v) or at radii."""
    if region.planar:
        u, v = coord
        if region.kind == "halfspace":
            return std_normal_upper(np.asarray(v) / math.sqrt(s)) + 0.0 * np.asarray(u)
        return _alpha_curve(region, u, v, s, cfg)
    return _sphere_alpha(region, coord, s)


def psi_derivatives(region: RegionSpec, coord, cfg: OracleConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Value, first and second scale-derivatives of psi_H at scale 1.

    Args:
        coord: ``(u, v)`` arrays for planar regions or radii for spheres.

    Returns:
        Array of shape (3, ...).
    """
    d = cfg.fd_step
    f = {}
    for j in FD_OFFSETS:
        s = 1.0 + j * d
        f[j] = math.sqrt(s) * upper_inv_extended(_alpha_at(region, coord, s, cfg))
    with np.errstate(invalid="ignore"):
        f1 = (-f[2] + 8 * f[1] - 8 * f[-1] + f[-2]) / (12 * d)
        f2 = (-f[2] + 16 * f[1] - 30 * f[0] + 16 * f[-1] - f[-2]) / (12 * d * d)
    return np.stack([f[0], f1, f2])


def _coord_of(region, y):
    if region.planar:
        return _split_planar(y)
    return _radius(region, y)


def exact_pvalue_pipeline(region: RegionSpec, y, grid: Optional[ScaleGrid] = None, k: int = 3,
                          model: str = "poly.3", cfg: OracleConfig = DEFAULT_CONFIG) -> PValueReport:
    """Run the multiscale pipeline on exact bootstrap probabilities.

    Without a grid the z-value derivatives at scale 1 come from the
    five-point stencil (the local limit). With a grid, ``model`` is fitted by
    Fisher-weighted least squares to the exact z-values on the grid and
    differentiated at scale 1.

    Args:
        region: Region description.
        y: A single point.
        grid: Optional scale grid.
        k: Taylor terms.
        model: Model fitted when a grid is given.
    """
    coord = _coord_of(region, np.asarray(y, dtype=float))
    bp = float(np.asarray(_alpha_at(region, coord, 1.0, cfg)).ravel()[0])
    if grid is None:
        dH = psi_derivatives(region, coord, cfg)[:, ...].reshape(3, -1)[:, 0]
        name = "local"
    else:
        alpha = np.array([float(np.asarray(_alpha_at(region, coord, s, cfg)).ravel()[0]) for s in grid.sigma2])
        ok = (alpha > 0) & (alpha < 1)
        z = np.sqrt(grid.sigma2[ok]) * upper_inv_extended(alpha[ok])
        fit = fit_wls(grid.sigma2[ok], z, fisher_weights(grid.sigma2[ok], alpha[ok]), model)
        dH = model_derivatives(fit.spec, fit.beta, 1.0, max(k, 3))
        name = fit.spec.name
    dH = np.r_[dH, np.zeros(max(0, k - len(dH)))]
    return report_from_derivatives(dH, -dH, k, 1.0, 1.0, bp, name)


# ----------------------------------------------------------------------------
# projections and the two projection-based p-values
# ----------------------------------------------------------------------------

def project(region: RegionSpec, y):
    """Closest boundary point(s) to ``y``.

    Planar curves use a 1601-point scan on [-20, 20] refined by golden
    section; spheres and the halfspace are closed form.
    """
    if not region.planar:
        y = np.asarray(y, dtype=float)
        r = np.linalg.norm(y, axis=-1, keepdims=True)
        return region.theta * y / np.where(r > 0, r, 1.0)
    u, v = _split_planar(y)
    u = np.atleast_1d(u)
    v = np.atleast_1d(v)
    if region.kind == "halfspace":
        x = u.copy()
    else:
        xs = np.linspace(-20, 20, 1601)
        f = (xs[None] - u[:, None]) ** 2 + (v[:, None] + region.h(xs[None])) ** 2
        j = np.argmin(f, axis=1)
        lo = xs[np.maximum(j - 1, 0)]
        hi = xs[np.minimum(j + 1, xs.size - 1)]
        g = (math.sqrt(5) - 1) / 2

        def obj(x):
            return (x - u) ** 2 + (v + region.h(x)) ** 2

        for _ in range(60):
            x1 = hi - g * (hi - lo)
            x2 = lo + g * (hi - lo)
            m = obj(x1) < obj(x2)
            hi = np.where(m, x2, hi)
            lo = np.where(m, lo, x1)
        x = 0.5 * (lo + hi)
    out = np.stack([x, -region.h(x)], axis=-1)
    return out.reshape(np.shape(y))


def _pbp1_planar(region, u, v, cfg):
    """First-level double-bootstrap p-value and the projection it used."""
    s0 = cfg.sdbp_inner_sigma2
    pr = project(region, np.stack([u, v], axis=-1))
    x, w = pr[..., 0], pr[..., 1]
    if s0 > 0:
        num = std_normal_upper(math.sqrt(s0) * upper_inv_extended(_alpha_at(region, (u, v), s0, cfg)))
    else:
        d = np.hypot(u - x, v - w)
        num = std_normal_upper(np.where(v <= -region.h(u), -d, d))
    sel = 1.0 - _alpha_at(region, (x, w), 1.0, cfg)
    return num / sel, x, w, sel


@dataclass
class _PbpTable:
    vgrids: list
    logp: list


_PBP_CACHE: dict = {}


def _pbp1_table(region, cfg):
    key = (region, cfg)
    if key not in _PBP_CACHE:
        _, _, pos, _ = _outer_rule(cfg)
        vg, lp = [], []
        for uu in pos:
            grid = -float(region.h(uu)) + np.linspace(-8, 12, cfg.sdbp_vpoints)
            p, *_ = _pbp1_planar(region, np.full(grid.size, uu), grid, cfg)
            logp = np.log(p)
            if np.any(np.diff(logp) > 1e-12):
                raise ArithmeticError(f"first-level p-value is not monotone in v at u={uu:.4f}")
            vg.append(grid[::-1])
            lp.append(logp[::-1])
        _PBP_CACHE[key] = _PbpTable(vg, lp)
    return _PBP_CACHE[key]


def _sdbp_planar(region, u, v, cfg):
    """Second-level double-bootstrap p-value at planar points (vectorized)."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    c, x, w, sel = _pbp1_planar(region, u, v, cfg)
    if region.kind == "halfspace":
        return np.minimum(1.0, std_normal_upper(v) / sel)
    U, W, _, idx = _outer_rule(cfg)
    tab = _pbp1_table(region, cfg)
    lc = np.log(c)
    num = np.zeros_like(u)
    for j in range(U.size):
        r = np.interp(lc, tab.logp[idx[j]], tab.vgrids[idx[j]])
        num += W[j] * _phi(U[j] - x) * std_normal_upper(r - w)
    # the ratio can exceed 1 slightly inside H, where it is not a probability
    return np.minimum(1.0, num / sel)


def _sdbp_sphere(region, r, cfg):
    # the first-level p-value is monotone in the radius and the selection
    # probability at the projection does not depend on y
    th, df = region.theta, region.dim
    tail = noncentral_chisq_cdf if region.orientation == "H_outside" else noncentral_chisq_sf
    num = np.array([tail(ri * ri, df, th * th) for ri in np.atleast_1d(r)])
    return np.minimum(1.0, num / tail(th * th, df, th * th))


def p_sdbp(region: RegionSpec, y, cfg: OracleConfig = DEFAULT_CONFIG) -> float:
    """Selective double-bootstrap p-value computed exactly.

    The first level divides the bootstrap probability of H (at scale
    ``cfg.sdbp_inner_sigma2``) by the selection probability at the projection
    of y onto the boundary. The second level is the probability, under
    ``N(proj(y), I)``, that a replicate's first-level p-value falls below the
    observed one, divided by the same selection probability.
    """
    y = np.asarray(y, dtype=float)
    if region.planar:
        u, v = _split_planar(y)
        return float(_sdbp_planar(region, u, v, cfg)[0])
    return float(_sdbp_sphere(region, _radius(region, y), cfg)[0])


def p_et_si(region: RegionSpec, y, cfg: OracleConfig = DEFAULT_CONFIG) -> float:
    """Selective p-value from the z-value at scale 1 and the z-value at the projection.

    With S = H^c it equals ``upper(psi1 - 2 zp) / upper(-zp)`` where ``zp``
    is the H z-value at the projection of y.
    """
    y = np.asarray(y, dtype=float)
    return float(_et_si_coord(region, _coord_of(region, y), cfg)[0])


def _et_si_coord(region, coord, cfg):
    psi1 = upper_inv_extended(_alpha_at(region, coord, 1.0, cfg))
    if region.planar:
        pr = project(region, np.stack([np.atleast_1d(coord[0]), np.atleast_1d(coord[1])], axis=-1))
        zp = upper_inv_extended(_alpha_at(region, (pr[..., 0], pr[..., 1]), 1.0, cfg))
    else:
        zp = upper_inv_extended(_alpha_at(region, np.full(np.size(coord), region.theta), 1.0, cfg))
    zs_psi, zs_proj = -psi1, -zp
    num = std_normal_upper(psi1 - 2 * zp)
    return np.minimum(1.0, num / std_normal_upper(psi1 - 2 * zp + zs_psi - zs_proj))


# ----------------------------------------------------------------------------
# p-value families as functions of position
# ----------------------------------------------------------------------------

def pvalue_at(region: RegionSpec, method: str, coord, cfg: OracleConfig = DEFAULT_CONFIG):
    """Evaluate a p-value family at planar ``(u, v)`` arrays or radii."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    if method == "SDBP":
        if region.planar:
            return _sdbp_planar(region, coord[0], coord[1], cfg)
        return _sdbp_sphere(region, coord, cfg)
    if method == "ETSI":
        return _et_si_coord(region, coord, cfg)
    d = psi_derivatives(region, coord, cfg)
    if method in ("BP", "2BP"):
        bp = std_normal_upper(d[0])
        return bp if method == "BP" else np.minimum(1.0, 2 * bp)
    k = int(method[-1])
    _, _, p_au, p_si = taylor_pvalues(d, -d, k)
    if method.startswith("2"):
        return np.minimum(1.0, 2 * p_au)
    if method.startswith("AU"):
        return p_au
    return p_si


# ----------------------------------------------------------------------------
# rejection thresholds and rates
# ----------------------------------------------------------------------------

@dataclass
class RejectionBoundary:
    """Rejection region of one p-value family at level ``alpha``.

    Planar: reject when ``v > r(u)``; ``threshold`` holds r on the outer nodes.
    Sphere: reject when the radius is below (H outside) or above (H inside)
    ``threshold[0]``.
    """

    region: RegionSpec
    method: str
    alpha: float
    threshold: np.ndarray
    cfg: OracleConfig = field(repr=False, default=DEFAULT_CONFIG)

    def rejection_probability(self, mu) -> float:
        """Unconditional probability of rejecting at mean ``mu``."""
        reg = self.region
        if reg.planar:
            U, W, _, _ = _outer_rule(self.cfg)
            mu_u, mu_v = float(mu[0]), float(mu[1])
            return float(np.sum(W * _phi(U - mu_u) * std_normal_upper(self.threshold - mu_v)))
        r0 = float(np.linalg.norm(mu)) if np.ndim(mu) else float(mu)
        if reg.orientation == "H_outside":
            return noncentral_chisq_cdf(self.threshold[0] ** 2, reg.dim, r0 * r0)
        return noncentral_chisq_sf(self.threshold[0] ** 2, reg.dim, r0 * r0)

    def selective_rate(self, theta: float) -> float:
        """Rejection probability at the boundary point ``theta`` divided by its selection probability."""
        mu = self.region.boundary_point(theta)
        return self.rejection_probability(mu) / selection_probability(self.region, mu, self.cfg)


def selection_probability(region: RegionSpec, mu, cfg: OracleConfig = DEFAULT_CONFIG,
                          check: bool = True) -> float:
    """``P(Y in S | mu)`` for ``Y ~ N(mu, I)`` and ``mu`` on the boundary.

    Raises:
        ValueError: If ``mu`` is off the boundary by more than 1e-9.
    """
    mu = np.asarray(mu, dtype=float)
    if region.planar:
        if check and abs(mu[1] + float(region.h(mu[0]))) > 1e-9:
            raise ValueError("mu is not on the boundary")
        if region.kind == "halfspace":
            return 0.5
        U, W, _, _ = _outer_rule(cfg)
        return float(np.sum(W * _phi(U - mu[0]) * std_normal_upper(-region.h(U) - mu[1])))
    r = float(np.linalg.norm(mu))
    if check and abs(r - region.theta) > 1e-9 * max(1.0, region.theta):
        raise ValueError("mu is not on the boundary")
    t2 = region.theta**2
    if region.orientation == "H_outside":
        return noncentral_chisq_cdf(t2, region.dim, r * r)
    return noncentral_chisq_sf(t2, region.dim, r * r)


def _bisect_planar(region, method, alpha, cfg, upos):
    base = -region.h(upos)
    lo = base + 1e-9
    hi = base + 12.0
    plo = pvalue_at(region, method, (upos, lo), cfg)
    phi_ = pvalue_at(region, method, (upos, hi), cfg)
    if np.any(~(plo >= alpha)) or np.any(~(phi_ < alpha)):
        bad = np.flatnonzero(~((plo >= alpha) & (phi_ < alpha)))
        raise ArithmeticError(f"{method}: no sign change of p - alpha on the bracket at u={upos[bad[:3]]}")
    # coarse scan for a single crossing
    scan = np.linspace(0.0, 1.0, 13)[1:-1]
    prev = plo >= alpha
    for f in scan:
        cur = pvalue_at(region, method, (upos, lo + f * (hi - lo)), cfg) >= alpha
        if np.any(cur & ~prev):
            raise ArithmeticError(f"{method}: p-value is not monotone in v")
        prev = cur
    for _ in range(cfg.bisect_iter):
        mid = 0.5 * (lo + hi)
        rej = pvalue_at(region, method, (upos, mid), cfg) < alpha
        hi = np.where(rej, mid, hi)
        lo = np.where(rej, lo, mid)
    return 0.5 * (lo + hi)


def _bisect_sphere(region, method, alpha, cfg):
    th = region.theta
    W = cfg.sphere_window
    outside = region.orientation == "H_outside"
    # rejecting side is the interior of S; step in from the boundary so the
    # bracket stays where the tail probabilities are still accurate
    step = -1.0 if outside else 1.0
    end = max(0.0, th - W) if outside else th + W

    def p(r):
        return float(pvalue_at(region, method, np.array([r]), cfg)[0])

    if not p(th) >= alpha:
        raise ArithmeticError(f"{method}: p-value rejects on the boundary itself")
    b = th
    a = None
    while a is None:
        r = max(end, b + step) if outside else min(end, b + step)
        if p(r) < alpha:
            a = r
        elif r == end:
            if outside and end == 0.0:
                # even the center does not reject: the rejection ball is empty
                return np.array([0.0])
            raise ArithmeticError(f"{method}: no sign change of p - alpha on the radial bracket")
        else:
            b = r
    for _ in range(cfg.bisect_iter + 10):
        m = 0.5 * (a + b)
        if p(m) < alpha:
            a = m
        else:
            b = m
    return np.array([0.5 * (a + b)])


_BOUNDARY_CACHE: dict = {}


def rejection_boundary(region: RegionSpec, method: str, alpha: float = 0.1,
                       cfg: OracleConfig = DEFAULT_CONFIG) -> RejectionBoundary:
    """Locate the ``p < alpha`` region by bisection along the boundary normal.

    Cached per (region, method, alpha, cfg).

    Raises:
        ArithmeticError: If the p-value does not cross ``alpha`` exactly once.
    """
    key = (region, method, float(alpha), cfg)
    if key not in _BOUNDARY_CACHE:
        if region.planar:
            _, _, pos, idx = _outer_rule(cfg)
            r = _bisect_planar(region, method, alpha, cfg, pos)[idx]
        else:
            r = _bisect_sphere(region, method, alpha, cfg)
        _BOUNDARY_CACHE[key] = RejectionBoundary(region, method, float(alpha), r, cfg)
    return _BOUNDARY_CACHE[key]


def selective_rejection_probability(region: RegionSpec, method: str, alpha: float, mu,
                                    cfg: OracleConfig = DEFAULT_CONFIG) -> float:
    """``P(p < alpha | mu) / P(Y in S | mu)`` for ``mu`` on the boundary."""
    b = rejection_boundary(region, method, alpha, cfg)
    return b.rejection_probability(mu) / selection_probability(region, mu, cfg)


def average_absolute_bias(region: RegionSpec, method: str, alpha: float = 0.1,
                          cfg: OracleConfig = DEFAULT_CONFIG, thetas: Sequence[float] = BIAS_THETAS) -> float:
    """Mean of ``|selective rejection - alpha|`` (percentage points) over boundary points."""
    b = rejection_boundary(region, method, alpha, cfg)
    rates = np.array([b.selective_rate(t) for t in thetas])
    return float(np.mean(np.abs(100 * rates - 100 * alpha)))


@dataclass
class SimulationTable:
    """Selective rejection percentages: rows are methods, columns boundary points, plus bias."""

    region: str
    thetas: list
    rows: dict
    bias: dict
    selection: list

    def to_tsv(self) -> str:
        head = ["method"] + [f"theta={t:.1f}" for t in self.thetas] + ["Bias"]
        lines = ["\t".join(head)]
        for m, vals in self.rows.items():
            b = self.bias.get(m)
            lines.append("\t".join([m] + [f"{x:.2f}" for x in vals] + ["-" if b is None else f"{b:.2f}"]))
        lines.append("\t".join(["selection"] + [f"{x:.2f}" for x in self.selection] + ["-"]))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"region": self.region, "thetas": list(self.thetas), "rows": self.rows,
                "bias": self.bias, "selection": self.selection}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def simulate_table(region: RegionSpec, methods: Sequence[str] = TABLE_METHODS, alpha: float = 0.1,
                   cfg: OracleConfig = DEFAULT_CONFIG, thetas: Sequence[float] = TABLE_THETAS,
                   bias_thetas: Sequence[float] = BIAS_THETAS, name: str = "") -> SimulationTable:
    """Rejection percentages along the boundary for several p-value families."""
    rows, bias = {}, {}
    for m in methods:
        logger.info("thresholds for %s", m)
        b = rejection_boundary(region, m, alpha, cfg)
        rows[m] = [100 * b.selective_rate(t) for t in thetas]
        bias[m] = average_absolute_bias(region, m, alpha, cfg, bias_thetas)
    sel = [100 * selection_probability(region, region.boundary_point(t), cfg) for t in thetas]
    return SimulationTable(name, [float(t) for t in thetas], rows, bias, sel)


# ----------------------------------------------------------------------------
# spheres
# ----------------------------------------------------------------------------

def sphere_region(gamma: float, dim: int) -> RegionSpec:
    """Concave sphere ``H = {||mu|| >= theta}`` whose boundary has mean curvature ``gamma < 0``.

    The radius is ``theta = m / (2 * (-gamma))`` with ``m = dim - 1``.
    """
    if gamma >= 0:
        raise ValueError("the concave sphere has negative mean curvature")
    return RegionSpec.sphere((dim - 1) / (2.0 * -gamma), dim, "H_outside")


def sphere_curve(method: str, gamma: float, dims: Sequence[int], alpha: float = 0.1,
                 cfg: OracleConfig = DEFAULT_CONFIG) -> list:
    """Selective rejection probabilities of one p-value family over dimensions."""
    out = []
    for d in dims:
        if not 2 <= d <= 5000:
            raise ValueError(f"dimension {d} out of range")
        reg = sphere_region(gamma, int(d))
        out.append(rejection_boundary(reg, method, alpha, cfg).selective_rate(0.0))
    return out


def doubled_test_limits(alpha: float, gamma: float) -> dict:
    """Large-dimension limits of the doubled non-selective tests on the concave sphere.

    Doubling a p-value and testing at ``alpha`` compares it with
    ``alpha / 2``. A non-selective p-value that is unbiased at that level
    rejects with probability ``alpha / 2``; dividing by the selection
    probability ``upper(-gamma)`` gives the AU limit. BP is biased by twice
    the curvature on top of that.
    """
    sel = float(std_normal_upper(-gamma))
    half = alpha / 2
    return {
        "2AU": half / sel,
        "2BP": float(std_normal_upper(upper_inv_extended(half) - 2 * gamma)) / sel,
    }
