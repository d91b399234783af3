"""Approximately unbiased and selective p-values from multiscale bootstrap fits.

Conventions: ``H`` is the null hypothesis region and ``S`` the selective
region (the event that made the hypothesis worth testing). ``z_H`` is the
z-value of H extrapolated to scale -1 and ``z_S`` the z-value of S
extrapolated to scale 0. Then

* ``p_au = upper(z_H)``
* ``p_si = min(1, upper(z_H) / upper(z_H + z_S))``
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bootstrap_engine import CountTable
from .core_stats import std_normal_upper, upper_inv_extended
from .scaling_models import FitResult, model_derivatives, taylor_from_derivatives

TINY = 1e-12


@dataclass
class PValueReport:
    """p-values and geometric summaries for one hypothesis.

    Attributes:
        z_H: z-value of H extrapolated to scale -1.
        z_S: z-value of S extrapolated to scale 0.
        t_hat: Estimated signed distance, the H z-value at scale 0.
        gamma_hat: Estimated mean curvature, the slope ``t_hat - z_H``.
        p_bp: Bootstrap probability at scale 1 (NaN if unknown).
        p_au: Approximately unbiased p-value.
        p_si: Selective p-value.
        flags: Subset of clamped_si, degenerate_fit, negative_signed_distance.
        model: Name of the H-side model, if any.
    """

    z_H: float
    z_S: float
    t_hat: float
    gamma_hat: float
    p_bp: float
    p_au: float
    p_si: float
    flags: set = field(default_factory=set)
    model: Optional[str] = None
    se_au: Optional[float] = None
    se_si: Optional[float] = None

    def to_dict(self) -> dict:
        def num(v):
            return None if v is None or not np.isfinite(v) else float(v)

        return {
            "z_H": num(self.z_H), "z_S": num(self.z_S), "t_hat": num(self.t_hat),
            "gamma_hat": num(self.gamma_hat), "p_bp": num(self.p_bp), "p_au": num(self.p_au),
            "p_si": num(self.p_si), "flags": sorted(self.flags), "model": self.model,
            "se_au": num(self.se_au), "se_si": num(self.se_si),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def psi(alpha, sigma2):
    """Normalized bootstrap z-value ``sigma * upper_inv(alpha)``; 0 and 1 map to +inf and -inf."""
    return np.sqrt(np.asarray(sigma2, dtype=float)) * upper_inv_extended(alpha)


def p_bp(counts: CountTable, tol: float = 1e-9) -> float:
    """Bootstrap probability ``C/B`` at scale 1.

    Raises:
        ValueError: If no row sits at sigma2 = 1; interpolation is not supported.
    """
    i = np.flatnonzero(np.abs(counts.sigma2 - 1.0) <= tol)
    if i.size == 0:
        raise ValueError("no sigma2 = 1 row in the count table; interpolation is not supported")
    return float(counts.C[i[0]] / counts.B[i[0]])


def selective_from_z(z_H: float, z_S: float) -> tuple[float, float, set]:
    """AU and SI p-values with the clamping rules.

    Returns:
        ``(p_au, p_si, flags)``.
    """
    flags = set()
    p_au = float(std_normal_upper(z_H))
    den = float(std_normal_upper(z_H + z_S))
    if den < TINY and p_au < TINY:
        flags.add("degenerate_fit")
        flags.add("clamped_si")
        return p_au, 1.0, flags
    ratio = p_au / den if den > 0 else math.inf
    if ratio > 1.0:
        flags.add("clamped_si")
        return p_au, 1.0, flags
    return p_au, float(ratio), flags


def taylor_pvalues(dH, dS, k: int, tau2_minus1: float = 1.0, tau2_zero: float = 1.0):
    """Vectorized AU and SI p-values from stacked derivative arrays.

    Args:
        dH: Array of shape (>=k, ...) with psi_H derivatives at ``tau2_minus1``.
        dS: Same for psi_S at ``tau2_zero``.
        k: Number of Taylor terms.

    Returns:
        Tuple ``(z_H, z_S, p_au, p_si)`` of arrays; p_si is clamped to 1 and
        set to 1 when both tails underflow.
    """
    dH = np.asarray(dH, dtype=float)
    dS = np.asarray(dS, dtype=float)
    hm, h0 = -1.0 - tau2_minus1, -tau2_zero
    z_H = sum(dH[j] * hm**j / math.factorial(j) for j in range(k))
    z_S = sum(dS[j] * h0**j / math.factorial(j) for j in range(k))
    p_au = std_normal_upper(z_H)
    den = std_normal_upper(z_H + z_S)
    with np.errstate(divide="ignore", invalid="ignore"):
        p_si = np.where(den > 0, p_au / np.where(den > 0, den, 1.0), np.inf)
    p_si = np.where((den < TINY) & (p_au < TINY), 1.0, np.minimum(1.0, p_si))
    return z_H, z_S, p_au, p_si


def report_from_derivatives(dH, dS, k: int, tau2_minus1: float = 1.0, tau2_zero: float = 1.0,
                            p_bp_value: float = math.nan, model: Optional[str] = None) -> PValueReport:
    """Build a report from derivatives of the H and S z-value curves.

    Args:
        dH: Derivatives of psi_H at ``tau2_minus1`` (value first).
        dS: Derivatives of psi_S at ``tau2_zero``.
        k: Number of Taylor terms.
    """
    dH = np.asarray(dH, dtype=float)[:k]
    dS = np.asarray(dS, dtype=float)[:k]
    z_H = taylor_from_derivatives(dH, tau2_minus1, -1.0)
    z_S = taylor_from_derivatives(dS, tau2_zero, 0.0)
    t_hat = taylor_from_derivatives(dH, tau2_minus1, 0.0)
    p_au, p_si, flags = selective_from_z(z_H, z_S)
    if t_hat < 0:
        flags.add("negative_signed_distance")
    return PValueReport(z_H, z_S, t_hat, t_hat - z_H, p_bp_value, p_au, p_si, flags, model)


def _delta_se(fit: FitResult, fn) -> Optional[float]:
    if fit.cov is None:
        return None
    b = np.asarray(fit.beta, dtype=float)
    g = np.empty(b.size)
    for i in range(b.size):
        e = np.zeros(b.size)
        e[i] = 1e-6
        g[i] = (fn(b + e) - fn(b - e)) / 2e-6
    v = float(g @ fit.cov @ g)
    return math.sqrt(v) if v >= 0 else None


def p_values_A(fit_H: FitResult, fit_S: FitResult, p_bp_value: float = math.nan) -> PValueReport:
    """Direct extrapolation: ``z_H = phi_H(-1)`` and ``z_S = phi_S(0)``.

    Raises:
        ValueError: For sing models, which are undefined at non-positive
            scales; use :func:`p_values_B`.
    """
    if fit_H.spec.family != "poly" or fit_S.spec.family != "poly":
        raise ValueError("procedure A needs poly models; use p_values_B for sing fits")
    z_H = float(fit_H(-1.0))
    z_S = float(fit_S(0.0))
    t_hat = float(fit_H(0.0))
    p_au, p_si, flags = selective_from_z(z_H, z_S)
    if t_hat < 0:
        flags.add("negative_signed_distance")
    return PValueReport(z_H, z_S, t_hat, t_hat - z_H, p_bp_value, p_au, p_si, flags, fit_H.spec.name)


def p_values_B(fit_H: FitResult, fit_S: FitResult, k: int = 3, sigma2_minus1: float = 1.0,
               sigma2_zero: float = 1.0, p_bp_value: float = math.nan,
               with_se: bool = False) -> PValueReport:
    """Taylor extrapolation with ``k`` terms around positive expansion scales.

    Args:
        fit_H: Fit of the H-side counts.
        fit_S: Fit of the S-side counts (``fit_H.negated()`` when S is H's complement).
        k: Number of Taylor terms.
        sigma2_minus1: Expansion scale for the extrapolation to -1.
        sigma2_zero: Expansion scale for the extrapolation to 0.
        p_bp_value: Bootstrap probability to carry into the report.
        with_se: Add delta-method standard errors using the fits' covariances.
    """
    dH = model_derivatives(fit_H.spec, fit_H.beta, sigma2_minus1, k)
    dS = model_derivatives(fit_S.spec, fit_S.beta, sigma2_zero, k)
    rep = report_from_derivatives(dH, dS, k, sigma2_minus1, sigma2_zero, p_bp_value, fit_H.spec.name)
    if with_se and fit_H is not None:
        def au(b):
            return float(std_normal_upper(taylor_from_derivatives(
                model_derivatives(fit_H.spec, b, sigma2_minus1, k), sigma2_minus1, -1.0)))

        rep.se_au = _delta_se(fit_H, au)
        if fit_S.spec == fit_H.spec and np.allclose(_mirror(fit_H), fit_S.beta):
            def si(b):
                dh = model_derivatives(fit_H.spec, b, sigma2_minus1, k)
                ds = model_derivatives(fit_S.spec, _mirror_beta(fit_H.spec, b), sigma2_zero, k)
                return selective_from_z(taylor_from_derivatives(dh, sigma2_minus1, -1.0),
                                        taylor_from_derivatives(ds, sigma2_zero, 0.0))[1]

            rep.se_si = _delta_se(fit_H, si)
    return rep


def _mirror_beta(spec, beta):
    b = -np.asarray(beta, dtype=float)
    if spec.family == "sing":
        b[-1] = beta[-1]
    return b


def _mirror(fit: FitResult):
    return _mirror_beta(fit.spec, fit.beta)


def _complement_only(region_S):
    if region_S not in (None, "complement"):
        raise NotImplementedError("only the complement selective region S = H^c is supported")


def p_sdbp(region_H, region_S, y, config=None) -> float:
    """Exact selective double-bootstrap p-value for an analytic region.

    Args:
        region_H: A :class:`~artifact.region_oracle.RegionSpec`.
        region_S: ``None`` or ``"complement"``; S is the complement of H.
        y: Observation.
        config: Optional :class:`~artifact.region_oracle.OracleConfig`.
    """
    from . import region_oracle as ro

    _complement_only(region_S)
    return ro.p_sdbp(region_H, y, config or ro.DEFAULT_CONFIG)


def p_et_si(region_H, region_S, y, config=None) -> float:
    """Exact selective p-value built from scale-1 z-values and projections."""
    from . import region_oracle as ro

    _complement_only(region_S)
    return ro.p_et_si(region_H, y, config or ro.DEFAULT_CONFIG)
