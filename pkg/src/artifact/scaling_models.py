"""Scaling-law models for the normalized bootstrap z-value.

A model describes ``psi(sigma2) = sigma * upper_inv(alpha_sigma2)`` as a
function of the scale. Two families are provided:

* ``poly.k``: ``sum_{j<k} beta_j sigma2**j``
* ``sing.k``: ``beta_0 + sum_{j=1}^{k-2} beta_j sigma2**j / (1 + beta_{k-1} (sigma - 1))``
  with ``0 <= beta_{k-1} <= 1``; the rational term models a conical boundary.

Fitting is binomial maximum likelihood on bootstrap counts with AIC model
selection, or weighted least squares on exact z-values.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import binom, expit, log_ndtr, logit
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array

from .bootstrap_engine import CountTable
from .core_stats import std_normal_upper, std_normal_upper_inv

DEFAULT_CANDIDATES = ("poly.1", "poly.2", "poly.3", "sing.3")


class DegenerateFit(ValueError):
    """Too few scales with 0 < C < B to identify the model."""

    def __init__(self, message: str, n_informative: int):
        super().__init__(message)
        self.n_informative = n_informative


@dataclass(frozen=True)
class ModelSpec:
    family: str
    k: int

    def __post_init__(self):
        if self.family not in ("poly", "sing"):
            raise ValueError(f"unknown model family {self.family!r}")
        if self.k < 1 or (self.family == "sing" and self.k < 3):
            raise ValueError(f"invalid order for {self.family}: {self.k}")

    @property
    def npar(self) -> int:
        return self.k

    @property
    def name(self) -> str:
        return f"{self.family}.{self.k}"

    def __str__(self):
        return self.name

    @classmethod
    def parse(cls, name) -> "ModelSpec":
        if isinstance(name, ModelSpec):
            return name
        family, _, k = str(name).partition(".")
        return cls(family, int(k))


@dataclass
class FitResult:
    """Fitted scaling-law model.

    Attributes:
        spec: Model identity.
        beta: Coefficients in natural form (sing's last entry lies in [0, 1]).
        loglik: Binomial log-likelihood at beta (NaN for least-squares fits).
        aic: ``-2 loglik + 2 npar``.
        converged: Whether the optimizer met its tolerance.
        n_informative: Scales with 0 < C < B.
        cov: Inverse observed information in natural coordinates, if available.
    """

    spec: ModelSpec
    beta: np.ndarray
    loglik: float
    aic: float
    converged: bool
    n_informative: int
    cov: Optional[np.ndarray] = None

    def __call__(self, sigma2):
        return eval_model(self.spec, self.beta, sigma2)

    def negated(self) -> "FitResult":
        """Model of the complementary region, whose z-value is ``-psi``."""
        beta = -np.asarray(self.beta, dtype=float)
        if self.spec.family == "sing":
            beta[-1] = self.beta[-1]
        cov = None
        if self.cov is not None:
            sign = np.where(np.arange(beta.size) == beta.size - 1, 1.0, -1.0) if self.spec.family == "sing" else -np.ones(beta.size)
            cov = self.cov * np.outer(sign, sign)
        return FitResult(self.spec, beta, self.loglik, self.aic, self.converged, self.n_informative, cov)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.name,
            "beta": [float(b) for b in self.beta],
            "loglik": float(self.loglik),
            "aic": float(self.aic),
            "converged": bool(self.converged),
            "n_informative": int(self.n_informative),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def eval_model(spec, beta, sigma2):
    """Evaluate ``phi(sigma2 | beta)``.

    Args:
        spec: ModelSpec or name such as ``"sing.3"``.
        beta: Coefficients, natural parameterization.
        sigma2: Scale(s); any real for poly, positive for sing.

    Returns:
        Model value(s) with the shape of ``sigma2``.
    """
    spec = ModelSpec.parse(spec)
    beta = np.asarray(beta, dtype=float)
    if beta.size != spec.npar:
        raise ValueError(f"{spec} takes {spec.npar} coefficients, got {beta.size}")
    x = np.asarray(sigma2, dtype=float)
    if spec.family == "poly":
        return np.polynomial.polynomial.polyval(x, beta)
    if np.any(x <= 0):
        raise ValueError("sing models need sigma2 > 0; extrapolate through taylor_extrapolate")
    num = np.polynomial.polynomial.polyval(x, np.r_[0.0, beta[1:-1]])
    return beta[0] + num / (1.0 + beta[-1] * (np.sqrt(x) - 1.0))


def _series_mul(a, b, n):
    out = np.zeros(n)
    for i in range(n):
        out[i] = np.dot(a[: i + 1], b[i::-1])
    return out


def _series_recip(a, n):
    out = np.zeros(n)
    out[0] = 1.0 / a[0]
    for i in range(1, n):
        out[i] = -np.dot(a[1 : i + 1], out[i - 1 :: -1]) / a[0]
    return out


def model_derivatives(spec, beta, tau2: float, order: int) -> np.ndarray:
    """Derivatives ``d^j phi / d(sigma2)^j`` at ``tau2`` for ``j < order``.

    Exact for both families: poly through its coefficients, sing through
    truncated power-series arithmetic in ``h = sigma2 - tau2`` (with
    ``sqrt(tau2 + h)`` expanded binomially).

    Args:
        spec: ModelSpec or name.
        beta: Coefficients.
        tau2: Expansion point, > 0.
        order: Number of derivatives (including the value).
    """
    spec = ModelSpec.parse(spec)
    beta = np.asarray(beta, dtype=float)
    if tau2 <= 0:
        raise ValueError("tau2 must be positive")
    n = order
    if spec.family == "poly":
        coef = np.r_[beta, np.zeros(max(0, n - beta.size))]
        out = np.empty(n)
        d = coef.copy()
        for j in range(n):
            out[j] = np.polynomial.polynomial.polyval(tau2, d) if d.size else 0.0
            d = np.polynomial.polynomial.polyder(d) if d.size > 1 else np.zeros(1)
        return out
    # series coefficients of each factor around tau2
    tau = math.sqrt(tau2)
    sq = np.array([binom(0.5, j) * tau ** (1 - 2 * j) for j in range(n)])
    den = beta[-1] * sq
    den[0] += 1.0 - beta[-1]
    pcoef = np.r_[0.0, beta[1:-1]]
    num = np.zeros(n)
    d = pcoef.copy()
    for j in range(n):
        num[j] = np.polynomial.polynomial.polyval(tau2, d) / math.factorial(j) if d.size else 0.0
        d = np.polynomial.polynomial.polyder(d) if d.size > 1 else np.zeros(1)
    ser = _series_mul(num, _series_recip(den, n), n)
    ser[0] += beta[0]
    return ser * np.array([math.factorial(j) for j in range(n)], dtype=float)


def taylor_extrapolate(spec, beta, k_terms: int, tau2: float, sigma2_target: float) -> float:
    """Truncated Taylor polynomial of the model around ``tau2``, evaluated at a target scale.

    Returns:
        ``sum_{j<k} (target - tau2)**j / j! * phi^{(j)}(tau2)``.
    """
    d = model_derivatives(spec, beta, tau2, k_terms)
    return taylor_from_derivatives(d, tau2, sigma2_target)


def taylor_from_derivatives(derivs, tau2: float, sigma2_target: float) -> float:
    h = sigma2_target - tau2
    return float(sum(d * h**j / math.factorial(j) for j, d in enumerate(derivs)))


def _loglik(spec, beta, sigma2, B, C):
    z = eval_model(spec, beta, sigma2) / np.sqrt(sigma2)
    return float(np.sum(C * log_ndtr(-z) + (B - C) * log_ndtr(z)))


def _fast_model(spec, sigma2):
    """Model evaluator with the design precomputed for fixed scales."""
    sigma2 = np.asarray(sigma2, dtype=float)
    if spec.family == "poly":
        X = np.vander(sigma2, spec.k, increasing=True)
        return lambda beta: X @ beta
    X = np.vander(sigma2, spec.k - 1, increasing=True)[:, 1:]
    sm1 = np.sqrt(sigma2) - 1.0
    return lambda beta: beta[0] + (X @ beta[1:-1]) / (1.0 + beta[-1] * sm1)


def _to_free(spec, beta):
    beta = np.asarray(beta, dtype=float).copy()
    if spec.family == "sing":
        beta[-1] = logit(np.clip(beta[-1], 1e-6, 1 - 1e-6))
    return beta


def _to_natural(spec, free):
    beta = np.asarray(free, dtype=float).copy()
    if spec.family == "sing":
        beta[-1] = expit(beta[-1])
    return beta


def _wls_start(spec, sigma2, psi, w):
    """Weighted least-squares starting values (sing uses its poly analogue, curvature 0.5)."""
    if spec.family == "poly":
        X = np.vander(sigma2, spec.k, increasing=True)
        sw = np.sqrt(w)
        coef, *_ = np.linalg.lstsq(X * sw[:, None], psi * sw, rcond=None)
        return coef
    X = np.vander(sigma2, spec.k - 1, increasing=True)
    c = 0.5
    X = X.copy()
    X[:, 1:] /= (1.0 + c * (np.sqrt(sigma2) - 1.0))[:, None]
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], psi * sw, rcond=None)
    return np.r_[coef, c]


def _observed_z(counts: CountTable):
    B = counts.B.astype(float)
    Cc = np.clip(counts.C.astype(float), 0.5, B - 0.5)
    p = Cc / B
    s = np.sqrt(counts.sigma2)
    psi = s * std_normal_upper_inv(p)
    dens = np.exp(-0.5 * (psi / s) ** 2) / math.sqrt(2 * math.pi)
    w = B * dens**2 / (counts.sigma2 * p * (1 - p))
    return psi, w


def _numeric_hessian(f, x, h=1e-4):
    n = x.size
    H = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i] = h
            ej[j] = h
            H[i, j] = H[j, i] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h * h)
    return H


def fit_mle(counts: CountTable, spec, restarts: int = 5, tol: float = 1e-8) -> FitResult:
    """Binomial maximum-likelihood fit of a scaling-law model.

    Each scale contributes ``C ~ Binomial(B, upper(phi(sigma2)/sigma))``.
    Nelder-Mead runs from the weighted least-squares start and from
    ``restarts - 1`` deterministically jittered copies; the best optimum wins.

    Args:
        counts: Frequencies of the region of interest.
        spec: Model to fit.
        restarts: Number of simplex searches.
        tol: Absolute log-likelihood tolerance.

    Raises:
        DegenerateFit: If fewer than ``npar`` scales have 0 < C < B.
    """
    spec = ModelSpec.parse(spec)
    ninf = counts.n_informative
    if ninf < spec.npar:
        raise DegenerateFit(f"{spec} needs {spec.npar} informative scales, found {ninf}", ninf)
    s2, B, C = counts.sigma2, counts.B.astype(float), counts.C.astype(float)
    inf_mask = (counts.C > 0) & (counts.C < counts.B)
    psi, w = _observed_z(counts)
    start = _wls_start(spec, s2[inf_mask], psi[inf_mask], w[inf_mask])

    model = _fast_model(spec, s2)
    sd = np.sqrt(s2)
    sing = spec.family == "sing"

    def nll(free):
        beta = free
        if sing:
            beta = free.copy()
            beta[-1] = expit(free[-1])
        z = model(beta) / sd
        v = -np.sum(C * log_ndtr(-z) + (B - C) * log_ndtr(z))
        return v if np.isfinite(v) else 1e300

    rng = np.random.default_rng(20240607)
    x0 = _to_free(spec, start)
    best = None
    for r in range(max(1, restarts)):
        init = x0 if r == 0 else x0 + rng.normal(scale=0.1 * (1 + np.abs(x0)))
        res = minimize(nll, init, method="Nelder-Mead",
                       options={"xatol": 1e-9, "fatol": tol * 1e-2, "maxiter": 20000, "maxfev": 40000})
        if best is None or res.fun < best.fun:
            best = res
    # polish from the best point and compare to confirm convergence
    polish = minimize(nll, best.x, method="Nelder-Mead",
                      options={"xatol": 1e-10, "fatol": tol * 1e-2, "maxiter": 20000, "maxfev": 40000})
    converged = bool(best.success and abs(polish.fun - best.fun) <= tol * max(1.0, abs(best.fun)))
    if polish.fun < best.fun:
        best = polish
    beta = _to_natural(spec, best.x)
    ll = -float(best.fun)
    cov = None
    try:
        H = _numeric_hessian(lambda b: -_loglik(spec, b, s2, B, C), beta)
        if np.all(np.isfinite(H)):
            cov = np.linalg.inv(H)
    except (np.linalg.LinAlgError, ValueError):
        cov = None
    return FitResult(spec, beta, ll, -2.0 * ll + 2.0 * spec.npar, converged, ninf, cov)


def fit_wls(sigma2, psi, weights, spec) -> FitResult:
    """Weighted least-squares fit of a model to exact z-values (no sampling noise).

    Used when bootstrap probabilities are known exactly; it is the large-B
    limit of :func:`fit_mle` when the weights are the Fisher weights
    ``phi(psi/sigma)**2 / (sigma2 p (1-p))``.
    """
    spec = ModelSpec.parse(spec)
    sigma2 = np.asarray(sigma2, dtype=float)
    psi = np.asarray(psi, dtype=float)
    w = np.asarray(weights, dtype=float)
    start = _wls_start(spec, sigma2, psi, w)
    if spec.family == "poly":
        beta = start
        converged = True
    else:
        def rss(free):
            return float(np.sum(w * (eval_model(spec, _to_natural(spec, free), sigma2) - psi) ** 2))
        res = minimize(rss, _to_free(spec, start), method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-16, "maxiter": 40000, "maxfev": 80000})
        beta = _to_natural(spec, res.x)
        converged = bool(res.success)
    return FitResult(spec, np.asarray(beta, dtype=float), float("nan"), float("nan"), converged, sigma2.size)


def fisher_weights(sigma2, alpha) -> np.ndarray:
    """Large-B inverse variances of ``psi`` estimated from probability ``alpha`` (per unit B)."""
    sigma2 = np.asarray(sigma2, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    z = std_normal_upper_inv(alpha)
    dens = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    return dens**2 / (sigma2 * alpha * (1 - alpha))


def select_model(counts: CountTable, candidates: Sequence = DEFAULT_CANDIDATES, restarts: int = 5):
    """Fit every candidate and pick the minimum-AIC fit.

    Ties go to fewer parameters, then to candidate order. Degenerate or
    non-converged fits are not eligible.

    Returns:
        Tuple ``(best, fits)`` where ``fits`` lists every non-degenerate fit
        in candidate order.

    Raises:
        DegenerateFit: If no candidate can be fitted; report BP only.
    """
    specs = [ModelSpec.parse(c) for c in candidates]
    if not specs:
        raise ValueError("candidate list is empty")
    fits = []
    for spec in specs:
        try:
            fits.append(fit_mle(counts, spec, restarts=restarts))
        except DegenerateFit:
            continue
    eligible = [(f.aic, f.spec.npar, i, f) for i, f in enumerate(fits) if f.converged and np.isfinite(f.aic)]
    if not eligible:
        raise DegenerateFit("no candidate model could be fitted; report the bootstrap probability only",
                            counts.n_informative)
    return min(eligible, key=lambda t: t[:3])[3], fits


class ScalingLawFitter(BaseEstimator):
    """Estimator wrapper around AIC model selection.

    ``fit`` takes a CountTable or an (n_scales, 3) array of ``sigma2, B, C``;
    ``predict`` returns the best model's z-value at new scales.

    Args:
        candidates: Model names tried in order.
        restarts: Simplex restarts per model.
    """

    def __init__(self, candidates=DEFAULT_CANDIDATES, restarts: int = 5):
        self.candidates = candidates
        self.restarts = restarts

    def fit(self, X, y=None):
        if isinstance(X, CountTable):
            counts = X
        else:
            arr = check_array(X, ensure_min_samples=1)
            if arr.shape[1] != 3:
                raise ValueError("expected columns sigma2, B, C")
            counts = CountTable(arr[:, 0], arr[:, 1].astype(np.int64), arr[:, 2].astype(np.int64))
        self.best_, self.fits_ = select_model(counts, self.candidates, self.restarts)
        self.counts_ = counts
        return self

    def predict(self, sigma2):
        if not hasattr(self, "best_"):
            raise NotFittedError("ScalingLawFitter is not fitted yet")
        return self.best_(sigma2)

    def predict_proba(self, sigma2):
        """Bootstrap probability implied by the best model at the given scales."""
        s2 = np.asarray(sigma2, dtype=float)
        return std_normal_upper(self.predict(s2) / np.sqrt(s2))
