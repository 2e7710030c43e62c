"""Explicit constants and right-hand side of the strong linearisation-error bound.

The moment bound on E||y_t - l_t||^r splits into three non-negative terms:
a purely ongoing-noise term scaling as eps^{2r}, a purely initial-uncertainty
term scaling as delta_{2r}^{2r}, and a cross term scaling as delta_r^r eps^r.
This module evaluates the Gaussian absolute-moment constants, the Gronwall
lemma constants H1/H2, the theorem constants D1/D2/D3 (including the max-type
constant K_M), the assembled three-term breakdown, and a grid-sampling
estimator for the coefficient suprema of a given model.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import gamma as _gamma

from .exceptions import NumericalDomainError


def default_bdg_constant(r: float) -> float:
    """Burkholder-Davis-Gundy constant G_{r/2} for the r-th moment.

    Classical explicit choice G_p = (p/(p-1))^p * p^{p/2} for p > 1,
    extended by G_p = 4 for p <= 1. Any valid constant preserves the
    scaling structure of the bound; this default is documented, not
    claimed sharp, and can be overridden per BoundConstants instance.
    """
    if r < 1:
        raise ValueError(f"moment order must satisfy r >= 1, got {r}")
    p = 0.5 * r
    if p <= 1.0:
        return 4.0
    return (p / (p - 1.0)) ** p * p ** (0.5 * p)


@dataclass(frozen=True)
class BoundConstants:
    """Coefficient suprema of a model, as used by the error bound.

    k_grad_u bounds the spectral norm of the drift gradient (Lipschitz
    constant of the drift), k_hess_u the drift second derivatives,
    k_grad_sigma the diffusion spatial derivatives, k_sigma the diffusion
    itself, and k_linear_growth the joint linear-growth constant.
    ``bdg_constant`` maps a moment order r to G_{r/2}.
    """

    k_grad_u: float
    k_hess_u: float
    k_grad_sigma: float
    k_sigma: float
    k_linear_growth: float = 0.0
    bdg_constant: Callable[[float], float] = default_bdg_constant
    n: int = 1

    def __post_init__(self):
        for name in ("k_grad_u", "k_hess_u", "k_grad_sigma", "k_sigma",
                     "k_linear_growth"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.n < 1:
            raise ValueError("state dimension n must be a positive integer")

    def with_bdg(self, bdg: Callable[[float], float]) -> "BoundConstants":
        """Copy of these constants with a different BDG-constant policy."""
        return BoundConstants(self.k_grad_u, self.k_hess_u, self.k_grad_sigma,
                              self.k_sigma, self.k_linear_growth, bdg, self.n)


@dataclass(frozen=True)
class BoundBreakdown:
    """Three-term decomposition of the bound's right-hand side.

    total == term_ongoing + term_initial + term_cross; all terms >= 0.
    Inputs are echoed for provenance.
    """

    term_ongoing: float
    term_initial: float
    term_cross: float
    total: float
    r: float
    t: float
    epsilon: float
    delta_r: float
    delta_2r: float

    def to_json(self) -> dict:
        return {
            "term_ongoing": self.term_ongoing,
            "term_initial": self.term_initial,
            "term_cross": self.term_cross,
            "total": self.total,
            "inputs": {
                "r": self.r,
                "t": self.t,
                "epsilon": self.epsilon,
                "delta_r": self.delta_r,
                "delta_2r": self.delta_2r,
            },
        }


def _exp(x: float) -> float:
    """exp with overflow mapped to +inf (bound stays valid, just vacuous)."""
    try:
        return math.exp(x)
    except OverflowError:
        warnings.warn("bound constant overflowed to infinity; the bound is "
                      "still valid but vacuous", RuntimeWarning, stacklevel=3)
        return math.inf


def moment_constant(r: float) -> float:
    """Absolute moment E|Z|^r of a standard normal: 2^{r/2} Gamma((r+1)/2) / sqrt(pi).

    For a univariate Gaussian with standard deviation rho, the r-th absolute
    central moment equals moment_constant(r) * rho^r exactly.
    """
    if r < 0:
        raise ValueError(f"moment order must be non-negative, got {r}")
    return 2.0 ** (0.5 * r) * float(_gamma(0.5 * (r + 1.0))) / math.sqrt(math.pi)


def gaussian_delta_bound(sigma0: np.ndarray, r: float) -> float:
    """Upper bound on the L_r distance delta_r of a Gaussian draw from its mean.

    Uses the trace bound delta_r^r <= n^{3r/2-1} M_r tr(Sigma0)^{r/2},
    which holds with equality when n = 1 (where it reduces to M_r rho^r
    with rho^2 = tr(Sigma0)). Returns delta_r itself, not its r-th power.
    """
    sigma0 = np.atleast_2d(np.asarray(sigma0, dtype=float))
    n = sigma0.shape[0]
    trace = float(np.trace(sigma0))
    if trace < 0:
        raise ValueError("covariance trace must be non-negative")
    delta_pow_r = n ** (1.5 * r - 1.0) * moment_constant(r) * trace ** (0.5 * r)
    return delta_pow_r ** (1.0 / r)


def lemma_constants(q: float, t: float, constants: BoundConstants) -> tuple[float, float]:
    """Constants (H1, H2) of the Gronwall lemma controlling E int ||y - F||^q.

    H1(q, t) = 3^{q-1} n^{3q/2} K_sigma^{q/2} G_{q/2} t^{q/2+1} exp(3^{q-1} K_grad_u^q t^q)
    H2(q, t) = 3^{q-1} t exp(3^{q-1} K_grad_u^q t^q)

    Both are non-decreasing in t and vanish at t = 0. Overflow at large
    q * t yields +inf.
    """
    if q < 1:
        raise ValueError(f"q must satisfy q >= 1, got {q}")
    if t < 0:
        raise ValueError(f"t must be non-negative, got {t}")
    g = constants.bdg_constant(q)
    if g <= 0:
        raise ValueError("BDG constant must be positive")
    pre = 3.0 ** (q - 1.0)
    growth = _exp(pre * constants.k_grad_u ** q * t ** q)
    h1 = pre * constants.n ** (1.5 * q) * constants.k_sigma ** (0.5 * q) \
        * g * t ** (0.5 * q + 1.0) * growth
    h2 = pre * t * growth
    return h1, h2


def theorem_constants(r: float, t: float, constants: BoundConstants) -> tuple[float, float, float]:
    """Constants (D1, D2, D3) multiplying the three terms of the bound.

    D1(r, t) = 3^{r-1} exp(3^{r-1} t^r K_grad_u^r) K_M(r, t)
    D2(r, t) = 3^{r-1} t^{r-1} n^{r/2} H2(2r, t) exp(3^{r-1} t^r K_grad_u^r)
    D3(r, t) = 3^{r-1} G_{r/2} t^{r/2-1} H2(r, t) exp(3^{r-1} t^r K_grad_u^r)

    with K_M(r, t) = max(t^{r-1} n^{r/2} H1(2r, t) / 2^r,
                         G_{r/2} t^{r/2-1} H1(r, t)).

    The apparent t^{r/2-1} singularity at t = 0 for r < 2 is removable
    because H1 and H2 both carry a positive power of t; the limit value 0
    is returned for all three constants at t = 0.
    """
    if r < 1:
        raise ValueError(f"moment order must satisfy r >= 1, got {r}")
    if t < 0:
        raise ValueError(f"t must be non-negative, got {t}")
    if t == 0.0:
        return 0.0, 0.0, 0.0
    g = constants.bdg_constant(r)
    n = constants.n
    pre = 3.0 ** (r - 1.0)
    growth = _exp(pre * t ** r * constants.k_grad_u ** r)
    h1_2r, h2_2r = lemma_constants(2.0 * r, t, constants)
    h1_r, h2_r = lemma_constants(r, t, constants)
    k_m = max(t ** (r - 1.0) * n ** (0.5 * r) * h1_2r / 2.0 ** r,
              g * t ** (0.5 * r - 1.0) * h1_r)
    d1 = pre * growth * k_m
    d2 = pre * t ** (r - 1.0) * n ** (0.5 * r) * h2_2r * growth
    d3 = pre * g * t ** (0.5 * r - 1.0) * h2_r * growth
    return d1, d2, d3


def bound_rhs(r: float, t: float, epsilon: float, delta_r: float,
              delta_2r: float, constants: BoundConstants) -> BoundBreakdown:
    """Evaluate the full right-hand side of the moment bound.

    Parameters
    ----------
    r : moment order, >= 1.
    t : horizon time, >= 0.
    epsilon : ongoing-noise scale.
    delta_r, delta_2r : L_r and L_{2r} distances of the initial condition
        from the reference point (0 for a fixed initial condition; for a
        Gaussian initial condition use :func:`gaussian_delta_bound`).
    constants : coefficient suprema of the model.

    A vanishing drift-curvature constant kills the initial term and its
    share of the ongoing term; a vanishing diffusion-derivative constant
    kills the cross term and its share of the ongoing term. With both zero
    the total is exactly 0 (the linearisation is exact).
    """
    if epsilon < 0 or delta_r < 0 or delta_2r < 0:
        raise ValueError("epsilon, delta_r and delta_2r must be non-negative")
    d1, d2, d3 = theorem_constants(r, t, constants)
    hess_pow = constants.k_hess_u ** r
    gsig_pow = constants.k_grad_sigma ** r
    term_ongoing = (hess_pow + gsig_pow) * d1 * epsilon ** (2.0 * r)
    term_initial = hess_pow * d2 * delta_2r ** (2.0 * r)
    term_cross = gsig_pow * d3 * delta_r ** r * epsilon ** r
    total = term_ongoing + term_initial + term_cross
    return BoundBreakdown(term_ongoing, term_initial, term_cross, total,
                          r, t, epsilon, delta_r, delta_2r)


def _tensor_norm_probe(slabs: np.ndarray, probes: np.ndarray) -> float:
    """Lower estimate of the spectral norm of a 3rd-order tensor.

    ``slabs`` has shape (n_rows, n_cols, n_dirs); the tensor norm is
    sup_{||v||=1} || sum_k v_k T[:, :, k] ||_2, estimated over the given
    unit probe directions (axis-aligned probes should be included).
    """
    contracted = np.einsum("ijk,pk->pij", slabs, probes)
    return float(max(np.linalg.norm(m, 2) for m in contracted))


def estimate_constants(model, domain=None, samples_per_axis: int = 33,
                       times=(0.0,), n_jitter: int = 32, n_probe: int = 64,
                       seed: int = 0, fd_step: float = 1e-5) -> BoundConstants:
    """Estimate coefficient suprema of a model by grid sampling.

    Evaluates the drift gradient, its finite-difference derivative, the
    diffusion and its finite-difference derivative over a tensor grid on
    the given axis-aligned box (default: the model's documented domain),
    augmented with uniformly jittered points, at each of the given times.
    The returned values are lower estimates of the true suprema.
    """
    if domain is None:
        domain = model.domain
    if domain is None:
        raise ValueError(f"model {model.name!r} has no documented domain; "
                         "pass one explicitly")
    lo = np.asarray(domain[0], dtype=float)
    hi = np.asarray(domain[1], dtype=float)
    n = model.dim_state
    if lo.shape != (n,) or hi.shape != (n,):
        raise ValueError("domain bounds must match the state dimension")

    axes = [np.linspace(lo[k], hi[k], samples_per_axis) for k in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=-1)
    rng = np.random.default_rng(seed)
    if n_jitter > 0:
        jitter = lo + (hi - lo) * rng.random((n_jitter, n))
        points = np.vstack([points, jitter])

    probes = np.vstack([np.eye(n), rng.standard_normal((n_probe, n))])
    probes /= np.linalg.norm(probes, axis=1, keepdims=True)

    h = fd_step * max(1.0, float(np.max(np.abs(np.stack([lo, hi])))))
    k_grad_u = k_hess_u = k_grad_sigma = k_sigma = k_lin = 0.0
    for t in times:
        grads = model.drift_gradient(points, t)
        sigmas = model.diffusion(points, t)
        drifts = model.drift(points, t)
        if not (np.all(np.isfinite(grads)) and np.all(np.isfinite(sigmas))
                and np.all(np.isfinite(drifts))):
            bad = points[~np.isfinite(drifts).all(axis=-1)][:1]
            raise NumericalDomainError(
                f"non-finite coefficient evaluation near {bad}", point=bad, time=t)
        k_grad_u = max(k_grad_u, max(np.linalg.norm(g, 2) for g in grads))
        k_sigma = max(k_sigma, max(np.linalg.norm(s, 2) for s in sigmas))
        growth = (np.linalg.norm(drifts, axis=-1)
                  + np.linalg.norm(sigmas, axis=(-2, -1))) \
            / (1.0 + np.linalg.norm(points, axis=-1))
        k_lin = max(k_lin, float(np.max(growth)))

        # central finite differences of the gradient and diffusion per axis
        for p in points:
            hess_slabs = np.empty((n, n, n))
            dsig_slabs = np.empty((n, model.dim_noise, n))
            for k in range(n):
                dp = np.zeros(n)
                dp[k] = h
                hess_slabs[:, :, k] = (model.drift_gradient(p + dp, t)
                                       - model.drift_gradient(p - dp, t)) / (2 * h)
                dsig_slabs[:, :, k] = (model.diffusion(p + dp, t)
                                       - model.diffusion(p - dp, t)) / (2 * h)
            k_hess_u = max(k_hess_u, _tensor_norm_probe(hess_slabs, probes))
            k_grad_sigma = max(k_grad_sigma, _tensor_norm_probe(dsig_slabs, probes))

    return BoundConstants(k_grad_u=k_grad_u, k_hess_u=k_hess_u,
                          k_grad_sigma=k_grad_sigma, k_sigma=k_sigma,
                          k_linear_growth=k_lin, n=n)
