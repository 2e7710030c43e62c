"""Exact Gaussian law of the linearised SDE solution.

The solution of the linearisation about a reference deterministic trajectory
is Gaussian for fixed or Gaussian initial conditions. Its mean follows the
flow (shifted by the transported initial-mean offset) and its covariance
solves the Lyapunov-type matrix ODE

    dPi/dt = J(t) Pi + Pi J(t)^T + eps^2 S(t) S(t)^T,   Pi(0) = Var(x),

with J and S the drift gradient and diffusion evaluated along the reference
trajectory. The same covariance is also available in quadrature form as
DF (int L L^T dtau) DF^T with L(tau) = DF(tau)^{-1} S(tau), which provides an
independent discretisation used for cross-checking; the ODE route never
needs the gradient inverse and is the production path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from .exceptions import (CovarianceError, IntegrationFailure,
                         SingularGradientError)
from .flow import COND_LIMIT, DEFAULT_TOL, solve_flow

#: dense-output nodes per unit time for the quadrature cross-check
QUAD_NODES_PER_UNIT_TIME = 200


def _check_covariance(cov: np.ndarray, where: str) -> np.ndarray:
    """Validate symmetry and positive semi-definiteness, return symmetrised."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    scale = max(float(np.linalg.norm(cov)), 1e-300)
    asym = float(np.max(np.abs(cov - cov.T)))
    if asym > 1e-12 * scale:
        raise CovarianceError(f"{where}: covariance asymmetry {asym:.3g} "
                              f"exceeds 1e-12 * norm ({scale:.3g})")
    sym = 0.5 * (cov + cov.T)
    eigvals = np.linalg.eigvalsh(sym)
    if eigvals[0] < -1e-10 * scale:
        raise CovarianceError(f"{where}: covariance is not PSD; eigenvalues "
                              f"{eigvals}")
    return sym


@dataclass(frozen=True)
class GaussianState:
    """Mean and covariance of the linearised solution at one time."""

    mean: np.ndarray
    covariance: np.ndarray
    t: float
    epsilon: float

    def validate(self) -> "GaussianState":
        _check_covariance(self.covariance, "GaussianState")
        if not np.all(np.isfinite(self.mean)):
            raise CovarianceError("GaussianState: non-finite mean")
        return self

    def to_json(self) -> dict:
        return {"mean": list(map(float, self.mean)),
                "covariance": list(map(float, np.asarray(self.covariance).ravel())),
                "t": float(self.t),
                "epsilon": float(self.epsilon)}

    @classmethod
    def from_json(cls, data: dict) -> "GaussianState":
        mean = np.asarray(data["mean"], dtype=float)
        n = mean.shape[0]
        cov = np.asarray(data["covariance"], dtype=float).reshape(n, n)
        return cls(mean, cov, float(data["t"]), float(data["epsilon"]))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "GaussianState":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class InitialCondition:
    """Initial law of the coupled system, relative to a reference point.

    ``kind`` is "fixed" (point mass at the reference point) or "gaussian".
    For the Gaussian case the reference point defaults to the mean, the
    natural linearisation point. ``rho`` records the isotropic scale when
    the covariance was specified as rho^2 * I, else None.
    """

    kind: str
    reference_point: np.ndarray
    mean: np.ndarray
    covariance: np.ndarray
    rho: Optional[float] = None

    @classmethod
    def fixed(cls, x0) -> "InitialCondition":
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        n = x0.shape[0]
        return cls("fixed", x0, x0.copy(), np.zeros((n, n)), rho=0.0)

    @classmethod
    def gaussian(cls, mean, covariance=None, rho: Optional[float] = None,
                 reference_point=None) -> "InitialCondition":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        n = mean.shape[0]
        if (covariance is None) == (rho is None):
            raise ValueError("specify exactly one of covariance or rho")
        if rho is not None:
            if rho < 0:
                raise ValueError("rho must be non-negative")
            covariance = rho ** 2 * np.eye(n)
        covariance = np.atleast_2d(np.asarray(covariance, dtype=float))
        if covariance.shape != (n, n):
            raise ValueError(f"covariance must have shape ({n}, {n})")
        ref = mean.copy() if reference_point is None \
            else np.atleast_1d(np.asarray(reference_point, dtype=float))
        return cls("gaussian", ref, mean, covariance, rho=rho)

    def validate(self) -> "InitialCondition":
        if self.kind not in ("fixed", "gaussian"):
            raise ValueError(f"unknown initial-condition kind {self.kind!r}")
        _check_covariance(self.covariance, "InitialCondition")
        if self.kind == "fixed":
            if np.any(self.covariance != 0.0):
                raise ValueError("fixed initial condition must have zero covariance")
            if not np.array_equal(self.mean, self.reference_point):
                raise ValueError("fixed initial condition must have "
                                 "mean equal to the reference point")
        return self

    @property
    def dim(self) -> int:
        return self.reference_point.shape[0]


def propagate_covariance(model, x0, t: float, epsilon: float,
                         sigma_init=None, tol: float = DEFAULT_TOL,
                         mean0=None, method: str = "rk45",
                         dt: float = 1e-3) -> GaussianState:
    """Propagate the linearised mean and covariance to time t.

    Solves the covariance ODE jointly with the reference state from
    Pi(0) = sigma_init (zero by default), symmetrising at every right-hand
    side evaluation. The mean is the flow state when ``mean0`` is omitted
    (or equals x0), else flow(t) + DF(t) (mean0 - x0) with DF integrated
    jointly as well.

    ``method`` selects the integrator: "rk45" (default, adaptive embedded
    Runge-Kutta on the augmented system) or "mazzoni" (fixed-step hybrid
    combining a Taylor-Heun state approximation with a Gauss-Legendre
    midpoint transition; preserves symmetry and positive semi-definiteness
    exactly by congruence, step size ``dt``).
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    n = model.dim_state
    if x0.shape != (n,):
        raise ValueError(f"x0 must have shape ({n},), got {x0.shape}")
    if t < 0:
        raise ValueError("t must be non-negative")
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    sigma_init = np.zeros((n, n)) if sigma_init is None \
        else _check_covariance(sigma_init, "sigma_init")
    offset = None
    if mean0 is not None:
        mean0 = np.atleast_1d(np.asarray(mean0, dtype=float))
        if not np.array_equal(mean0, x0):
            offset = mean0 - x0

    if t == 0.0:
        mean = x0.copy() if offset is None else x0 + offset
        return GaussianState(mean, sigma_init.copy(), 0.0, epsilon).validate()

    if method == "mazzoni":
        state, grad, cov = _propagate_mazzoni(model, x0, t, epsilon,
                                              sigma_init, tol, dt,
                                              need_gradient=offset is not None)
    elif method == "rk45":
        state, grad, cov = _propagate_rk45(model, x0, t, epsilon, sigma_init,
                                           tol, need_gradient=offset is not None)
    else:
        raise ValueError(f"unknown covariance integrator {method!r}")

    mean = state if offset is None else state + grad @ offset
    cov = 0.5 * (cov + cov.T)
    return GaussianState(mean, cov, float(t), float(epsilon)).validate()


def _propagate_rk45(model, x0, t, epsilon, sigma_init, tol, need_gradient):
    n = x0.shape[0]
    eps2 = epsilon ** 2
    ng = n * n if need_gradient else 0

    def rhs(s, z):
        x = z[:n]
        pi = z[n + ng:].reshape(n, n)
        pi = 0.5 * (pi + pi.T)
        jac = model.drift_gradient(x, s)
        sig = model.diffusion(x, s)
        dpi = jac @ pi + pi @ jac.T + eps2 * (sig @ sig.T)
        parts = [model.drift(x, s)]
        if need_gradient:
            grad = z[n:n + ng].reshape(n, n)
            parts.append((jac @ grad).ravel())
        parts.append(dpi.ravel())
        return np.concatenate(parts)

    z0 = np.concatenate([x0, np.eye(n).ravel(), sigma_init.ravel()]) \
        if need_gradient else np.concatenate([x0, sigma_init.ravel()])
    sol = solve_ivp(rhs, (0.0, t), z0, method="RK45", rtol=tol, atol=tol * 1e-2)
    if not sol.success or not np.all(np.isfinite(sol.y[:, -1])):
        raise IntegrationFailure(
            f"covariance integration failed for model {model.name!r} at "
            f"t={sol.t[-1]:.6g}: {sol.message}", last_time=float(sol.t[-1]))
    zT = sol.y[:, -1]
    state = zT[:n]
    grad = zT[n:n + ng].reshape(n, n) if need_gradient else None
    cov = zT[n + ng:].reshape(n, n)
    return state, grad, cov


def _propagate_mazzoni(model, x0, t, epsilon, sigma_init, tol, dt,
                       need_gradient):
    """Fixed-step covariance propagation preserving symmetry and PSD.

    Each step applies the congruence Pi <- Phi Pi Phi^T + h eps^2 S S^T with
    the implicit-midpoint (one-point Gauss-Legendre) transition
    Phi = (I - h/2 J_m)^{-1} (I + h/2 J_m) and midpoint coefficients taken
    along an accurately integrated reference trajectory; both the congruence
    and the symmetrised forcing keep the iterates symmetric PSD while the
    scheme stays second-order accurate.
    """
    n = x0.shape[0]
    steps = max(1, round(t / dt))
    h = t / steps
    path = solve_flow(model, x0, t, tol=tol, with_gradient=need_gradient)
    t_mid = (np.arange(steps) + 0.5) * h
    x_mid = path.state(t_mid)
    jac = model.drift_gradient(x_mid, t_mid)
    sig = model.diffusion(x_mid, t_mid)
    eye = np.eye(n)
    # full-step and half-step midpoint transitions (Cayley forms)
    phi = np.linalg.solve(eye - 0.5 * h * jac, eye + 0.5 * h * jac)
    phi_half = np.linalg.solve(eye - 0.25 * h * jac, eye + 0.25 * h * jac)
    # forcing transported from the midpoint to the end of the step keeps
    # the scheme second order; the congruence keeps it symmetric PSD
    moved = phi_half @ sig
    forcing = h * epsilon ** 2 * np.einsum("kij,klj->kil", moved, moved)
    cov = sigma_init.copy()
    grad = eye.copy() if need_gradient else None
    for k in range(steps):
        cov = phi[k] @ cov @ phi[k].T + 0.5 * (forcing[k] + forcing[k].T)
        if need_gradient:
            grad = phi[k] @ grad
    state = path.state(t)
    return state, grad, cov


def covariance_by_quadrature(model, x0, t: float, quad_points: Optional[int] = None,
                             tol: float = DEFAULT_TOL) -> np.ndarray:
    """Ongoing-uncertainty covariance via the quadrature form.

    Computes DF(t) (int_0^t L L^T dtau) DF(t)^T with
    L(tau) = DF(tau)^{-1} sigma(F(tau), tau), using composite 5-point
    Gauss-Legendre quadrature over the dense output of one flow solve.
    ``quad_points`` is the number of composite subintervals (default
    QUAD_NODES_PER_UNIT_TIME per unit time, at least 16). Requires an
    invertible flow gradient along the trajectory; the node time is named
    if the gradient is numerically singular there.

    Equals the unit-noise covariance from :func:`propagate_covariance`
    (epsilon = 1, zero initial covariance) up to discretisation error.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    n = model.dim_state
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0.0:
        return np.zeros((n, n))
    n_sub = quad_points if quad_points is not None \
        else max(16, int(np.ceil(QUAD_NODES_PER_UNIT_TIME * t)))
    if n_sub < 1:
        raise ValueError("quad_points must be a positive integer")

    path = solve_flow(model, x0, t, tol=tol, with_gradient=True)
    nodes, weights = np.polynomial.legendre.leggauss(5)
    edges = np.linspace(0.0, t, n_sub + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    times = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    w = (half[:, None] * weights[None, :]).ravel()

    states = path.state(times)
    grads = path.gradient(times)
    conds = np.linalg.cond(grads)
    if np.any(conds > COND_LIMIT):
        bad = times[int(np.argmax(conds > COND_LIMIT))]
        raise SingularGradientError(
            f"flow gradient is numerically singular at quadrature node "
            f"t={bad:.6g} (cond={conds.max():.3g})", node_time=float(bad))
    sig = model.diffusion(states, times)
    loc = np.linalg.solve(grads, sig)
    integral = np.einsum("k,kij,klj->il", w, loc, loc)
    grad_t = path.gradient(t)
    cov = grad_t @ integral @ grad_t.T
    return 0.5 * (cov + cov.T)


def linearised_distribution(model, init: InitialCondition, t: float,
                            epsilon: float, tol: float = DEFAULT_TOL,
                            method: str = "rk45", dt: float = 1e-3) -> GaussianState:
    """Full Gaussian law of the linearised solution at time t.

    The mean is flow(t) + DF(t) (mean0 - x0) and the covariance is
    DF Sigma0 DF^T + eps^2 * (unit-noise covariance), obtained by
    propagating the covariance ODE from Pi(0) = Sigma0.
    """
    init.validate()
    if init.dim != model.dim_state:
        raise ValueError("initial condition dimension does not match model")
    return propagate_covariance(model, init.reference_point, t, epsilon,
                                sigma_init=init.covariance, tol=tol,
                                mean0=init.mean, method=method, dt=dt)
