"""Built-in vector-field models: drift, diffusion, exact gradients, constants.

Every coefficient callable broadcasts over leading sample axes: states of
shape (..., n) map to drifts of shape (..., n), drift gradients (..., n, n)
and diffusions (..., n, m). Time is a scalar or an array broadcastable
against the leading axes. Scalar models use n = 1 with a trailing state axis.

The catalog ships the two 1-D benchmark systems (sine drift with additive
noise; linear drift with cosine multiplicative noise), the 2-D unsteady
meandering jet, and three analytic oracles (Ornstein-Uhlenbeck, Brownian
motion, and a linear-additive system whose linearisation is exact).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import expm

from .bounds import BoundConstants
from .exceptions import NumericalDomainError, UnknownModelError

__all__ = ["VectorFieldModel", "MeanderingJetParams", "builtin_model",
           "eval_model", "MODEL_NAMES"]


@dataclass(frozen=True)
class VectorFieldModel:
    """A stochastic model dy = u(y, t) dt + eps * sigma(y, t) dW.

    ``drift_gradient`` is the exact analytic spatial gradient of the drift.
    ``diffusion_gradient`` (shape (..., n, m, n), derivative axis last) is
    optional and only required by the 1-D Milstein scheme.
    ``analytic_flow`` / ``analytic_flow_gradient``, when present, give the
    closed-form deterministic flow map and its spatial gradient and must
    reduce to the identity at t = 0. ``domain`` is the documented
    axis-aligned box used for numerical constant estimation.
    """

    name: str
    dim_state: int
    dim_noise: int
    drift: Callable
    drift_gradient: Callable
    diffusion: Callable
    constants: BoundConstants
    diffusion_gradient: Optional[Callable] = None
    analytic_flow: Optional[Callable] = None
    analytic_flow_gradient: Optional[Callable] = None
    domain: Optional[tuple] = None
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class MeanderingJetParams:
    """Parameters of the unsteady meandering jet (all dimensionless).

    c is the phase speed and A the amplitude of the primary wave with
    wavenumber K; the oscillatory perturbation has amplitude eps_mj,
    co-moving phase speed c1 and wavenumbers k1, l1.
    """

    c: float = 0.5
    A: float = 1.0
    K: float = 4.0
    eps_mj: float = 0.3
    c1: float = math.pi
    k1: float = 1.0
    l1: float = 2.0


def _sine_model() -> VectorFieldModel:
    # dy = sin(y) dt + eps dW, closed-form flow 2*atan(e^t tan(x/2)) on (-pi, pi)
    def drift(x, t):
        return np.sin(x)

    def drift_gradient(x, t):
        return np.cos(x)[..., None]

    def diffusion(x, t):
        return np.ones_like(np.asarray(x, dtype=float))[..., None]

    def diffusion_gradient(x, t):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape + (1, 1))

    def analytic_flow(x, t):
        return 2.0 * np.arctan(np.exp(t) * np.tan(0.5 * np.asarray(x, dtype=float)))

    def analytic_flow_gradient(x, t):
        x = np.asarray(x, dtype=float)
        et = np.exp(t)
        tn = np.tan(0.5 * x)
        return (et * (1.0 + tn ** 2) / (1.0 + (et * tn) ** 2))[..., None]

    constants = BoundConstants(k_grad_u=1.0, k_hess_u=1.0, k_grad_sigma=0.0,
                               k_sigma=1.0, k_linear_growth=2.0, n=1)
    return VectorFieldModel(
        name="sine", dim_state=1, dim_noise=1, drift=drift,
        drift_gradient=drift_gradient, diffusion=diffusion,
        diffusion_gradient=diffusion_gradient, constants=constants,
        analytic_flow=analytic_flow,
        analytic_flow_gradient=analytic_flow_gradient,
        domain=((-math.pi,), (math.pi,)))


def _linear_multiplicative_model() -> VectorFieldModel:
    # dy = y/2 dt + eps cos(y) dW, flow e^{t/2} x
    def drift(x, t):
        return 0.5 * np.asarray(x, dtype=float)

    def drift_gradient(x, t):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape + (1,), 0.5)

    def diffusion(x, t):
        return np.cos(x)[..., None]

    def diffusion_gradient(x, t):
        return -np.sin(x)[..., None, None]

    def analytic_flow(x, t):
        return np.exp(0.5 * t) * np.asarray(x, dtype=float)

    def analytic_flow_gradient(x, t):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.exp(0.5 * t), x.shape)[..., None].copy()

    constants = BoundConstants(k_grad_u=0.5, k_hess_u=0.0, k_grad_sigma=1.0,
                               k_sigma=1.0, k_linear_growth=1.0, n=1)
    return VectorFieldModel(
        name="linear_multiplicative", dim_state=1, dim_noise=1, drift=drift,
        drift_gradient=drift_gradient, diffusion=diffusion,
        diffusion_gradient=diffusion_gradient, constants=constants,
        analytic_flow=analytic_flow,
        analytic_flow_gradient=analytic_flow_gradient,
        domain=((-math.pi,), (math.pi,)))


def _jet_constants(p: MeanderingJetParams) -> BoundConstants:
    # entrywise amplitude bounds; Frobenius of the bound matrix dominates
    # the spectral norm, so these are valid (crude) suprema
    c, A, K, e, k1, l1 = p.c, p.A, p.K, p.eps_mj, p.k1, p.l1
    g = np.array([[A * K + e * l1 * k1, A + e * l1 ** 2],
                  [A * K ** 2 + e * k1 ** 2, A * K + e * k1 * l1]])
    k_grad_u = float(np.linalg.norm(g))
    h = np.array([A * K ** 2 + e * l1 * k1 ** 2,   # u1: d11
                  A * K + e * l1 ** 2 * k1,        # u1: d12 = d21
                  A + e * l1 ** 3,                 # u1: d22
                  A * K ** 3 + e * k1 ** 3,        # u2: d11
                  A * K ** 2 + e * k1 ** 2 * l1,   # u2: d12 = d21
                  A * K + e * k1 * l1 ** 2])       # u2: d22
    k_hess_u = float(math.sqrt(float(h[0] ** 2 + 2 * h[1] ** 2 + h[2] ** 2
                                     + h[3] ** 2 + 2 * h[4] ** 2 + h[5] ** 2)))
    k_grad_sigma = float(math.sqrt(K ** 2 + 1.0 + K ** 4 + K ** 2))
    k_sigma = float(math.sqrt(1.0 + 1.0 + K ** 2))
    k_lin = float(math.sqrt((c + A + e * l1) ** 2 + (A * K + e * k1) ** 2)) + k_sigma
    return BoundConstants(k_grad_u=k_grad_u, k_hess_u=k_hess_u,
                          k_grad_sigma=k_grad_sigma, k_sigma=k_sigma,
                          k_linear_growth=k_lin, n=2)


def _meandering_jet_model(**kwargs) -> VectorFieldModel:
    p = MeanderingJetParams(**kwargs)
    c, A, K, e, c1, k1, l1 = p.c, p.A, p.K, p.eps_mj, p.c1, p.k1, p.l1

    def drift(x, t):
        x = np.asarray(x, dtype=float)
        y1, y2 = x[..., 0], x[..., 1]
        ph = k1 * (y1 - c1 * t)
        u1 = c - A * np.sin(K * y1) * np.cos(y2) \
            + e * l1 * np.sin(ph) * np.cos(l1 * y2)
        u2 = A * K * np.cos(K * y1) * np.sin(y2) \
            + e * k1 * np.cos(ph) * np.sin(l1 * y2)
        return np.stack(np.broadcast_arrays(u1, u2), axis=-1)

    def drift_gradient(x, t):
        x = np.asarray(x, dtype=float)
        y1, y2 = x[..., 0], x[..., 1]
        ph = k1 * (y1 - c1 * t)
        sp, cp = np.sin(ph), np.cos(ph)
        s1, cq = np.sin(K * y1), np.cos(K * y1)
        s2, c2 = np.sin(y2), np.cos(y2)
        sl, cl = np.sin(l1 * y2), np.cos(l1 * y2)
        g11 = -A * K * cq * c2 + e * l1 * k1 * cp * cl
        g12 = A * s1 * s2 - e * l1 ** 2 * sp * sl
        g21 = -A * K ** 2 * s1 * s2 - e * k1 ** 2 * sp * sl
        g22 = A * K * cq * c2 + e * k1 * l1 * cp * cl
        g11, g12, g21, g22 = np.broadcast_arrays(g11, g12, g21, g22)
        row1 = np.stack([g11, g12], axis=-1)
        row2 = np.stack([g21, g22], axis=-1)
        return np.stack([row1, row2], axis=-2)

    def diffusion(x, t):
        # columns model perturbations to the phase speed and the amplitude
        x = np.asarray(x, dtype=float)
        y1, y2 = x[..., 0], x[..., 1]
        s12 = np.sin(K * y1) * np.cos(y2)
        s22 = K * np.cos(K * y1) * np.sin(y2)
        ones = np.ones_like(s12)
        zeros = np.zeros_like(s12)
        row1 = np.stack([ones, s12], axis=-1)
        row2 = np.stack([zeros, s22], axis=-1)
        return np.stack([row1, row2], axis=-2)

    return VectorFieldModel(
        name="meandering_jet", dim_state=2, dim_noise=2, drift=drift,
        drift_gradient=drift_gradient, diffusion=diffusion,
        constants=_jet_constants(p),
        domain=((0.0, 0.0), (math.pi, math.pi)),
        params={"c": c, "A": A, "K": K, "eps_mj": e, "c1": c1,
                "k1": k1, "l1": l1})


def _ornstein_uhlenbeck_model(a: float = 1.0) -> VectorFieldModel:
    # dy = -a y dt + eps dW; terminal variance eps^2 (1 - e^{-2at}) / (2a)
    if a <= 0:
        raise ValueError(f"Ornstein-Uhlenbeck rate must be positive, got a={a}")

    def drift(x, t):
        return -a * np.asarray(x, dtype=float)

    def drift_gradient(x, t):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape + (1,), -a)

    def diffusion(x, t):
        return np.ones_like(np.asarray(x, dtype=float))[..., None]

    def diffusion_gradient(x, t):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape + (1, 1))

    def analytic_flow(x, t):
        return np.exp(-a * t) * np.asarray(x, dtype=float)

    def analytic_flow_gradient(x, t):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.exp(-a * t), x.shape)[..., None].copy()

    constants = BoundConstants(k_grad_u=a, k_hess_u=0.0, k_grad_sigma=0.0,
                               k_sigma=1.0, k_linear_growth=max(a, 1.0), n=1)
    return VectorFieldModel(
        name="ornstein_uhlenbeck", dim_state=1, dim_noise=1, drift=drift,
        drift_gradient=drift_gradient, diffusion=diffusion,
        diffusion_gradient=diffusion_gradient, constants=constants,
        analytic_flow=analytic_flow,
        analytic_flow_gradient=analytic_flow_gradient,
        domain=((-2.0,), (2.0,)), params={"a": a})


def _brownian_model(dim: int = 1) -> VectorFieldModel:
    if dim < 1:
        raise ValueError(f"dimension must be a positive integer, got {dim}")
    eye = np.eye(dim)

    def drift(x, t):
        return np.zeros_like(np.asarray(x, dtype=float))

    def drift_gradient(x, t):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape + (dim,))

    def diffusion(x, t):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(eye, x.shape[:-1] + (dim, dim)).copy()

    def diffusion_gradient(x, t):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape + (dim, dim))

    def analytic_flow(x, t):
        return np.asarray(x, dtype=float).copy()

    def analytic_flow_gradient(x, t):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(eye, x.shape[:-1] + (dim, dim)).copy()

    constants = BoundConstants(k_grad_u=0.0, k_hess_u=0.0, k_grad_sigma=0.0,
                               k_sigma=1.0, k_linear_growth=1.0, n=dim)
    return VectorFieldModel(
        name="brownian", dim_state=dim, dim_noise=dim, drift=drift,
        drift_gradient=drift_gradient, diffusion=diffusion,
        diffusion_gradient=diffusion_gradient, constants=constants,
        analytic_flow=analytic_flow,
        analytic_flow_gradient=analytic_flow_gradient,
        domain=((-1.0,) * dim, (1.0,) * dim), params={"dim": dim})


_LINEAR_ADDITIVE_A = ((0.0, 1.0), (-1.0, -0.3))
_LINEAR_ADDITIVE_B = (0.1, -0.2)
_LINEAR_ADDITIVE_SIGMA = ((0.8, 0.2), (0.1, 0.6))


def _linear_additive_model(a_matrix=None, b_vector=None, sigma_matrix=None) -> VectorFieldModel:
    # dy = (A y + b) dt + eps * Sigma dW; linear drift + additive noise,
    # so the linearisation about any reference trajectory is exact
    A = np.array(_LINEAR_ADDITIVE_A if a_matrix is None else a_matrix, dtype=float)
    b = np.array(_LINEAR_ADDITIVE_B if b_vector is None else b_vector, dtype=float)
    S = np.array(_LINEAR_ADDITIVE_SIGMA if sigma_matrix is None else sigma_matrix,
                 dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or b.shape != (n,) or S.shape[0] != n:
        raise ValueError("inconsistent linear-additive coefficient shapes")
    m = S.shape[1]
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = A
    aug[:n, n] = b

    def drift(x, t):
        return np.asarray(x, dtype=float) @ A.T + b

    def drift_gradient(x, t):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(A, x.shape[:-1] + (n, n)).copy()

    def diffusion(x, t):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(S, x.shape[:-1] + (n, m)).copy()

    def diffusion_gradient(x, t):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (n, m, n))

    def analytic_flow(x, t):
        # exact affine flow via the augmented matrix exponential
        phi = expm(aug * t)
        return np.asarray(x, dtype=float) @ phi[:n, :n].T + phi[:n, n]

    def analytic_flow_gradient(x, t):
        x = np.asarray(x, dtype=float)
        phi = expm(A * t)
        return np.broadcast_to(phi, x.shape[:-1] + (n, n)).copy()

    constants = BoundConstants(
        k_grad_u=float(np.linalg.norm(A, 2)), k_hess_u=0.0, k_grad_sigma=0.0,
        k_sigma=float(np.linalg.norm(S, 2)),
        k_linear_growth=float(np.linalg.norm(A, 2) + np.linalg.norm(b)
                              + np.linalg.norm(S, 2)), n=n)
    return VectorFieldModel(
        name="linear_additive", dim_state=n, dim_noise=m, drift=drift,
        drift_gradient=drift_gradient, diffusion=diffusion,
        diffusion_gradient=diffusion_gradient, constants=constants,
        analytic_flow=analytic_flow,
        analytic_flow_gradient=analytic_flow_gradient,
        domain=((-2.0,) * n, (2.0,) * n),
        params={"a_matrix": A.tolist(), "b_vector": b.tolist(),
                "sigma_matrix": S.tolist()})


_CATALOG = {
    "sine": _sine_model,
    "linear_multiplicative": _linear_multiplicative_model,
    "meandering_jet": _meandering_jet_model,
    "ornstein_uhlenbeck": _ornstein_uhlenbeck_model,
    "brownian": _brownian_model,
    "linear_additive": _linear_additive_model,
}

MODEL_NAMES = tuple(sorted(_CATALOG))


def builtin_model(name: str, **params) -> VectorFieldModel:
    """Build a catalog model by name.

    Raises :class:`UnknownModelError` for an unrecognised name and
    ``ValueError``/``TypeError`` for invalid parameters.
    """
    try:
        factory = _CATALOG[name]
    except KeyError:
        raise UnknownModelError(
            f"unknown model {name!r}; available: {', '.join(MODEL_NAMES)}") from None
    return factory(**params)


def eval_model(model: VectorFieldModel, x, t):
    """Evaluate drift, drift gradient and diffusion at (x, t) in one call.

    Raises :class:`NumericalDomainError` carrying the offending point if
    any output is non-finite.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(model.drift(x, t), dtype=float)
    grad = np.asarray(model.drift_gradient(x, t), dtype=float)
    sigma = np.asarray(model.diffusion(x, t), dtype=float)
    for label, value in (("drift", u), ("drift_gradient", grad),
                         ("diffusion", sigma)):
        if not np.all(np.isfinite(value)):
            raise NumericalDomainError(
                f"{model.name}: non-finite {label} at x={x!r}, t={t!r}",
                point=x, time=t)
    return u, grad, sigma
