"""The three benchmark oscillators in their stochastic Ito forms.

Each factory returns an ``SdeSystem`` whose drift/diffusion are exactly the
printed Ito dynamics used to generate data:

* mass-spring:   dq = (p/m - kq/(2m)) dt + (p/m) dW
                 dp = (-kq - kp/(2m) + F) dt + (-kq) dW
* Duffing:       dq = p dt,  dp = (q - q^3 + F) dt, additive sigma0 * I noise
* Van der Pol:   dx1 = x2 dt
                 dx2 = (mu (1 - x1^2) x2 - x1 + xi xi'/2) dt + xi(x2) dW

Two coefficient views of the mass-spring system exist because the Ito drift
is (J - R_eff) grad H with the effective dissipation R_eff = diag(1/(2m), k/2),
while the physical oscillator is the undamped R = 0 system.  Data generation
and coefficient-gap bounds use the Ito form; energy-rate diagnostics and the
deterministic evaluation truth use the PH form.

The Van der Pol storage 0.5 |x|^2 makes its nonconservative matrix
sign-indefinite; that set validates with require_psd=False by design.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .structure import CoefficientSet


@dataclass(frozen=True)
class SdeSystem:
    """Drift/diffusion pair (plus optional batch forms and coefficients)."""

    name: str
    n: int
    d: int
    m: int
    drift_fn: Callable[[float, np.ndarray, np.ndarray | None], np.ndarray]
    diffusion_fn: Callable[[np.ndarray], np.ndarray]
    coefficients: CoefficientSet | None = None
    drift_batch: Callable | None = None
    diffusion_batch: Callable | None = None


def canonical_j() -> np.ndarray:
    return np.array([[0.0, 1.0], [-1.0, 0.0]])


def force_port() -> np.ndarray:
    """Single input channel acting on the momentum component."""
    return np.array([[0.0], [1.0]])


def _with_input(base: np.ndarray, g: np.ndarray, u: np.ndarray | None) -> np.ndarray:
    if u is None:
        return base
    return base + g @ np.atleast_1d(np.asarray(u, dtype=np.float64))


# ---------------------------------------------------------------------------
# mass-spring oscillator
# ---------------------------------------------------------------------------

def mass_spring_hamiltonian(k: float, m: float) -> Callable[[np.ndarray], float]:
    def h(x: np.ndarray) -> float:
        q, p = x
        return 0.5 * k * q * q + 0.5 * p * p / m

    return h


def mass_spring_ito_coefficients(k: float = 1.0, m: float = 1.0) -> CoefficientSet:
    """Ito-form bundle: (J - R_eff) grad H reproduces the printed drift."""
    return CoefficientSet(
        n=2,
        d=1,
        m=1,
        H=mass_spring_hamiltonian(k, m),
        grad_H=lambda x: np.array([k * x[0], x[1] / m]),
        hess_H=lambda x: np.diag([k, 1.0 / m]),
        J=lambda x: canonical_j(),
        R=lambda x: np.diag([1.0 / (2.0 * m), k / 2.0]),
        sigma=lambda x: np.array([[x[1] / m], [-k * x[0]]]),
        g=lambda x: force_port(),
    )


def mass_spring_ph_coefficients(k: float = 1.0, m: float = 1.0) -> CoefficientSet:
    """Undamped PH bundle (R = 0) with the same state-dependent noise."""
    ito = mass_spring_ito_coefficients(k, m)
    return CoefficientSet(
        n=2, d=1, m=1,
        H=ito.H, grad_H=ito.grad_H, hess_H=ito.hess_H,
        J=ito.J, R=lambda x: np.zeros((2, 2)), sigma=ito.sigma, g=ito.g,
    )


def make_mass_spring(k: float = 1.0, m: float = 1.0, F: float = 0.0) -> SdeSystem:
    if k <= 0 or m <= 0:
        raise ValueError(f"mass-spring requires k, m > 0, got k={k}, m={m}")
    g = force_port()

    def drift(t: float, x: np.ndarray, u=None) -> np.ndarray:
        q, p = x
        base = np.array([p / m - k * q / (2.0 * m), -k * q - k * p / (2.0 * m) + F])
        return _with_input(base, g, u)

    def diffusion(x: np.ndarray) -> np.ndarray:
        return np.array([[x[1] / m], [-k * x[0]]])

    def drift_b(t: float, x: np.ndarray, u=None) -> np.ndarray:
        q, p = x[:, 0], x[:, 1]
        out = np.stack([p / m - k * q / (2.0 * m), -k * q - k * p / (2.0 * m) + F], axis=1)
        if u is not None:
            out = out + u @ g.T
        return out

    def diffusion_b(x: np.ndarray) -> np.ndarray:
        out = np.empty((x.shape[0], 2, 1))
        out[:, 0, 0] = x[:, 1] / m
        out[:, 1, 0] = -k * x[:, 0]
        return out

    return SdeSystem(
        name="mass_spring", n=2, d=1, m=1,
        drift_fn=drift, diffusion_fn=diffusion,
        coefficients=mass_spring_ito_coefficients(k, m),
        drift_batch=drift_b, diffusion_batch=diffusion_b,
    )


# ---------------------------------------------------------------------------
# Duffing oscillator
# ---------------------------------------------------------------------------

def duffing_hamiltonian(x: np.ndarray) -> float:
    q, p = x
    return 0.5 * p * p - 0.5 * q * q + 0.25 * q ** 4


def duffing_coefficients(sigma0: float = 0.05) -> CoefficientSet:
    return CoefficientSet(
        n=2,
        d=2,
        m=1,
        H=duffing_hamiltonian,
        grad_H=lambda x: np.array([-x[0] + x[0] ** 3, x[1]]),
        hess_H=lambda x: np.array([[3.0 * x[0] ** 2 - 1.0, 0.0], [0.0, 1.0]]),
        J=lambda x: canonical_j(),
        R=lambda x: np.zeros((2, 2)),
        sigma=lambda x: sigma0 * np.eye(2),
        g=lambda x: force_port(),
    )


def make_duffing(F: float = 0.0, sigma0: float = 0.05) -> SdeSystem:
    if sigma0 < 0:
        raise ValueError(f"duffing requires sigma0 >= 0, got {sigma0}")
    g = force_port()

    def drift(t: float, x: np.ndarray, u=None) -> np.ndarray:
        q, p = x
        return _with_input(np.array([p, q - q ** 3 + F]), g, u)

    def diffusion(x: np.ndarray) -> np.ndarray:
        return sigma0 * np.eye(2)

    def drift_b(t: float, x: np.ndarray, u=None) -> np.ndarray:
        q, p = x[:, 0], x[:, 1]
        out = np.stack([p, q - q ** 3 + F], axis=1)
        if u is not None:
            out = out + u @ g.T
        return out

    def diffusion_b(x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(sigma0 * np.eye(2), (x.shape[0], 2, 2)).copy()

    return SdeSystem(
        name="duffing", n=2, d=2, m=1,
        drift_fn=drift, diffusion_fn=diffusion,
        coefficients=duffing_coefficients(sigma0),
        drift_batch=drift_b, diffusion_batch=diffusion_b,
    )


# ---------------------------------------------------------------------------
# Van der Pol oscillator
# ---------------------------------------------------------------------------

def quadratic_storage(x: np.ndarray) -> float:
    """The fixed Van der Pol storage 0.5 x^T x."""
    return 0.5 * float(np.dot(x, x))


def van_der_pol_coefficients(mu: float = 1.0, xi_const: float = 0.1) -> CoefficientSet:
    """PH embedding with storage 0.5 |x|^2; R is sign-indefinite in |x1|<1."""
    return CoefficientSet(
        n=2,
        d=1,
        m=1,
        H=quadratic_storage,
        grad_H=lambda x: np.asarray(x, dtype=np.float64).copy(),
        hess_H=lambda x: np.eye(2),
        J=lambda x: canonical_j(),
        R=lambda x: np.array([[0.0, 0.0], [0.0, -mu * (1.0 - x[0] ** 2)]]),
        sigma=lambda x: np.array([[0.0], [xi_const]]),
        g=lambda x: force_port(),
    )


def make_van_der_pol(
    mu: float = 1.0,
    xi: float | tuple[Callable[[float], float], Callable[[float], float]] = 0.1,
) -> SdeSystem:
    """Stochastic Van der Pol with noise amplitude xi acting on x2.

    ``xi`` is either a constant (the shipped default, whose Ito correction
    vanishes) or a pair (xi_fn, xi_prime_fn) of scalar callables.
    """
    if isinstance(xi, (int, float)):
        c = float(xi)
        xi_fn = lambda v: c
        xi_prime = lambda v: 0.0
        xi_fn_b = lambda v: np.full_like(v, c)
        xi_prime_b = lambda v: np.zeros_like(v)
        coeffs = van_der_pol_coefficients(mu, c)
    else:
        xi_fn, xi_prime = xi
        xi_fn_b = np.vectorize(xi_fn)
        xi_prime_b = np.vectorize(xi_prime)
        coeffs = None
    g = force_port()

    def drift(t: float, x: np.ndarray, u=None) -> np.ndarray:
        x1, x2 = x
        base = np.array(
            [x2, mu * (1.0 - x1 ** 2) * x2 - x1 + 0.5 * xi_fn(x2) * xi_prime(x2)]
        )
        return _with_input(base, g, u)

    def diffusion(x: np.ndarray) -> np.ndarray:
        return np.array([[0.0], [xi_fn(x[1])]])

    def drift_b(t: float, x: np.ndarray, u=None) -> np.ndarray:
        x1, x2 = x[:, 0], x[:, 1]
        out = np.stack(
            [x2, mu * (1.0 - x1 ** 2) * x2 - x1 + 0.5 * xi_fn_b(x2) * xi_prime_b(x2)],
            axis=1,
        )
        if u is not None:
            out = out + u @ g.T
        return out

    def diffusion_b(x: np.ndarray) -> np.ndarray:
        out = np.zeros((x.shape[0], 2, 1))
        out[:, 1, 0] = xi_fn_b(x[:, 1])
        return out

    return SdeSystem(
        name="van_der_pol", n=2, d=1, m=1,
        drift_fn=drift, diffusion_fn=diffusion,
        coefficients=coeffs, drift_batch=drift_b, diffusion_batch=diffusion_b,
    )


def sde_system_from_coefficients(coeffs: CoefficientSet, name: str = "coefficients") -> SdeSystem:
    """SDE with drift (J - R) grad H + g u and diffusion sigma."""
    return SdeSystem(
        name=name,
        n=coeffs.n,
        d=coeffs.d,
        m=coeffs.m,
        drift_fn=lambda t, x, u=None: coeffs.drift(x, u),
        diffusion_fn=coeffs.sigma,
        coefficients=coeffs,
    )


def damped_oscillator_coefficients(damping: float = 0.5, noise: float = 0.1) -> CoefficientSet:
    """Linear oscillator with uniform dissipation R = damping * I and
    constant additive noise; on any box excluding the origin this is the
    strictly dissipative regime r(x) = noise^2 - damping |x|^2 <= -delta."""
    if damping < 0 or noise < 0:
        raise ValueError("damping and noise must be nonnegative")
    return CoefficientSet(
        n=2,
        d=2,
        m=1,
        H=quadratic_storage,
        grad_H=lambda x: np.asarray(x, dtype=np.float64).copy(),
        hess_H=lambda x: np.eye(2),
        J=lambda x: canonical_j(),
        R=lambda x: damping * np.eye(2),
        sigma=lambda x: noise * np.eye(2),
        g=lambda x: force_port(),
    )


def deterministic_truth_drift(name: str, params: dict) -> Callable[[np.ndarray], np.ndarray]:
    """Noise-free reference dynamics for rollout evaluation.

    These are the underlying deterministic oscillators, i.e. the PH drift
    without the noise-induced Ito correction terms (which only differ from
    the printed drift for the mass-spring system).
    """
    if name == "mass_spring":
        k, m, f0 = params.get("k", 1.0), params.get("m", 1.0), params.get("F", 0.0)
        return lambda x: np.array([x[1] / m, -k * x[0] + f0])
    if name == "duffing":
        f0 = params.get("F", 0.0)
        return lambda x: np.array([x[1], x[0] - x[0] ** 3 + f0])
    if name == "van_der_pol":
        mu = params.get("mu", 1.0)
        return lambda x: np.array([x[1], mu * (1.0 - x[0] ** 2) * x[1] - x[0]])
    raise ValueError(f"unknown system {name!r}")
