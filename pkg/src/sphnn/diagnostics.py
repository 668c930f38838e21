"""Numerical verification of the passivity and stability statements.

Everything here turns an inequality from the theory into a measured number
with an uncertainty:

* passivity residual r(x) = 1/2 tr(sigma sigma^T hess H) - grad H^T R grad H,
  the generator rate of the storage once the skew part cancels;
* Monte-Carlo weak passivity: E[H(X_{t and tau})] against
  H(x0) + E int u^T y ds + (c0 + eps) t on a stopped ensemble (the strict
  variant drops the additive term);
* the Gronwall stability bound
  F(T) <= (4T^2 + 16T) exp((4T + 16) L^2 T) (alpha + beta)^2
  against the empirical mean-square sup distance of coupled paths;
* coefficient-closeness plus coupled-trajectory quantiles (the
  approximation statement in practice);
* deterministic rollout metrics (the benchmark table).

Deterministic (sigma = 0) reference rollouts use classical RK4: the
benchmark table and the conservation gate measure model error, and explicit
Euler's own O(dt) energy drift (factor (1 + dt^2)^N on the harmonic
oscillator) would drown the quantity under test.  Euler-Maruyama remains
the only stochastic integrator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from .runtime import capped_threads
from .sde import Trajectory, simulate_coupled, simulate_ensemble_stopped_frozen
from .structure import CoefficientDistance, CoefficientSet, CompactBox, coefficient_distance
from .systems import SdeSystem, sde_system_from_coefficients

DIVERGENCE_NORM = 1e6


class DiagnosticsError(RuntimeError):
    """A diagnostic could not be computed (degenerate grid, instant exit)."""


# ---------------------------------------------------------------------------
# energy curves and deterministic rollouts
# ---------------------------------------------------------------------------

def energy_curve(h_fn: Callable[[np.ndarray], float], traj: Trajectory) -> np.ndarray:
    """H evaluated along a path."""
    return np.array([h_fn(x) for x in traj.states])


def rollout_deterministic(
    drift_fn: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    dt: float,
    horizon: float,
) -> tuple[np.ndarray, np.ndarray, bool]:
    """Classical RK4 rollout of an autonomous drift.

    Returns (times, states, diverged); integration stops early once the
    state norm exceeds 1e6 and the remaining grid repeats the last state.
    """
    n_steps = int(round(horizon / dt))
    if abs(n_steps * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError(f"horizon {horizon} is not an integer multiple of dt {dt}")
    x = np.asarray(x0, dtype=np.float64).copy()
    states = np.empty((n_steps + 1, x.shape[0]))
    states[0] = x
    diverged = False
    for k in range(n_steps):
        if not diverged:
            k1 = drift_fn(x)
            k2 = drift_fn(x + 0.5 * dt * k1)
            k3 = drift_fn(x + 0.5 * dt * k2)
            k4 = drift_fn(x + dt * k3)
            x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.isfinite(x).all() or np.linalg.norm(x) > DIVERGENCE_NORM:
                diverged = True
                x = states[k]
        states[k + 1] = x
    return np.arange(n_steps + 1) * dt, states, diverged


@dataclass(frozen=True)
class RolloutMetrics:
    """Benchmark-table row: time-averaged rollout gaps plus one-step error."""

    mean_abs_dq: float
    mean_abs_dp: float
    mean_abs_dh: float
    true_mse: float
    horizon: float
    dt: float
    valid: bool = True


def rollout_metrics(
    model_drift: Callable[[np.ndarray], np.ndarray],
    truth_drift: Callable[[np.ndarray], np.ndarray],
    true_h: Callable[[np.ndarray], float],
    heldout_states: np.ndarray,
    x0: np.ndarray = (1.0, 0.0),
    horizon: float = 20.0,
    dt: float = 0.01,
) -> RolloutMetrics:
    """Deterministic rollout gaps against the reference dynamics.

    true_mse is the mean squared drift gap on held-out states; the rollout
    means average |dq|, |dp| and |H(truth) - H(model)| over the common grid.
    A diverged model rollout marks the metrics invalid (infinite).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    _, truth_states, truth_div = rollout_deterministic(truth_drift, x0, dt, horizon)
    _, model_states, model_div = rollout_deterministic(model_drift, x0, dt, horizon)
    if truth_div:
        raise DiagnosticsError("reference rollout diverged; check the configuration")
    gaps = np.array([model_drift(x) - truth_drift(x) for x in np.atleast_2d(heldout_states)])
    true_mse = float(np.mean(np.sum(gaps * gaps, axis=1)))
    if model_div:
        return RolloutMetrics(np.inf, np.inf, np.inf, true_mse, horizon, dt, valid=False)
    dq = np.abs(model_states[:, 0] - truth_states[:, 0]).mean()
    dp = np.abs(model_states[:, 1] - truth_states[:, 1]).mean()
    h_truth = np.array([true_h(x) for x in truth_states])
    h_model = np.array([true_h(x) for x in model_states])
    dh = np.abs(h_model - h_truth).mean()
    return RolloutMetrics(float(dq), float(dp), float(dh), true_mse, horizon, dt)


# ---------------------------------------------------------------------------
# passivity
# ---------------------------------------------------------------------------

def passivity_residual(c: CoefficientSet, x: np.ndarray) -> float:
    """1/2 tr(sigma sigma^T hess H) - grad H^T R grad H at one state."""
    x = np.asarray(x, dtype=np.float64)
    sig = c.sigma(x)
    grad = c.grad_H(x)
    ito = 0.5 * float(np.trace(sig @ sig.T @ c.hess_H(x)))
    return ito - float(grad @ c.R(x) @ grad)


@dataclass(frozen=True)
class PassivityReport:
    """Both sides of the stopped energy inequality on the time grid."""

    times: np.ndarray
    mean_energy: np.ndarray
    se_energy: np.ndarray
    supply: np.ndarray
    margin: np.ndarray
    margin_se: np.ndarray
    c0_hat: float
    eps: float
    strict: bool
    n_paths: int
    initial_energy: float

    def holds(self, k_sigma: float = 2.0) -> bool:
        """True when the inequality holds within k_sigma at every time."""
        return bool(np.all(self.margin >= -k_sigma * self.margin_se))


def weak_passivity_mc(
    coeffs: CoefficientSet,
    x0: np.ndarray,
    u_fn: Callable[[float], np.ndarray] | None,
    box: CompactBox,
    dt: float,
    horizon: float,
    n_paths: int,
    master_seed: int,
    strict: bool = False,
    eps: float = 0.0,
    system: SdeSystem | None = None,
) -> PassivityReport:
    """Monte-Carlo check of the stopped energy inequality.

    Simulates the SDE induced by the coefficient set, freezes each path at
    its exit time, and compares E[H(X_{t and tau})] against
    H(x0) + E int u^T y ds + (c0_hat + eps) t (additive term dropped when
    strict=True, the r <= -delta regime).  c0_hat is the grid maximum of
    the passivity residual.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    sys = system if system is not None else sde_system_from_coefficients(coeffs)
    with capped_threads():
        times, states, exit_times = simulate_ensemble_stopped_frozen(
            sys, x0, u_fn, dt, horizon, box, master_seed, n_paths
        )
    if np.all(exit_times <= dt):
        raise DiagnosticsError("every path left the box on the first step")
    n_times = len(times)
    flat = states.reshape(-1, coeffs.n)
    energies = np.array([coeffs.H(x) for x in flat]).reshape(n_paths, n_times)
    if u_fn is None:
        supplied = np.zeros((n_paths, n_times))
    else:
        # left-Riemann supply integral, frozen after exit like the state
        rates = np.empty((n_paths, n_times - 1))
        for k in range(n_times - 1):
            u = np.atleast_1d(u_fn(times[k]))
            alive = times[k] < exit_times
            for p in range(n_paths):
                rates[p, k] = float(u @ coeffs.output(states[p, k])) if alive[p] else 0.0
        supplied = np.concatenate(
            [np.zeros((n_paths, 1)), np.cumsum(rates * dt, axis=1)], axis=1
        )
    c0_hat = max(passivity_residual(coeffs, x) for x in box.grid())
    h0 = float(coeffs.H(x0))
    allowance = np.zeros(n_times) if strict else (c0_hat + eps) * times
    # per-path inequality defect, so the SE accounts for energy/supply correlation
    defect = energies - supplied
    mean_defect = defect.mean(axis=0)
    se_defect = defect.std(axis=0, ddof=1) / np.sqrt(n_paths)
    margin = h0 + allowance - mean_defect
    return PassivityReport(
        times=times,
        mean_energy=energies.mean(axis=0),
        se_energy=energies.std(axis=0, ddof=1) / np.sqrt(n_paths),
        supply=supplied.mean(axis=0),
        margin=margin,
        margin_se=se_defect,
        c0_hat=float(c0_hat),
        eps=eps,
        strict=strict,
        n_paths=n_paths,
        initial_energy=h0,
    )


def dynkin_rate_check(
    coeffs: CoefficientSet,
    x0: np.ndarray,
    u_fn: Callable[[float], np.ndarray] | None,
    box: CompactBox,
    dt: float,
    t_small: float,
    n_paths: int,
    master_seed: int,
) -> tuple[float, float, float]:
    """(measured rate, its standard error, generator prediction u^T y + r).

    The measured rate is (E[H(X_{t and tau})] - H(x0)) / t at t = t_small.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    sys = sde_system_from_coefficients(coeffs)
    with capped_threads():
        _, states, _ = simulate_ensemble_stopped_frozen(
            sys, x0, u_fn, dt, t_small, box, master_seed, n_paths
        )
    finals = np.array([coeffs.H(x) for x in states[:, -1]])
    h0 = float(coeffs.H(x0))
    rate = (finals.mean() - h0) / t_small
    se = finals.std(ddof=1) / np.sqrt(n_paths) / t_small
    expected = passivity_residual(coeffs, x0)
    if u_fn is not None:
        expected += float(np.atleast_1d(u_fn(0.0)) @ coeffs.output(x0))
    return float(rate), float(se), float(expected)


# ---------------------------------------------------------------------------
# stability bound (Gronwall estimate for coupled paths)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StabilityReport:
    """Coefficient sup-gaps, Lipschitz estimate, bound and empirical F(T)."""

    alpha: float
    beta: float
    l_hat: float
    horizon: float
    log_bound: float
    bound: float
    empirical_f: float
    n_paths: int

    @property
    def holds(self) -> bool:
        """One-sided check: the proven bound must dominate the estimate."""
        if self.empirical_f == 0.0:
            return True
        return float(np.log(self.empirical_f)) <= self.log_bound


def _drift_map(obj: CoefficientSet | SdeSystem) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(obj, CoefficientSet):
        return lambda x: obj.drift(x)
    return lambda x: obj.drift_fn(0.0, x, None)


def _sigma_map(obj: CoefficientSet | SdeSystem) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(obj, CoefficientSet):
        return obj.sigma
    return obj.diffusion_fn


def _as_system(obj: CoefficientSet | SdeSystem, name: str) -> SdeSystem:
    if isinstance(obj, CoefficientSet):
        return sde_system_from_coefficients(obj, name)
    return obj


def lipschitz_estimate(
    drift_fn: Callable[[np.ndarray], np.ndarray],
    sigma_fn: Callable[[np.ndarray], np.ndarray],
    box: CompactBox,
    neighbor_radius_steps: float = 2.0,
    safety: float = 1.5,
) -> float:
    """Max local difference quotient of (drift, diffusion) over grid pairs.

    Pairs within neighbor_radius_steps grid spacings contribute
    (|b(x)-b(y)| + |sigma(x)-sigma(y)|_F) / |x-y|; the maximum is inflated
    by the safety factor since a finite grid can only under-estimate.
    """
    pts = box.grid()
    spacing = np.linalg.norm((box.upper - box.lower) / (box.grid_points_per_axis - 1))
    radius = neighbor_radius_steps * spacing
    drifts = np.array([drift_fn(x) for x in pts])
    sigmas = np.array([sigma_fn(x) for x in pts])
    pairs = cKDTree(pts).query_pairs(radius, output_type="ndarray")
    if len(pairs) == 0:
        raise DiagnosticsError("grid too coarse: no neighbor pairs within radius")
    i, j = pairs[:, 0], pairs[:, 1]
    dx = np.linalg.norm(pts[i] - pts[j], axis=1)
    db = np.linalg.norm(drifts[i] - drifts[j], axis=1)
    dsig = np.linalg.norm((sigmas[i] - sigmas[j]).reshape(len(pairs), -1), axis=1)
    quot = (db + dsig) / dx
    if not np.isfinite(quot).all():
        raise DiagnosticsError("non-finite difference quotient in Lipschitz estimate")
    return float(quot.max() * safety)


def stability_bound_check(
    truth: CoefficientSet | SdeSystem,
    learned: CoefficientSet | SdeSystem,
    box: CompactBox,
    x0: np.ndarray,
    u_fn: Callable[[float], np.ndarray] | None,
    dt: float,
    horizon: float,
    n_paths: int,
    master_seed: int,
) -> StabilityReport:
    """Empirical F(T) = E[sup |Delta_{t and tau}|^2] against the Gronwall bound.

    alpha and beta are grid sup-gaps of drift and diffusion (Frobenius);
    L is the truth's local Lipschitz estimate.  The bound is evaluated in
    log space because the exponential factor overflows for long horizons;
    the comparison is then one-sided by construction.
    """
    b_t, b_l = _drift_map(truth), _drift_map(learned)
    s_t, s_l = _sigma_map(truth), _sigma_map(learned)
    pts = box.grid()
    alpha = max(float(np.linalg.norm(b_t(x) - b_l(x))) for x in pts)
    beta = max(float(np.linalg.norm(s_t(x) - s_l(x))) for x in pts)
    l_hat = lipschitz_estimate(b_t, s_t, box)
    sys_t = _as_system(truth, "truth")
    sys_l = _as_system(learned, "learned")
    sups = np.empty(n_paths)
    with capped_threads():
        for p in range(n_paths):
            ta, tb, _ = simulate_coupled(sys_t, sys_l, x0, u_fn, dt, horizon, box, master_seed, p)
            gaps = np.linalg.norm(ta.states - tb.states, axis=1)
            sups[p] = gaps.max() ** 2
    empirical_f = float(sups.mean())
    t = horizon
    gap = alpha + beta
    if gap == 0.0:
        log_bound = -np.inf
        bound = 0.0
    else:
        log_bound = (
            np.log(4.0 * t * t + 16.0 * t) + (4.0 * t + 16.0) * l_hat**2 * t + 2.0 * np.log(gap)
        )
        bound = float(np.exp(log_bound)) if log_bound < 700 else np.inf
    return StabilityReport(
        alpha=alpha,
        beta=beta,
        l_hat=l_hat,
        horizon=horizon,
        log_bound=float(log_bound),
        bound=bound,
        empirical_f=empirical_f,
        n_paths=n_paths,
    )


# ---------------------------------------------------------------------------
# approximation report (coefficient gaps + coupled-path quantiles)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UatReport:
    distance: CoefficientDistance
    sup_distance_q50: float
    sup_distance_q90: float
    sup_distance_q99: float
    n_paths: int


def uat_report(
    truth: CoefficientSet,
    learned: CoefficientSet,
    box: CompactBox,
    x0: np.ndarray,
    u_fn: Callable[[float], np.ndarray] | None,
    dt: float,
    horizon: float,
    n_paths: int,
    master_seed: int,
    truth_system: SdeSystem | None = None,
    learned_system: SdeSystem | None = None,
) -> UatReport:
    """Coefficient distance plus coupled-trajectory sup-distance quantiles."""
    dist = coefficient_distance(truth, learned, box)
    sys_t = truth_system if truth_system is not None else sde_system_from_coefficients(truth, "truth")
    sys_l = (
        learned_system if learned_system is not None else sde_system_from_coefficients(learned, "learned")
    )
    sups = np.empty(n_paths)
    with capped_threads():
        for p in range(n_paths):
            ta, tb, _ = simulate_coupled(sys_t, sys_l, x0, u_fn, dt, horizon, box, master_seed, p)
            sups[p] = np.linalg.norm(ta.states - tb.states, axis=1).max()
    q50, q90, q99 = np.quantile(sups, [0.5, 0.9, 0.99])
    return UatReport(dist, float(q50), float(q90), float(q99), n_paths)
