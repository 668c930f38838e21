"""Seeded Euler-Maruyama simulation: single paths, ensembles, stopped and
coupled processes.

Reproducibility contract
------------------------
Path ``i`` of a run with master seed ``s`` consumes the normal draws

    Generator(Philox(key = (s << 64) + i)).standard_normal((n_steps, d))

Philox is counter-based, so ensembles are reproducible regardless of
execution order or batching; numpy's ziggurat sampler turns the fixed bit
stream into a fixed normal sequence.  The whole noise matrix for a path is
generated up front, which makes path-wise and vectorized simulation consume
bit-identical numbers.

Stopped processes record only in-box states (exit is detected on the grid;
the first out-of-box state is kept aside as ``exit_state``), and downstream
expectations freeze a stopped path at its last in-box state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .structure import CompactBox
from .systems import SdeSystem

_X0_SALT = 0x5DEECE66D


class SimulationError(RuntimeError):
    """Non-finite state during integration; message carries (step, t, x)."""


def noise_matrix(master_seed: int, path_index: int, n_steps: int, d: int) -> np.ndarray:
    """The canonical (n_steps, d) standard-normal block for one path."""
    key = ((int(master_seed) & ((1 << 64) - 1)) << 64) + (int(path_index) & ((1 << 64) - 1))
    gen = np.random.Generator(np.random.Philox(key=key))
    return gen.standard_normal((n_steps, d))


def uniform_initial_states(
    lower: np.ndarray, upper: np.ndarray, master_seed: int, n_paths: int
) -> np.ndarray:
    """Per-path uniform draws from a box, on a salted stream of their own."""
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    key = (((int(master_seed) ^ _X0_SALT) & ((1 << 64) - 1)) << 64) + 1
    gen = np.random.Generator(np.random.Philox(key=key))
    return gen.uniform(lower, upper, size=(n_paths, lower.shape[0]))


def n_grid_steps(dt: float, horizon: float) -> int:
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    n = int(round(horizon / dt))
    if abs(n * dt - horizon) > 1e-9 * max(1.0, abs(horizon)):
        raise ValueError(f"horizon {horizon} is not an integer multiple of dt {dt}")
    return n


@dataclass(frozen=True)
class Trajectory:
    """One simulated path on a uniform grid times[k] = k dt."""

    dt: float
    times: np.ndarray
    states: np.ndarray
    master_seed: int
    path_index: int
    exit_time: float | None = None
    exit_state: np.ndarray | None = None

    def __post_init__(self):
        if len(self.times) != len(self.states):
            raise ValueError("times and states must have equal length")

    @property
    def n_states(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class Ensemble:
    """Paths sharing dt, horizon and system, with distinct path indices."""

    trajectories: tuple[Trajectory, ...]

    def __post_init__(self):
        dts = {t.dt for t in self.trajectories}
        if len(dts) > 1:
            raise ValueError(f"ensemble mixes time steps {sorted(dts)}")
        idx = [t.path_index for t in self.trajectories]
        if len(set(idx)) != len(idx):
            raise ValueError("ensemble path indices must be distinct")

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    @property
    def dt(self) -> float:
        return self.trajectories[0].dt


def em_step(
    sys: SdeSystem,
    t: float,
    x: np.ndarray,
    u: np.ndarray | None,
    dt: float,
    z: np.ndarray,
) -> np.ndarray:
    """x + b(t, x, u) dt + sigma(x) sqrt(dt) z."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape != (sys.n,) or z.shape != (sys.d,):
        raise ValueError(f"state/noise shapes {x.shape}/{z.shape} mismatch system ({sys.n},{sys.d})")
    out = x + sys.drift_fn(t, x, u) * dt + sys.diffusion_fn(x) @ z * np.sqrt(dt)
    if not np.isfinite(out).all():
        raise SimulationError(f"non-finite state after step at t={t}, x={x}")
    return out


def _run_path(
    sys: SdeSystem,
    x0: np.ndarray,
    u_fn: Callable[[float], np.ndarray] | None,
    dt: float,
    horizon: float,
    master_seed: int,
    path_index: int,
    box: CompactBox | None,
) -> Trajectory:
    n_steps = n_grid_steps(dt, horizon)
    x = np.asarray(x0, dtype=np.float64).copy()
    if box is not None and not box.contains(x):
        raise ValueError(f"initial state {x} lies outside the stopping box")
    z = noise_matrix(master_seed, path_index, n_steps, sys.d)
    states = [x]
    exit_time = None
    exit_state = None
    for k in range(n_steps):
        t = k * dt
        u = u_fn(t) if u_fn is not None else None
        try:
            x = em_step(sys, t, x, u, dt, z[k])
        except SimulationError as err:
            raise SimulationError(f"step {k}: {err}") from err
        if box is not None and not box.contains(x):
            exit_time = (k + 1) * dt
            exit_state = x
            break
        states.append(x)
    arr = np.array(states)
    times = np.arange(arr.shape[0]) * dt
    return Trajectory(dt, times, arr, master_seed, path_index, exit_time, exit_state)


def simulate(
    sys: SdeSystem,
    x0: np.ndarray,
    u_fn: Callable[[float], np.ndarray] | None,
    dt: float,
    horizon: float,
    master_seed: int,
    path_index: int = 0,
) -> Trajectory:
    """Euler-Maruyama path on [0, horizon]; pure in all of its arguments."""
    return _run_path(sys, x0, u_fn, dt, horizon, master_seed, path_index, box=None)


def simulate_stopped(
    sys: SdeSystem,
    x0: np.ndarray,
    u_fn: Callable[[float], np.ndarray] | None,
    dt: float,
    horizon: float,
    box: CompactBox,
    master_seed: int,
    path_index: int = 0,
) -> Trajectory:
    """Path halted at the first grid time the state leaves the closed box."""
    return _run_path(sys, x0, u_fn, dt, horizon, master_seed, path_index, box=box)


def simulate_coupled(
    sys_a: SdeSystem,
    sys_b: SdeSystem,
    x0: np.ndarray,
    u_fn: Callable[[float], np.ndarray] | None,
    dt: float,
    horizon: float,
    box: CompactBox,
    master_seed: int,
    path_index: int = 0,
) -> tuple[Trajectory, Trajectory, float | None]:
    """Two systems driven by the identical normal-draw sequence.

    Integration halts at the joint exit time (first grid time either path
    leaves the box); both returned trajectories are truncated there.
    """
    if (sys_a.n, sys_a.d) != (sys_b.n, sys_b.d):
        raise ValueError("coupled systems must share state and noise dimensions")
    n_steps = n_grid_steps(dt, horizon)
    xa = np.asarray(x0, dtype=np.float64).copy()
    xb = xa.copy()
    if not box.contains(xa):
        raise ValueError(f"initial state {xa} lies outside the box")
    z = noise_matrix(master_seed, path_index, n_steps, sys_a.d)
    states_a, states_b = [xa], [xb]
    joint_exit = None
    exit_a = exit_b = None
    for k in range(n_steps):
        t = k * dt
        u = u_fn(t) if u_fn is not None else None
        xa = em_step(sys_a, t, xa, u, dt, z[k])
        xb = em_step(sys_b, t, xb, u, dt, z[k])
        if not (box.contains(xa) and box.contains(xb)):
            joint_exit = (k + 1) * dt
            exit_a, exit_b = xa, xb
            break
        states_a.append(xa)
        states_b.append(xb)
    arr_a, arr_b = np.array(states_a), np.array(states_b)
    times = np.arange(arr_a.shape[0]) * dt
    traj_a = Trajectory(dt, times, arr_a, master_seed, path_index, joint_exit, exit_a)
    traj_b = Trajectory(dt, times, arr_b, master_seed, path_index, joint_exit, exit_b)
    return traj_a, traj_b, joint_exit


def simulate_ensemble(
    sys: SdeSystem,
    x0: np.ndarray,
    u_fn: Callable[[float], np.ndarray] | None,
    dt: float,
    horizon: float,
    master_seed: int,
    n_paths: int,
    path_offset: int = 0,
) -> Ensemble:
    """Independent paths path_offset .. path_offset + n_paths - 1.

    ``x0`` may be a single state (shared) or an (n_paths, n) array of
    per-path initial states.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim == 1:
        x0 = np.broadcast_to(x0, (n_paths, sys.n))
    trajs = [
        simulate(sys, x0[i], u_fn, dt, horizon, master_seed, path_offset + i)
        for i in range(n_paths)
    ]
    return Ensemble(tuple(trajs))


def simulate_ensemble_stopped_frozen(
    sys: SdeSystem,
    x0: np.ndarray,
    u_fn: Callable[[float], np.ndarray] | None,
    dt: float,
    horizon: float,
    box: CompactBox,
    master_seed: int,
    n_paths: int,
    path_offset: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized stopped ensemble frozen at exit, for expectation estimates.

    Returns (times (N+1,), states (P, N+1, n), exit_times (P,)).  A stopped
    path keeps its last in-box state for the rest of the grid; exit_times
    holds inf for paths that never leave.  Per-path noise is identical to
    the path-wise simulators.
    """
    n_steps = n_grid_steps(dt, horizon)
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim == 1:
        x0 = np.broadcast_to(x0, (n_paths, sys.n)).copy()
    if not np.all(box.contains_batch(x0)):
        raise ValueError("all initial states must lie inside the box")
    noise = np.stack(
        [noise_matrix(master_seed, path_offset + i, n_steps, sys.d) for i in range(n_paths)]
    )
    states = np.empty((n_paths, n_steps + 1, sys.n))
    states[:, 0] = x0
    exit_times = np.full(n_paths, np.inf)
    alive = np.ones(n_paths, dtype=bool)
    x = x0.copy()
    sqdt = np.sqrt(dt)
    use_batch = sys.drift_batch is not None and sys.diffusion_batch is not None
    for k in range(n_steps):
        t = k * dt
        u = u_fn(t) if u_fn is not None else None
        if not alive.any():
            states[:, k + 1] = x
            continue
        if use_batch:
            ub = None if u is None else np.broadcast_to(u, (n_paths, sys.m))
            prop = x + sys.drift_batch(t, x, ub) * dt + np.einsum(
                "pij,pj->pi", sys.diffusion_batch(x), noise[:, k]
            ) * sqdt
        else:
            prop = x.copy()
            for i in np.flatnonzero(alive):
                prop[i] = x[i] + sys.drift_fn(t, x[i], u) * dt + sys.diffusion_fn(
                    x[i]
                ) @ noise[i, k] * sqdt
        if not np.isfinite(prop[alive]).all():
            raise SimulationError(f"non-finite ensemble state at step {k}")
        inside = box.contains_batch(prop)
        stepped = alive & inside
        exiting = alive & ~inside
        x[stepped] = prop[stepped]
        exit_times[exiting] = (k + 1) * dt
        alive = stepped
        states[:, k + 1] = x
    times = np.arange(n_steps + 1) * dt
    return times, states, exit_times


# ---------------------------------------------------------------------------
# trajectory CSV (header t,x1,...,xn; 17 significant digits)
# ---------------------------------------------------------------------------

def save_trajectory_csv(traj: Trajectory, path) -> None:
    n = traj.states.shape[1]
    header = "t," + ",".join(f"x{i + 1}" for i in range(n))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for t, row in zip(traj.times, traj.states):
            fh.write(f"{t:.17g}," + ",".join(f"{v:.17g}" for v in row) + "\n")


def load_trajectory_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if not header or header[0] != "t":
            raise ValueError(f"{path}: expected trajectory header starting with 't'")
        rows = [[float(v) for v in line.split(",")] for line in fh if line.strip()]
    arr = np.array(rows)
    return arr[:, 0], arr[:, 1:]
