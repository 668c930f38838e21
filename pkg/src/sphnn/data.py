"""Supervised targets from simulated trajectories.

Transitions are consecutive state pairs (x_k, x_{k+1}) with their step size
and input.  Velocity targets come in two flavors:

* increment-based (IB): (x_{k+1} - x_k) / dt, the raw one-step velocity;
* conditional-expectation (CE): the local average of IB targets over the
  k nearest states, a plug-in estimate of E[(X_{t+dt}-X_t)/dt | X_t = x].

The CE neighborhood includes the query point itself and breaks exact
distance ties by original index order, so target construction is fully
deterministic.  A Gaussian-kernel Nadaraya-Watson estimator is available as
a config-selectable alternative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .sde import Ensemble


class DatasetError(ValueError):
    """Malformed dataset contents or files."""


@dataclass(frozen=True)
class TransitionDataset:
    """(x_k, x_{k+1}, dt, u_k) tuples with uniform dt."""

    x: np.ndarray
    x_next: np.ndarray
    dt: float
    u: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, arr in (("x", self.x), ("x_next", self.x_next), ("u", self.u)):
            arr = np.asarray(arr, dtype=np.float64)
            object.__setattr__(self, name, arr)
            if arr.ndim != 2:
                raise DatasetError(f"{name} must be 2-d, got shape {arr.shape}")
            if not np.isfinite(arr).all():
                raise DatasetError(f"non-finite entries in {name}")
        if self.x.shape != self.x_next.shape:
            raise DatasetError("x and x_next shapes differ")
        if self.u.shape[0] != self.x.shape[0]:
            raise DatasetError("u row count differs from x")
        if self.dt <= 0:
            raise DatasetError(f"dt must be positive, got {self.dt}")

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def m(self) -> int:
        return self.u.shape[1]


@dataclass(frozen=True)
class VelocityTargets:
    """Per-transition velocity targets of one kind."""

    values: np.ndarray
    kind: str
    ce_neighbors: int | None = None

    def __post_init__(self):
        if self.kind not in ("IB", "CE"):
            raise DatasetError(f"unknown target kind {self.kind!r}")


def extract_transitions(trajs: Ensemble, u_fn=None, meta: dict | None = None) -> TransitionDataset:
    """Consecutive-pair tuples from every path of an ensemble."""
    xs, xns, us = [], [], []
    dt = None
    m = 1
    for traj in trajs:
        if dt is None:
            dt = traj.dt
        elif traj.dt != dt:
            raise DatasetError(f"mixed time steps {dt} and {traj.dt}")
        if traj.n_states < 2:
            continue
        xs.append(traj.states[:-1])
        xns.append(traj.states[1:])
        t_k = traj.times[:-1]
        if u_fn is None:
            us.append(np.zeros((len(t_k), m)))
        else:
            u_rows = np.array([np.atleast_1d(u_fn(t)) for t in t_k], dtype=np.float64)
            m = u_rows.shape[1]
            us.append(u_rows)
    if not xs:
        n = trajs.trajectories[0].states.shape[1] if len(trajs) else 0
        return TransitionDataset(
            np.zeros((0, n)), np.zeros((0, n)), trajs.dt if len(trajs) else 1.0,
            np.zeros((0, m)), meta or {},
        )
    return TransitionDataset(
        np.concatenate(xs), np.concatenate(xns), float(dt), np.concatenate(us), meta or {}
    )


def ib_targets(ds: TransitionDataset) -> VelocityTargets:
    """Raw increment velocities (x_{k+1} - x_k) / dt."""
    return VelocityTargets((ds.x_next - ds.x) / ds.dt, "IB")


def ce_targets(
    ds: TransitionDataset,
    k_neighbors: int,
    estimator: str = "knn",
    bandwidth: float | None = None,
) -> VelocityTargets:
    """Locally averaged increment velocities.

    estimator "knn": plain mean over the k nearest states (self included,
    distance ties broken by original index).  estimator "nadaraya_watson":
    Gaussian-kernel weighted mean over the whole dataset with the given
    bandwidth (defaults to the mean k-th neighbor distance).
    """
    if len(ds) == 0:
        raise DatasetError("cannot build CE targets from an empty dataset")
    if not 1 <= k_neighbors <= len(ds):
        raise DatasetError(f"k_neighbors must be in [1, {len(ds)}], got {k_neighbors}")
    ib = ib_targets(ds).values
    tree = cKDTree(ds.x)
    dist = tree.query(ds.x, k=k_neighbors)[0]
    dist = dist.reshape(len(ds), k_neighbors)
    if estimator == "knn":
        out = np.empty_like(ds.x)
        for i in range(len(ds)):
            sel = _knn_indices(tree, ds.x, ds.x[i], float(dist[i, -1]), k_neighbors)
            out[i] = ib[sel].mean(axis=0)
        return VelocityTargets(out, "CE", ce_neighbors=k_neighbors)
    if estimator == "nadaraya_watson":
        h = bandwidth if bandwidth is not None else max(float(dist[:, -1].mean()), 1e-12)
        out = np.empty_like(ds.x)
        for start in range(0, len(ds), 512):  # chunked to bound the kernel matrix
            chunk = ds.x[start : start + 512]
            diff = chunk[:, None, :] - ds.x[None, :, :]
            w = np.exp(-0.5 * np.sum(diff * diff, axis=-1) / (h * h))
            out[start : start + 512] = (w @ ib) / w.sum(axis=1, keepdims=True)
        return VelocityTargets(out, "CE", ce_neighbors=k_neighbors)
    raise DatasetError(f"unknown CE estimator {estimator!r}")


def _knn_indices(
    tree: cKDTree, data: np.ndarray, query: np.ndarray, d_max: float, k: int
) -> np.ndarray:
    """k nearest indices ordered by (distance, original index).

    Candidates come from a slightly inflated ball at the k-th neighbor
    distance, then are re-ranked with one consistent distance computation,
    which makes exact ties resolve by smallest index regardless of kd-tree
    internals.
    """
    cand = np.asarray(tree.query_ball_point(query, d_max * (1.0 + 1e-9) + 1e-300))
    dc = np.linalg.norm(data[cand] - query, axis=1)
    order = np.lexsort((cand, dc))
    return cand[order][:k]


# ---------------------------------------------------------------------------
# CSV persistence: header xk_1..xk_n,xn_1..xn_n,dt,u_1..u_m
# ---------------------------------------------------------------------------

def save_dataset(ds: TransitionDataset, path) -> None:
    n, m = ds.n, ds.m
    header = (
        ",".join(f"xk_{i + 1}" for i in range(n))
        + ","
        + ",".join(f"xn_{i + 1}" for i in range(n))
        + ",dt,"
        + ",".join(f"u_{i + 1}" for i in range(m))
    )
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for xk, xn, u in zip(ds.x, ds.x_next, ds.u):
            row = list(xk) + list(xn) + [ds.dt] + list(u)
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def load_dataset(path, meta: dict | None = None) -> TransitionDataset:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        n = sum(1 for h in header if h.startswith("xk_"))
        m = sum(1 for h in header if h.startswith("u_"))
        if n == 0 or "dt" not in header or m == 0:
            raise DatasetError(f"{path}:1: unrecognized dataset header")
        xs, xns, us = [], [], []
        dts = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.strip().split(",")
            if len(parts) != 2 * n + 1 + m:
                raise DatasetError(f"{path}:{lineno}: expected {2 * n + 1 + m} fields")
            try:
                vals = [float(v) for v in parts]
            except ValueError as err:
                raise DatasetError(f"{path}:{lineno}: {err}") from err
            if not np.isfinite(vals).all():
                raise DatasetError(f"{path}:{lineno}: non-finite value")
            xs.append(vals[:n])
            xns.append(vals[n : 2 * n])
            dts.append(vals[2 * n])
            us.append(vals[2 * n + 1 :])
    if not xs:
        return TransitionDataset(np.zeros((0, n)), np.zeros((0, n)), 1.0, np.zeros((0, m)), meta or {})
    dt0 = dts[0]
    for lineno, dt in enumerate(dts, start=2):
        if dt != dt0:
            raise DatasetError(f"{path}:{lineno}: non-uniform dt ({dt} vs {dt0})")
    return TransitionDataset(np.array(xs), np.array(xns), dt0, np.array(us), meta or {})
