"""SPH-NN model assembly, the three training objectives, and the loop.

A model is a wiring of function approximators into the port-Hamiltonian
drift (J - R) grad H + g u:

* the storage H is either a learned scalar network or a fixed analytic
  storage (the Van der Pol benchmark fixes 0.5 |x|^2 and learns only the
  nonconservative term),
* J is the fixed canonical matrix or a learned skew field A - A^T,
* R is zero, analytic, a learned Gram field D^T D (PSD by construction),
  or a learned symmetric field (sign-indefinite on purpose; see the Van
  der Pol notes in systems.py),
* the diffusion is analytic, or a learned field B for the Gaussian
  negative log-likelihood objective.

Objectives:

* IB / CE: mean squared error between the assembled drift and the
  increment-based / conditional-expectation velocity targets,
* NLL: mean Gaussian negative log density of increments with mean
  drift * dt and covariance B B^T dt + jitter I.

All parameter gradients are closed-form (see mlp.py); in particular the
storage gradient flows through grad H via the mixed second-order pass.
Training is deterministic given the config seed: initialization, shuffling
and batching all derive from it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import mlp
from .runtime import capped_threads
from .data import TransitionDataset, VelocityTargets, ce_targets, ib_targets
from .structure import CoefficientSet, gram_from, skew_from
from .systems import SdeSystem

LOG_2PI = float(np.log(2.0 * np.pi))


class TrainingError(RuntimeError):
    """Non-finite loss or invalid model wiring during training."""


@dataclass(frozen=True)
class AnalyticStorage:
    """Fixed storage function with its derivatives."""

    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    gradient_batch: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"


def quadratic_storage_spec() -> AnalyticStorage:
    return AnalyticStorage(
        value=lambda x: 0.5 * float(np.dot(x, x)),
        gradient=lambda x: np.asarray(x, dtype=np.float64).copy(),
        hessian=lambda x: np.eye(len(x)),
        gradient_batch=lambda x: np.asarray(x, dtype=np.float64).copy(),
        name="quadratic",
    )


@dataclass(frozen=True)
class SphnnSpec:
    """Wiring choices for one SPH-NN model."""

    n: int
    d: int
    m: int
    learn_h: bool = True
    fixed_storage: AnalyticStorage | None = None
    j_source: str = "analytic"  # analytic | learned
    j_matrix: np.ndarray | None = None
    r_source: str = "zero"  # zero | analytic | learned_gram | learned_symmetric
    r_fn: Callable[[np.ndarray], np.ndarray] | None = None
    gram_rows: int = 2
    sigma_source: str = "analytic"  # analytic | learned_b
    sigma_fn: Callable[[np.ndarray], np.ndarray] | None = None
    g_matrix: np.ndarray | None = None
    hidden: tuple[int, ...] = (64, 64)

    def __post_init__(self):
        if self.j_source == "analytic" and self.j_matrix is None:
            object.__setattr__(self, "j_matrix", np.zeros((self.n, self.n)))
        if not self.learn_h and self.fixed_storage is None:
            raise TrainingError("fixed_storage required when the storage is not learned")
        if self.r_source == "analytic" and self.r_fn is None:
            raise TrainingError("analytic r_source requires r_fn")
        if self.sigma_source == "analytic" and self.sigma_fn is None:
            object.__setattr__(self, "sigma_fn", lambda x: np.zeros((self.n, self.d)))
        if self.g_matrix is None:
            object.__setattr__(self, "g_matrix", np.zeros((self.n, self.m)))

    def learned_field_shapes(self) -> dict[str, tuple[int, int]]:
        """Field name -> (rows, cols) of its matrix output (H is 1x1)."""
        shapes: dict[str, tuple[int, int]] = {}
        if self.learn_h:
            shapes["H"] = (1, 1)
        if self.j_source == "learned":
            shapes["A"] = (self.n, self.n)
        if self.r_source == "learned_gram":
            shapes["D"] = (self.gram_rows, self.n)
        elif self.r_source == "learned_symmetric":
            shapes["S"] = (self.n, self.n)
        if self.sigma_source == "learned_b":
            shapes["B"] = (self.n, self.d)
        return shapes


_FIELD_SEED_OFFSET = {"H": 1, "A": 2, "D": 3, "S": 4, "B": 5, "f": 6}


def _field_seed(seed: int, name: str) -> int:
    return int(seed) * 1000003 + _FIELD_SEED_OFFSET[name]


def init_fields(spec: SphnnSpec, seed: int) -> dict[str, mlp.MlpParams]:
    fields = {}
    for name, (rows, cols) in spec.learned_field_shapes().items():
        arch = mlp.Architecture(spec.n, spec.hidden, rows * cols)
        fields[name] = mlp.init_params(arch, _field_seed(seed, name))
    return fields


@dataclass(frozen=True)
class SphnnModel:
    """A spec plus concrete parameters for every learned field."""

    spec: SphnnSpec
    fields: dict[str, mlp.MlpParams] = field(default_factory=dict)

    def __post_init__(self):
        missing = set(self.spec.learned_field_shapes()) - set(self.fields)
        if missing:
            raise TrainingError(f"missing learned fields {sorted(missing)}")

    def with_fields(self, fields: dict[str, mlp.MlpParams]) -> "SphnnModel":
        return replace(self, fields={**self.fields, **fields})

    # -- storage -----------------------------------------------------------
    def hamiltonian(self, x: np.ndarray) -> float:
        if self.spec.learn_h:
            return float(mlp.forward_batch(self.fields["H"], np.asarray(x, np.float64))[0])
        return self.spec.fixed_storage.value(x)

    def grad_h(self, x: np.ndarray) -> np.ndarray:
        return self.grad_h_batch(np.asarray(x, np.float64)[None, :])[0]

    def grad_h_batch(self, x: np.ndarray) -> np.ndarray:
        if self.spec.learn_h:
            return mlp.scalar_gradient_batch(self.fields["H"], x)
        return self.spec.fixed_storage.gradient_batch(np.asarray(x, np.float64))

    def hess_h(self, x: np.ndarray) -> np.ndarray:
        if self.spec.learn_h:
            return mlp.scalar_hessian(self.fields["H"], np.asarray(x, np.float64))
        return self.spec.fixed_storage.hessian(x)

    # -- structure matrices -------------------------------------------------
    def j_batch(self, x: np.ndarray) -> np.ndarray:
        if self.spec.j_source == "analytic":
            return np.broadcast_to(self.spec.j_matrix, (x.shape[0], self.spec.n, self.spec.n))
        a = mlp.MatrixField(self.fields["A"], self.spec.n, self.spec.n).value_batch(x)
        return a - np.transpose(a, (0, 2, 1))

    def r_batch(self, x: np.ndarray) -> np.ndarray:
        n = self.spec.n
        if self.spec.r_source == "zero":
            return np.zeros((x.shape[0], n, n))
        if self.spec.r_source == "analytic":
            return np.stack([self.spec.r_fn(xi) for xi in x])
        if self.spec.r_source == "learned_gram":
            d = mlp.MatrixField(self.fields["D"], self.spec.gram_rows, n).value_batch(x)
            return np.einsum("bri,brj->bij", d, d)
        s = mlp.MatrixField(self.fields["S"], n, n).value_batch(x)
        return 0.5 * (s + np.transpose(s, (0, 2, 1)))

    def j_at(self, x: np.ndarray) -> np.ndarray:
        return self.j_batch(np.asarray(x, np.float64)[None, :])[0]

    def r_at(self, x: np.ndarray) -> np.ndarray:
        return self.r_batch(np.asarray(x, np.float64)[None, :])[0]

    def sigma_at(self, x: np.ndarray) -> np.ndarray:
        if self.spec.sigma_source == "learned_b":
            return mlp.MatrixField(self.fields["B"], self.spec.n, self.spec.d).value(x)
        return self.spec.sigma_fn(np.asarray(x, np.float64))

    def sigma_batch(self, x: np.ndarray) -> np.ndarray:
        if self.spec.sigma_source == "learned_b":
            return mlp.MatrixField(self.fields["B"], self.spec.n, self.spec.d).value_batch(x)
        return np.stack([self.spec.sigma_fn(xi) for xi in x])

    # -- drift ---------------------------------------------------------------
    def drift_batch(self, x: np.ndarray, u: np.ndarray | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        grad = self.grad_h_batch(x)
        if self.spec.j_source == "analytic" and self.spec.r_source == "zero":
            out = grad @ self.spec.j_matrix.T
        else:
            out = np.einsum("bij,bj->bi", self.j_batch(x) - self.r_batch(x), grad)
        if u is not None:
            out = out + np.asarray(u, np.float64) @ self.spec.g_matrix.T
        return out

    def drift(self, x: np.ndarray, u: np.ndarray | None = None) -> np.ndarray:
        ub = None if u is None else np.atleast_1d(np.asarray(u, np.float64))[None, :]
        return self.drift_batch(np.asarray(x, np.float64)[None, :], ub)[0]

    def to_coefficient_set(self) -> CoefficientSet:
        """Wire the learned fields into a coefficient bundle."""
        spec = self.spec
        return CoefficientSet(
            n=spec.n, d=spec.d, m=spec.m,
            H=self.hamiltonian,
            grad_H=self.grad_h,
            hess_H=self.hess_h,
            J=self.j_at,
            R=self.r_at,
            sigma=self.sigma_at,
            g=lambda x: spec.g_matrix,
            provenance="learned",
        )

    def to_sde_system(self, name: str = "learned") -> SdeSystem:
        g = self.spec.g_matrix

        def drift_fn(t, x, u=None):
            return self.drift(x, u)

        def drift_b(t, x, u=None):
            return self.drift_batch(x, u)

        return SdeSystem(
            name=name, n=self.spec.n, d=self.spec.d, m=self.spec.m,
            drift_fn=drift_fn, diffusion_fn=self.sigma_at,
            coefficients=self.to_coefficient_set(),
            drift_batch=drift_b, diffusion_batch=self.sigma_batch,
        )


@dataclass(frozen=True)
class BaselineModel:
    """Unconstrained vector-field MLP with the same architecture budget."""

    params: mlp.MlpParams

    @property
    def n(self) -> int:
        return self.params.arch.input_dim

    def drift_batch(self, x: np.ndarray, u: np.ndarray | None = None) -> np.ndarray:
        return mlp.forward_batch(self.params, x)

    def drift(self, x: np.ndarray, u: np.ndarray | None = None) -> np.ndarray:
        return self.drift_batch(np.asarray(x, np.float64)[None, :])[0]


@dataclass(frozen=True)
class TrainConfig:
    """One training run's knobs; everything that affects bytes is here."""

    objective: str = "IB"  # IB | CE | NLL
    epochs: int = 2000
    batch_size: int = 128
    learning_rate: float = 1e-3
    seed: int = 0
    nll_jitter: float = 1e-6
    ce_neighbors: int = 16
    ce_estimator: str = "knn"
    ce_bandwidth: float | None = None

    def __post_init__(self):
        if self.objective not in ("IB", "CE", "NLL"):
            raise TrainingError(f"unknown objective {self.objective!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise TrainingError("epochs >= 0, batch_size >= 1, learning_rate > 0 required")
        if self.nll_jitter < 0 or self.ce_neighbors < 1:
            raise TrainingError("nll_jitter >= 0 and ce_neighbors >= 1 required")


# ---------------------------------------------------------------------------
# losses (values and closed-form parameter gradients)
# ---------------------------------------------------------------------------

class _BatchWork:
    """Per-batch forward caches and assembled drift pieces for one model."""

    __slots__ = ("model", "x", "caches", "grad_h", "jmr", "d_vals", "pred")

    def __init__(self, model: SphnnModel, x: np.ndarray, u: np.ndarray | None):
        spec = model.spec
        self.model = model
        self.x = x
        self.caches: dict[str, mlp.ForwardCache] = {}
        self.d_vals = None
        if spec.learn_h:
            self.caches["H"] = mlp.ForwardCache(model.fields["H"], x)
            self.grad_h = mlp.scalar_gradient_batch(model.fields["H"], x, self.caches["H"])
        else:
            self.grad_h = spec.fixed_storage.gradient_batch(x)
        if spec.j_source == "analytic" and spec.r_source == "zero":
            self.jmr = None
            pred = self.grad_h @ spec.j_matrix.T
        else:
            j = self._j_batch()
            r = self._r_batch()
            self.jmr = j - r
            pred = np.einsum("bij,bj->bi", self.jmr, self.grad_h)
        if u is not None:
            pred = pred + np.asarray(u, np.float64) @ spec.g_matrix.T
        self.pred = pred

    def _matrix_values(self, name: str, rows: int, cols: int) -> np.ndarray:
        cache = mlp.ForwardCache(self.model.fields[name], self.x)
        self.caches[name] = cache
        return cache.output.reshape(-1, rows, cols)

    def _j_batch(self) -> np.ndarray:
        spec = self.model.spec
        if spec.j_source == "analytic":
            return np.broadcast_to(spec.j_matrix, (self.x.shape[0], spec.n, spec.n))
        a = self._matrix_values("A", spec.n, spec.n)
        return a - np.transpose(a, (0, 2, 1))

    def _r_batch(self) -> np.ndarray:
        spec = self.model.spec
        n = spec.n
        if spec.r_source == "zero":
            return np.zeros((self.x.shape[0], n, n))
        if spec.r_source == "analytic":
            return np.stack([spec.r_fn(xi) for xi in self.x])
        if spec.r_source == "learned_gram":
            self.d_vals = self._matrix_values("D", spec.gram_rows, n)
            return np.einsum("bri,brj->bij", self.d_vals, self.d_vals)
        s = self._matrix_values("S", n, n)
        return 0.5 * (s + np.transpose(s, (0, 2, 1)))

    def param_grads(self, dl_dpred: np.ndarray) -> dict[str, list[np.ndarray]]:
        """Parameter gradients of a loss given its adjoint w.r.t. the drift."""
        spec = self.model.spec
        fields = self.model.fields
        grads: dict[str, list[np.ndarray]] = {}
        if self.jmr is None:
            dl_dgrad = dl_dpred @ spec.j_matrix
        else:
            dl_dgrad = np.einsum("bij,bi->bj", self.jmr, dl_dpred)
        if spec.learn_h:
            grads["H"] = mlp.gradient_param_backward(
                fields["H"], self.x, None, dl_dgrad, self.caches["H"], check=False
            )
        if spec.j_source == "learned" or spec.r_source in ("learned_gram", "learned_symmetric"):
            outer = np.einsum("bi,bj->bij", dl_dpred, self.grad_h)
            outer_t = np.transpose(outer, (0, 2, 1))
            nb = self.x.shape[0]
            if spec.j_source == "learned":
                da = outer - outer_t
                grads["A"] = mlp.value_param_backward(
                    fields["A"], self.x, da.reshape(nb, -1), self.caches["A"]
                )
            if spec.r_source == "learned_gram":
                m_sym = -(outer + outer_t)
                dd = np.einsum("bri,bij->brj", self.d_vals, m_sym)
                grads["D"] = mlp.value_param_backward(
                    fields["D"], self.x, dd.reshape(nb, -1), self.caches["D"]
                )
            elif spec.r_source == "learned_symmetric":
                ds = -0.5 * (outer + outer_t)
                grads["S"] = mlp.value_param_backward(
                    fields["S"], self.x, ds.reshape(nb, -1), self.caches["S"]
                )
        return grads


def velocity_loss(
    model: SphnnModel,
    x: np.ndarray,
    u: np.ndarray | None,
    targets: np.ndarray,
) -> float:
    pred = model.drift_batch(x, u)
    resid = pred - targets
    return float(np.mean(np.sum(resid * resid, axis=1)))


def velocity_loss_and_grads(
    model: SphnnModel,
    x: np.ndarray,
    u: np.ndarray | None,
    targets: np.ndarray,
) -> tuple[float, dict[str, list[np.ndarray]]]:
    work = _BatchWork(model, np.asarray(x, np.float64), u)
    resid = work.pred - targets
    loss = float(np.mean(np.sum(resid * resid, axis=1)))
    dl_dpred = 2.0 * resid / x.shape[0]
    return loss, work.param_grads(dl_dpred)


def loss_ib(model: SphnnModel, x, u, targets: VelocityTargets) -> float:
    """Mean squared gap between drift and increment-based targets."""
    if targets.kind != "IB":
        raise TrainingError(f"loss_ib expects IB targets, got {targets.kind}")
    return velocity_loss(model, x, u, targets.values)


def loss_ce(model: SphnnModel, x, u, targets: VelocityTargets) -> float:
    """Mean squared gap between drift and conditional-expectation targets."""
    if targets.kind != "CE":
        raise TrainingError(f"loss_ce expects CE targets, got {targets.kind}")
    return velocity_loss(model, x, u, targets.values)


def _gaussian_pieces(sigma: np.ndarray, err: np.ndarray, jitter: float):
    """(alpha = Sigma^{-1} err, logdet, Sigma^{-1}) for a PD batch.

    The 2x2 case (every shipped benchmark) is closed form; larger n falls
    back to batched LAPACK.
    """
    n = sigma.shape[-1]
    if n == 2:
        a, b, c = sigma[:, 0, 0], sigma[:, 0, 1], sigma[:, 1, 1]
        det = a * c - b * b
        if np.any(det <= 0) or np.any(a <= 0):
            raise TrainingError(f"covariance solve failure after jitter {jitter}")
        inv = np.empty_like(sigma)
        inv[:, 0, 0] = c / det
        inv[:, 1, 1] = a / det
        inv[:, 0, 1] = inv[:, 1, 0] = -b / det
        alpha = np.einsum("bij,bj->bi", inv, err)
        return alpha, np.log(det), inv
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise TrainingError(f"covariance solve failure after jitter {jitter}: {exc}") from exc
    alpha = np.linalg.solve(sigma, err[..., None])[..., 0]
    logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
    inv = np.linalg.solve(sigma, np.broadcast_to(np.eye(n), sigma.shape).copy())
    return alpha, logdet, inv


def _nll_terms(work: _BatchWork, x_next: np.ndarray, dt: float, jitter: float):
    model = work.model
    if model.spec.sigma_source != "learned_b":
        raise TrainingError("loss_nll requires a learned diffusion field B")
    n, d = model.spec.n, model.spec.d
    cache_b = mlp.ForwardCache(model.fields["B"], work.x)
    work.caches["B"] = cache_b
    b_vals = cache_b.output.reshape(-1, n, d)
    sigma = np.einsum("bik,bjk->bij", b_vals, b_vals) * dt + jitter * np.eye(n)
    err = (x_next - work.x) - work.pred * dt
    alpha, logdet, inv = _gaussian_pieces(sigma, err, jitter)
    per_sample = 0.5 * (n * LOG_2PI + logdet + np.einsum("bi,bi->b", err, alpha))
    return per_sample, alpha, inv, b_vals


def loss_nll(
    model: SphnnModel, x, x_next, u, dt: float, jitter: float = 1e-6
) -> float:
    """Mean Gaussian negative log density of increments."""
    work = _BatchWork(model, np.asarray(x, np.float64), u)
    per_sample, *_ = _nll_terms(work, np.asarray(x_next, np.float64), dt, jitter)
    return float(per_sample.mean())


def nll_loss_and_grads(
    model: SphnnModel, x, x_next, u, dt: float, jitter: float = 1e-6
) -> tuple[float, dict[str, list[np.ndarray]]]:
    x = np.asarray(x, np.float64)
    nb = x.shape[0]
    work = _BatchWork(model, x, u)
    per_sample, alpha, sigma_inv, b_vals = _nll_terms(
        work, np.asarray(x_next, np.float64), dt, jitter
    )
    loss = float(per_sample.mean())
    grads = work.param_grads(-alpha * dt / nb)
    dl_dsigma = 0.5 * (sigma_inv - np.einsum("bi,bj->bij", alpha, alpha)) / nb
    dl_db = 2.0 * np.einsum("bij,bjk->bik", dl_dsigma, b_vals) * dt
    grads["B"] = mlp.value_param_backward(
        model.fields["B"], x, dl_db.reshape(nb, -1), work.caches["B"]
    )
    return loss, grads


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

def _shuffle_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=((int(seed) ^ 0xA5A5A5A5) << 64) + 17))


class _FusedAdam:
    """In-place bias-corrected Adam over all fields' flattened parameters.

    Elementwise identical to mlp.adam_step per field; one vector update per
    batch instead of one per field.  Field order is sorted by name so the
    packing is deterministic.
    """

    def __init__(self, fields: dict[str, mlp.MlpParams], lr: float):
        self.order = sorted(fields)
        self.archs = {name: fields[name].arch for name in self.order}
        self.slices: dict[str, list[tuple[slice, tuple[int, ...]]]] = {}
        pos = 0
        chunks = []
        for name in self.order:
            spans = []
            for a in fields[name].arrays():
                spans.append((slice(pos, pos + a.size), a.shape))
                pos += a.size
                chunks.append(np.ravel(a))
            self.slices[name] = spans
        self.theta = np.concatenate(chunks)
        self.m = np.zeros_like(self.theta)
        self.v = np.zeros_like(self.theta)
        self.lr = lr
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8
        self.t = 0

    def fields_view(self) -> dict[str, mlp.MlpParams]:
        """Parameter objects whose arrays alias the flat buffer."""
        out = {}
        for name in self.order:
            arrays = [self.theta[s].reshape(shape) for s, shape in self.slices[name]]
            out[name] = mlp.MlpParams._wrap_fresh(self.archs[name], arrays)
        return out

    def final_fields(self) -> dict[str, mlp.MlpParams]:
        """Detached (copied, validated) parameters for the returned model."""
        out = {}
        for name in self.order:
            arrays = [self.theta[s].reshape(shape).copy() for s, shape in self.slices[name]]
            out[name] = mlp.MlpParams.from_arrays(self.archs[name], arrays)
        return out

    def step(self, grads: dict[str, list[np.ndarray]]) -> None:
        g = np.concatenate([np.ravel(a) for name in self.order for a in grads[name]])
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * g
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * (g * g)
        denom = np.sqrt(self.v / (1.0 - self.beta2**self.t))
        denom += self.eps
        self.theta -= self.lr * (self.m / (1.0 - self.beta1**self.t)) / denom


def build_targets(ds: TransitionDataset, cfg: TrainConfig) -> VelocityTargets | None:
    if cfg.objective == "IB":
        return ib_targets(ds)
    if cfg.objective == "CE":
        return ce_targets(ds, cfg.ce_neighbors, cfg.ce_estimator, cfg.ce_bandwidth)
    return None


def train(
    ds: TransitionDataset, spec: SphnnSpec, cfg: TrainConfig
) -> tuple[SphnnModel, np.ndarray]:
    """Fit an SPH-NN on a transition dataset; returns (model, loss history).

    Deterministic in (ds, spec, cfg): initialization, batching and shuffling
    all derive from cfg.seed.  History holds the per-epoch mean batch loss.
    """
    if len(ds) == 0:
        raise TrainingError("cannot train on an empty dataset")
    if cfg.objective == "NLL" and spec.sigma_source != "learned_b":
        spec = replace(spec, sigma_source="learned_b")
    model = SphnnModel(spec, init_fields(spec, cfg.seed))
    targets = build_targets(ds, cfg)
    u = ds.u if np.any(ds.u) else None

    def batch_loss(mdl: SphnnModel, sel: np.ndarray):
        if cfg.objective == "NLL":
            return nll_loss_and_grads(
                mdl, ds.x[sel], ds.x_next[sel], None if u is None else u[sel],
                ds.dt, cfg.nll_jitter,
            )
        return velocity_loss_and_grads(
            mdl, ds.x[sel], None if u is None else u[sel], targets.values[sel]
        )

    with capped_threads():
        return _run_adam(model, batch_loss, len(ds), cfg)


def baseline_train(ds: TransitionDataset, cfg: TrainConfig, hidden=(64, 64)) -> tuple[BaselineModel, np.ndarray]:
    """Fit the unconstrained MLP baseline on IB targets."""
    if len(ds) == 0:
        raise TrainingError("cannot train on an empty dataset")
    targets = ib_targets(ds).values
    arch = mlp.Architecture(ds.n, hidden, ds.n)
    params = mlp.init_params(arch, _field_seed(cfg.seed, "f"))
    opt = _FusedAdam({"f": params}, cfg.learning_rate)
    live = opt.fields_view()["f"]
    rng = _shuffle_rng(cfg.seed)
    history = []
    with capped_threads():
        for epoch in range(cfg.epochs):
            perm = rng.permutation(len(ds))
            total = 0.0
            for start in range(0, len(ds), cfg.batch_size):
                sel = perm[start : start + cfg.batch_size]
                xb = ds.x[sel]
                cache = mlp.ForwardCache(live, xb)
                resid = cache.output - targets[sel]
                loss = float(np.mean(np.sum(resid * resid, axis=1)))
                if not np.isfinite(loss):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}"
                    )
                grads = mlp.value_param_backward(live, xb, 2.0 * resid / len(sel), cache)
                opt.step({"f": grads})
                total += loss * len(sel)
            history.append(total / len(ds))
    return BaselineModel(opt.final_fields()["f"]), np.array(history)


def _run_adam(
    model: SphnnModel, batch_loss, n_samples: int, cfg: TrainConfig
) -> tuple[SphnnModel, np.ndarray]:
    if not model.fields:
        raise TrainingError("model has no learned fields to train")
    opt = _FusedAdam(model.fields, cfg.learning_rate)
    live = model.with_fields(opt.fields_view())
    rng = _shuffle_rng(cfg.seed)
    history = []
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n_samples)
        total = 0.0
        for start in range(0, n_samples, cfg.batch_size):
            sel = perm[start : start + cfg.batch_size]
            loss, grads = batch_loss(live, sel)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}")
            opt.step(grads)
            total += loss * len(sel)
        history.append(total / n_samples)
    return model.with_fields(opt.final_fields()), np.array(history)
