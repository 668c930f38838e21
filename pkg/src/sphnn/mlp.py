"""Tanh multilayer perceptrons with closed-form input and parameter derivatives.

Everything downstream needs three derivative flavors of a small MLP:

* gradient and Hessian of a scalar network with respect to its *input*
  (the learned energy enters the dynamics through its gradient, and the
  noise-injection rate through its Hessian),
* gradients with respect to the *parameters* of objectives that contain
  such input-gradients (a mixed second-order quantity).

Because the architecture is fixed (affine layers, tanh hidden activations,
linear output), all of these are written out as explicit recursions instead
of relying on an autodiff framework:

* input gradient: reverse sweep through ``diag(1 - a^2) W`` factors,
* input Hessian: forward propagation of first and second derivative
  tensors per layer,
* parameter gradient of ``sum_k [ w_k H(x_k) + c_k . grad H(x_k) ]``:
  a forward tangent pass in direction ``c_k`` followed by a reverse sweep
  over the doubled (value, tangent) computation.

All arithmetic is float64.  Parameter containers are immutable; every
operation here is a pure function, so concurrent evaluation is safe.
The optimizer state is the only mutable-by-replacement object and is owned
by a single training loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

PARAMS_FORMAT_TAG = "sphnn-params-v1"


class ShapeError(ValueError):
    """Input or parameter dimensions do not match the architecture."""


class NonFiniteError(ArithmeticError):
    """A NaN or infinity appeared; the message names the offending layer."""


def tanh_derivatives(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First and second derivative of tanh expressed through its value a."""
    d1 = 1.0 - a * a
    return d1, -2.0 * a * d1


@dataclass(frozen=True)
class Architecture:
    """Shape descriptor for a fully connected tanh network."""

    input_dim: int
    hidden_widths: tuple[int, ...] = (64, 64)
    output_dim: int = 1
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        dims = (self.input_dim, *self.hidden_widths, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ShapeError(f"all dimensions must be >= 1, got {dims}")
        if self.activation != "tanh":
            raise ShapeError(f"unsupported activation {self.activation!r}")

    @property
    def layer_dims(self) -> tuple[tuple[int, int], ...]:
        """(fan_in, fan_out) per affine layer, input to output."""
        dims = (self.input_dim, *self.hidden_widths, self.output_dim)
        return tuple(zip(dims[:-1], dims[1:]))


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class MlpParams:
    """Immutable weight/bias stack conforming to an Architecture.

    ``weights[l]`` has shape (fan_out, fan_in); ``biases[l]`` has shape
    (fan_out,).  Construction validates the shape chain and finiteness.
    """

    arch: Architecture
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(_freeze(w) for w in self.weights))
        object.__setattr__(self, "biases", tuple(_freeze(b) for b in self.biases))
        expected = self.arch.layer_dims
        if len(self.weights) != len(expected) or len(self.biases) != len(expected):
            raise ShapeError(f"expected {len(expected)} layers, got {len(self.weights)}")
        for ell, (fan_in, fan_out) in enumerate(expected):
            if self.weights[ell].shape != (fan_out, fan_in):
                raise ShapeError(
                    f"layer {ell} weight shape {self.weights[ell].shape}, "
                    f"expected {(fan_out, fan_in)}"
                )
            if self.biases[ell].shape != (fan_out,):
                raise ShapeError(
                    f"layer {ell} bias shape {self.biases[ell].shape}, expected {(fan_out,)}"
                )
            if not np.isfinite(self.weights[ell]).all() or not np.isfinite(self.biases[ell]).all():
                raise NonFiniteError(f"non-finite parameter in layer {ell}")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def arrays(self) -> list[np.ndarray]:
        """Flat [W0, b0, W1, b1, ...] view used by the optimizer."""
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @staticmethod
    def from_arrays(arch: Architecture, arrays: list[np.ndarray]) -> "MlpParams":
        ws = tuple(arrays[0::2])
        bs = tuple(arrays[1::2])
        return MlpParams(arch, ws, bs)

    @staticmethod
    def _wrap_fresh(arch: Architecture, arrays: list[np.ndarray]) -> "MlpParams":
        """Wrap freshly computed arrays without copying or re-validating.

        Optimizer-internal fast path: the arrays were just produced by the
        update formula, are un-aliased, and the training loop already
        checks loss finiteness every batch.
        """
        obj = object.__new__(MlpParams)
        for a in arrays:
            a.setflags(write=False)
        object.__setattr__(obj, "arch", arch)
        object.__setattr__(obj, "weights", tuple(arrays[0::2]))
        object.__setattr__(obj, "biases", tuple(arrays[1::2]))
        return obj


def init_params(arch: Architecture, seed: int) -> MlpParams:
    """Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases."""
    rng = np.random.Generator(np.random.Philox(key=int(seed) & ((1 << 128) - 1)))
    ws, bs = [], []
    for fan_in, fan_out in arch.layer_dims:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        bs.append(np.zeros(fan_out))
    return MlpParams(arch, tuple(ws), tuple(bs))


def zeros_like_params(params: MlpParams) -> list[np.ndarray]:
    return [np.zeros_like(a) for a in params.arrays()]


# ---------------------------------------------------------------------------
# batched primitives (X has shape (B, input_dim))
# ---------------------------------------------------------------------------

def _as_batch(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.arch.input_dim:
        raise ShapeError(f"input shape {x.shape} incompatible with input_dim {params.arch.input_dim}")
    if not np.isfinite(x).all():
        raise NonFiniteError("non-finite network input")
    return x, single


class ForwardCache:
    """Per-batch activations, tanh derivative factors, and gradient chain.

    Shared between the value, input-gradient and parameter-gradient passes
    so each batch runs the expensive tanh evaluations exactly once.  The
    lazily built gradient chain (qs, dzdots) is the reverse sweep for the
    input gradient; the mixed parameter-gradient pass reuses it verbatim
    because the tangent output is linear in the tangent input.
    """

    __slots__ = ("params", "x", "acts", "d1s", "output", "_qs", "_dzdots", "_grad")

    def __init__(self, params: MlpParams, x: np.ndarray):
        self.params = params
        self.x = x
        self.acts = [x]
        self.d1s = []
        a = x
        for ell in range(params.n_layers - 1):
            a = np.tanh(a @ params.weights[ell].T + params.biases[ell])
            self.acts.append(a)
            self.d1s.append(1.0 - a * a)
        self.output = a @ params.weights[-1].T + params.biases[-1]
        if not np.isfinite(self.output).all():
            raise NonFiniteError(f"non-finite output of layer {params.n_layers - 1}")
        self._qs = None
        self._dzdots = None
        self._grad = None

    def gradient_chain(self):
        """(qs, dzdots, input_gradient) of the scalar output.

        qs[ell] is the adjoint of the layer-(ell+1) tangent before layer
        ell is processed; dzdots[ell] = qs[ell] * d1s[ell].
        """
        if self._grad is None:
            params = self.params
            nb = self.x.shape[0]
            q = np.broadcast_to(params.weights[-1][0], (nb, params.weights[-1].shape[1]))
            qs, dzdots = [], []
            for ell in range(params.n_layers - 2, -1, -1):
                qs.append(q)
                dzdot = q * self.d1s[ell]
                dzdots.append(dzdot)
                q = dzdot @ params.weights[ell]
            self._qs, self._dzdots, self._grad = qs, dzdots, q
        return self._qs, self._dzdots, self._grad


def forward_batch(params: MlpParams, x: np.ndarray) -> np.ndarray:
    x, single = _as_batch(params, x)
    y = ForwardCache(params, x).output
    return y[0] if single else y


def scalar_gradient_batch(
    params: MlpParams, x: np.ndarray, cache: ForwardCache | None = None
) -> np.ndarray:
    """d output / d input for an output_dim-1 network, shape (B, n)."""
    if params.arch.output_dim != 1:
        raise ShapeError("input gradient is defined for scalar outputs only")
    x, single = _as_batch(params, x)
    if cache is None:
        cache = ForwardCache(params, x)
    _, _, grad = cache.gradient_chain()
    return grad[0] if single else grad


def scalar_hessian(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Symmetrized d^2 output / d input^2 at a single point, shape (n, n)."""
    if params.arch.output_dim != 1:
        raise ShapeError("input Hessian is defined for scalar outputs only")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != params.arch.input_dim:
        raise ShapeError(f"expected a single point of dim {params.arch.input_dim}")
    n = params.arch.input_dim
    a = x
    jac = np.eye(n)
    sec = np.zeros((n, n, n))
    for ell in range(params.n_layers - 1):
        w = params.weights[ell]
        s = w @ jac
        u = np.einsum("km,mij->kij", w, sec)
        a = np.tanh(w @ a + params.biases[ell])
        d1, d2 = tanh_derivatives(a)
        sec = d2[:, None, None] * s[:, :, None] * s[:, None, :] + d1[:, None, None] * u
        jac = d1[:, None] * s
    h = np.einsum("m,mij->ij", params.weights[-1][0], sec)
    return 0.5 * (h + h.T)


def value_param_backward(
    params: MlpParams, x: np.ndarray, dl_dy: np.ndarray, cache: ForwardCache | None = None
) -> list[np.ndarray]:
    """Parameter gradient of sum_k dl_dy[k] . output(x_k).

    Standard reverse pass; returns arrays in MlpParams.arrays() order.
    """
    x, _ = _as_batch(params, x)
    dl_dy = np.asarray(dl_dy, dtype=np.float64)
    if dl_dy.ndim == 1:
        dl_dy = dl_dy[:, None]
    if dl_dy.shape != (x.shape[0], params.arch.output_dim):
        raise ShapeError(f"output adjoint shape {dl_dy.shape} mismatch")
    if cache is None:
        cache = ForwardCache(params, x)
    grads: list[np.ndarray | None] = [None] * (2 * params.n_layers)
    delta = dl_dy
    grads[-2] = delta.T @ cache.acts[-1]
    grads[-1] = delta.sum(axis=0)
    back = delta @ params.weights[-1]
    for ell in range(params.n_layers - 2, -1, -1):
        delta = back * cache.d1s[ell]
        grads[2 * ell] = delta.T @ cache.acts[ell]
        grads[2 * ell + 1] = delta.sum(axis=0)
        back = delta @ params.weights[ell]
    return grads  # type: ignore[return-value]


def gradient_param_backward(
    params: MlpParams,
    x: np.ndarray,
    dl_dvalue: np.ndarray | None,
    dl_dgrad: np.ndarray,
    cache: ForwardCache | None = None,
    check: bool = True,
) -> list[np.ndarray]:
    """Parameter gradient of sum_k [ dl_dvalue[k] H(x_k) + dl_dgrad[k] . grad H(x_k) ].

    Forward tangent pass in per-sample direction dl_dgrad, then a reverse
    sweep over the (value, tangent) pair.  This is the mixed second-order
    building block for every loss containing grad H.
    """
    if params.arch.output_dim != 1:
        raise ShapeError("gradient backward is defined for scalar outputs only")
    x, _ = _as_batch(params, x)
    nb = x.shape[0]
    c = np.asarray(dl_dgrad, dtype=np.float64)
    if c.shape != x.shape:
        raise ShapeError(f"gradient adjoint shape {c.shape}, expected {x.shape}")
    if cache is None:
        cache = ForwardCache(params, x)
    qs, dzdots, _ = cache.gradient_chain()

    tangents = [c]
    zdots = []
    adot = c
    for ell in range(params.n_layers - 1):
        zdot = adot @ params.weights[ell].T
        adot = cache.d1s[ell] * zdot
        tangents.append(adot)
        zdots.append(zdot)

    grads: list[np.ndarray | None] = [None] * (2 * params.n_layers)
    if dl_dvalue is None:
        grads[-2] = tangents[-1].sum(axis=0)[None, :]
        grads[-1] = np.zeros(1)
        p = None
    else:
        wv = np.asarray(dl_dvalue, np.float64).reshape(nb, 1)
        grads[-2] = wv.T @ cache.acts[-1] + tangents[-1].sum(axis=0)[None, :]
        grads[-1] = wv.sum(axis=0)
        p = wv @ params.weights[-1]
    for pos, ell in enumerate(range(params.n_layers - 2, -1, -1)):
        q = qs[pos]
        dzdot = dzdots[pos]
        d1 = cache.d1s[ell]
        q_z = q * zdots[ell]
        dz = (p - 2.0 * q_z * cache.acts[ell + 1]) * d1 if p is not None else (
            -2.0 * q_z * cache.acts[ell + 1]
        ) * d1
        grads[2 * ell] = dz.T @ cache.acts[ell] + dzdot.T @ tangents[ell]
        grads[2 * ell + 1] = dz.sum(axis=0)
        p = dz @ params.weights[ell]
    if check:
        for ell, g in enumerate(grads):
            if not np.isfinite(g).all():  # type: ignore[union-attr]
                raise NonFiniteError(f"non-finite parameter gradient in flat slot {ell}")
    return grads  # type: ignore[return-value]


# ---------------------------------------------------------------------------
# field wrappers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalarField:
    """Scalar-valued network H: R^n -> R."""

    params: MlpParams

    def __post_init__(self):
        if self.params.arch.output_dim != 1:
            raise ShapeError("ScalarField requires output_dim = 1")

    @property
    def input_dim(self) -> int:
        return self.params.arch.input_dim

    def value(self, x: np.ndarray) -> float:
        return float(forward_batch(self.params, np.asarray(x, np.float64))[0])

    def value_batch(self, x: np.ndarray) -> np.ndarray:
        return forward_batch(self.params, x)[:, 0]

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return scalar_gradient_batch(self.params, np.asarray(x, np.float64))

    def gradient_batch(self, x: np.ndarray) -> np.ndarray:
        return scalar_gradient_batch(self.params, x)

    def hessian(self, x: np.ndarray) -> np.ndarray:
        return scalar_hessian(self.params, np.asarray(x, np.float64))


@dataclass(frozen=True)
class MatrixField:
    """Matrix-valued network M: R^n -> R^{rows x cols}, row-major reshape."""

    params: MlpParams
    rows: int
    cols: int

    def __post_init__(self):
        if self.params.arch.output_dim != self.rows * self.cols:
            raise ShapeError(
                f"output_dim {self.params.arch.output_dim} != rows*cols {self.rows * self.cols}"
            )

    @property
    def input_dim(self) -> int:
        return self.params.arch.input_dim

    def value(self, x: np.ndarray) -> np.ndarray:
        flat = forward_batch(self.params, np.asarray(x, np.float64))
        return flat.reshape(self.rows, self.cols)

    def value_batch(self, x: np.ndarray) -> np.ndarray:
        flat = forward_batch(self.params, x)
        return flat.reshape(-1, self.rows, self.cols)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdamState:
    """Bias-corrected Adam moments, one slot per parameter array."""

    step_count: int
    first_moment: tuple[np.ndarray, ...]
    second_moment: tuple[np.ndarray, ...]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def for_params(params: MlpParams, lr: float = 1e-3) -> "AdamState":
        zeros = tuple(np.zeros_like(a) for a in params.arrays())
        return AdamState(0, zeros, tuple(np.zeros_like(a) for a in params.arrays()), lr=lr)


def _flatten(arrays) -> np.ndarray:
    return np.concatenate([np.ravel(a) for a in arrays])


def _split_like(flat: np.ndarray, templates) -> list[np.ndarray]:
    out, pos = [], 0
    for t in templates:
        out.append(flat[pos : pos + t.size].reshape(t.shape))
        pos += t.size
    return out


def adam_step(
    state: AdamState, params: MlpParams, grads: list[np.ndarray]
) -> tuple[AdamState, MlpParams]:
    """One bias-corrected Adam update; returns fresh state and parameters.

    The update runs on flattened vectors (elementwise-identical to the
    per-array form, much cheaper per step for many small arrays).
    """
    arrays = params.arrays()
    if len(grads) != len(arrays):
        raise ShapeError(f"expected {len(arrays)} gradient arrays, got {len(grads)}")
    for a, g in zip(arrays, grads):
        if g.shape != a.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {a.shape}")
    t = state.step_count + 1
    gf = _flatten(grads)
    m = state.beta1 * _flatten(state.first_moment) + (1.0 - state.beta1) * gf
    v = state.beta2 * _flatten(state.second_moment) + (1.0 - state.beta2) * gf * gf
    step = state.lr * (m / (1.0 - state.beta1**t)) / (
        np.sqrt(v / (1.0 - state.beta2**t)) + state.eps
    )
    theta = _flatten(arrays) - step
    new_state = replace(
        state,
        step_count=t,
        first_moment=tuple(_split_like(m, arrays)),
        second_moment=tuple(_split_like(v, arrays)),
    )
    return new_state, MlpParams._wrap_fresh(params.arch, _split_like(theta, arrays))


# ---------------------------------------------------------------------------
# persistence: flat text format, version tag sphnn-params-v1
# ---------------------------------------------------------------------------

def save_params(params: MlpParams, path) -> None:
    arch = params.arch
    lines = [
        PARAMS_FORMAT_TAG,
        f"input_dim {arch.input_dim}",
        "hidden_widths " + " ".join(str(w) for w in arch.hidden_widths),
        f"output_dim {arch.output_dim}",
        f"activation {arch.activation}",
    ]
    for ell, (w, b) in enumerate(zip(params.weights, params.biases)):
        lines.append(f"layer {ell} weight {w.shape[0]} {w.shape[1]}")
        for row in w:
            lines.append(" ".join(f"{v:.17g}" for v in row))
        lines.append(f"layer {ell} bias {b.shape[0]}")
        lines.append(" ".join(f"{v:.17g}" for v in b))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_params(path) -> MlpParams:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != PARAMS_FORMAT_TAG:
        raise ValueError(f"{path}: not a {PARAMS_FORMAT_TAG} file")

    def fields(i: int, key: str) -> list[str]:
        parts = lines[i].split()
        if not parts or parts[0] != key:
            raise ValueError(f"{path}:{i + 1}: expected '{key} ...'")
        return parts[1:]

    input_dim = int(fields(1, "input_dim")[0])
    hidden = tuple(int(w) for w in fields(2, "hidden_widths"))
    output_dim = int(fields(3, "output_dim")[0])
    activation = fields(4, "activation")[0]
    arch = Architecture(input_dim, hidden, output_dim, activation)
    ws, bs = [], []
    i = 5
    for ell, (fan_in, fan_out) in enumerate(arch.layer_dims):
        head = lines[i].split()
        if head[:3] != ["layer", str(ell), "weight"]:
            raise ValueError(f"{path}:{i + 1}: expected layer {ell} weight header")
        rows, cols = int(head[3]), int(head[4])
        if (rows, cols) != (fan_out, fan_in):
            raise ValueError(f"{path}:{i + 1}: weight shape {(rows, cols)} mismatch")
        i += 1
        w = np.array(
            [[float(v) for v in lines[i + r].split()] for r in range(rows)], dtype=np.float64
        )
        i += rows
        head = lines[i].split()
        if head[:3] != ["layer", str(ell), "bias"]:
            raise ValueError(f"{path}:{i + 1}: expected layer {ell} bias header")
        i += 1
        b = np.array([float(v) for v in lines[i].split()], dtype=np.float64)
        i += 1
        ws.append(w)
        bs.append(b)
    return MlpParams(arch, tuple(ws), tuple(bs))
