"""Oracle tests for the MLP stack: forward, input derivatives, parameter
gradients of gradient-containing objectives, Adam, and persistence."""

import numpy as np
import pytest

from sphnn import mlp


def linear_params(w, b=0.0):
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    arch = mlp.Architecture(w.shape[1], (), w.shape[0])
    return mlp.MlpParams(arch, (w,), (np.full(w.shape[0], b),))


def zero_params(arch):
    return mlp.MlpParams(
        arch,
        tuple(np.zeros((o, i)) for i, o in arch.layer_dims),
        tuple(np.zeros(o) for _, o in arch.layer_dims),
    )


def reference_forward(params, x):
    """Straight-line tanh chain, written independently of the library path."""
    a = np.asarray(x, dtype=np.float64)
    for ell in range(params.n_layers - 1):
        a = np.tanh(params.weights[ell] @ a + params.biases[ell])
    return params.weights[-1] @ a + params.biases[-1]


def fd_input_gradient(params, x, h=1e-5):
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (
            mlp.forward_batch(params, x + e)[0] - mlp.forward_batch(params, x - e)[0]
        ) / (2 * h)
    return out


class TestForward:
    def test_zero_network_outputs_zero(self):
        params = zero_params(mlp.Architecture(3, (4, 4), 1))
        assert mlp.forward_batch(params, np.array([0.7, -2.0, 5.0]))[0] == 0.0

    def test_single_linear_layer(self):
        params = linear_params([[1.0, 2.0]])
        assert mlp.forward_batch(params, np.array([3.0, 4.0]))[0] == pytest.approx(11.0)

    def test_matches_independent_reimplementation(self):
        arch = mlp.Architecture(2, (64, 64), 1)
        params = mlp.init_params(arch, seed=0)
        x = np.array([1.0, 0.0])
        got = mlp.forward_batch(params, x)[0]
        want = reference_forward(params, x)[0]
        assert abs(got - want) < 1e-12

    def test_dimension_mismatch_raises(self):
        params = linear_params([[1.0, 2.0]])
        with pytest.raises(mlp.ShapeError):
            mlp.forward_batch(params, np.array([1.0, 2.0, 3.0]))

    def test_batch_matches_single(self):
        # BLAS kernels differ by shape, so cross-shape agreement is to the ulp
        params = mlp.init_params(mlp.Architecture(2, (8,), 3), seed=4)
        xs = np.random.default_rng(0).normal(size=(5, 2))
        batch = mlp.forward_batch(params, xs)
        for i, x in enumerate(xs):
            np.testing.assert_allclose(batch[i], mlp.forward_batch(params, x), rtol=1e-13)


class TestInputGradient:
    def test_linear_gradient_is_weight_row(self):
        params = linear_params([[1.0, 2.0]])
        g = mlp.scalar_gradient_batch(params, np.array([-3.0, 9.0]))
        assert np.array_equal(g, np.array([1.0, 2.0]))

    def test_zero_network_gradient_is_zero(self):
        params = zero_params(mlp.Architecture(2, (4,), 1))
        assert np.array_equal(
            mlp.scalar_gradient_batch(params, np.array([1.0, 1.0])), np.zeros(2)
        )

    def test_matches_finite_differences_at_spec_point(self):
        params = mlp.init_params(mlp.Architecture(2, (64, 64), 1), seed=0)
        x = np.array([0.3, -0.7])
        got = mlp.scalar_gradient_batch(params, x)
        fd = fd_input_gradient(params, x)
        assert np.linalg.norm(got - fd) / np.linalg.norm(fd) < 1e-6

    def test_property_fd_over_random_fields(self):
        rng = np.random.default_rng(123)
        for trial in range(100):
            n = int(rng.integers(1, 4))
            widths = tuple(int(w) for w in rng.integers(2, 9, size=rng.integers(1, 3)))
            params = mlp.init_params(mlp.Architecture(n, widths, 1), seed=trial)
            x = rng.normal(size=n)
            got = mlp.scalar_gradient_batch(params, x)
            fd = fd_input_gradient(params, x)
            denom = max(np.linalg.norm(fd), 1e-9)
            assert np.linalg.norm(got - fd) / denom < 1e-6


class TestInputHessian:
    def test_linear_hessian_is_zero(self):
        params = linear_params([[1.0, 2.0]])
        assert np.array_equal(mlp.scalar_hessian(params, np.array([0.5, 0.5])), np.zeros((2, 2)))

    def test_exact_symmetry(self):
        params = mlp.init_params(mlp.Architecture(3, (7, 5), 1), seed=2)
        h = mlp.scalar_hessian(params, np.array([0.1, -0.2, 0.3]))
        assert np.array_equal(h, h.T)

    def test_matches_fd_of_gradient(self):
        rng = np.random.default_rng(7)
        for trial in range(30):
            n = int(rng.integers(1, 4))
            params = mlp.init_params(mlp.Architecture(n, (6, 6), 1), seed=trial + 50)
            x = rng.normal(size=n)
            h_an = mlp.scalar_hessian(params, x)
            step = 1e-4
            fd = np.zeros((n, n))
            for i in range(n):
                e = np.zeros(n)
                e[i] = step
                fd[:, i] = (
                    mlp.scalar_gradient_batch(params, x + e)
                    - mlp.scalar_gradient_batch(params, x - e)
                ) / (2 * step)
            assert np.abs(h_an - 0.5 * (fd + fd.T)).max() < 1e-5


class TestParamGradients:
    def test_linear_value_gradient_is_input(self):
        params = linear_params([[0.0, 0.0]])
        x0 = np.array([[3.0, -1.0]])
        grads = mlp.value_param_backward(params, x0, np.array([1.0]))
        assert np.array_equal(grads[0], x0)
        assert np.array_equal(grads[1], np.array([1.0]))

    def test_constant_objective_gives_zero_gradient(self):
        params = mlp.init_params(mlp.Architecture(2, (5,), 1), seed=1)
        grads = mlp.gradient_param_backward(
            params, np.zeros((3, 2)), np.zeros(3), np.zeros((3, 2))
        )
        assert all(np.array_equal(g, np.zeros_like(g)) for g in grads)

    def test_grad_norm_objective_matches_fd(self):
        # objective = |grad H(x0)|^2 contains the input gradient
        params = mlp.init_params(mlp.Architecture(2, (6, 5), 1), seed=0)
        x0 = np.array([[0.4, -0.2]])

        def objective(p):
            g = mlp.scalar_gradient_batch(p, x0)
            return float(np.sum(g * g))

        c = 2.0 * mlp.scalar_gradient_batch(params, x0)
        analytic = mlp.gradient_param_backward(params, x0, None, c)
        arrays = params.arrays()
        for slot, a in enumerate(arrays):
            fd = np.zeros_like(a)
            it = np.nditer(a, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                up = [arr.copy() for arr in arrays]
                dn = [arr.copy() for arr in arrays]
                up[slot][idx] += 1e-5
                dn[slot][idx] -= 1e-5
                fd[idx] = (
                    objective(mlp.MlpParams.from_arrays(params.arch, up))
                    - objective(mlp.MlpParams.from_arrays(params.arch, dn))
                ) / 2e-5
            denom = max(np.abs(fd).max(), 1e-9)
            assert np.abs(analytic[slot] - fd).max() / denom < 1e-4


class TestAdam:
    def test_zero_gradient_keeps_everything(self):
        params = mlp.init_params(mlp.Architecture(2, (4,), 1), seed=3)
        state = mlp.AdamState.for_params(params)
        new_state, new_params = mlp.adam_step(state, params, mlp.zeros_like_params(params))
        assert new_state.step_count == 1
        assert all(np.array_equal(a, b) for a, b in zip(params.arrays(), new_params.arrays()))
        assert all(np.array_equal(m, np.zeros_like(m)) for m in new_state.first_moment)

    def test_first_step_closed_form(self):
        params = linear_params([[0.0]])
        state = mlp.AdamState.for_params(params)
        _, stepped = mlp.adam_step(state, params, [np.ones((1, 1)), np.zeros(1)])
        expected = -1e-3 * 1.0 / (1.0 + 1e-8)
        assert abs(stepped.weights[0][0, 0] - expected) < 1e-15

    def test_two_steps_closed_form(self):
        params = linear_params([[0.0]])
        state = mlp.AdamState.for_params(params)
        grad = [np.ones((1, 1)), np.zeros(1)]
        state, params = mlp.adam_step(state, params, grad)
        state, params = mlp.adam_step(state, params, grad)
        # hand-computed: both bias-corrected moments equal 1 at each step
        theta = 0.0
        m = v = 0.0
        for t in (1, 2):
            m = 0.9 * m + 0.1
            v = 0.999 * v + 0.001
            theta -= 1e-3 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        assert abs(params.weights[0][0, 0] - theta) < 1e-12
        assert state.step_count == 2

    def test_shape_mismatch_raises(self):
        params = linear_params([[0.0, 1.0]])
        state = mlp.AdamState.for_params(params)
        with pytest.raises(mlp.ShapeError):
            mlp.adam_step(state, params, [np.ones((2, 2)), np.zeros(1)])


class TestPurityAndPersistence:
    def test_repeated_calls_bit_identical(self):
        params = mlp.init_params(mlp.Architecture(2, (16, 16), 1), seed=11)
        x = np.array([0.37, -1.21])
        assert np.array_equal(mlp.forward_batch(params, x), mlp.forward_batch(params, x))
        assert np.array_equal(
            mlp.scalar_gradient_batch(params, x), mlp.scalar_gradient_batch(params, x)
        )
        assert np.array_equal(mlp.scalar_hessian(params, x), mlp.scalar_hessian(params, x))

    def test_save_load_round_trip_exact(self, tmp_path):
        params = mlp.init_params(mlp.Architecture(3, (9, 5), 4), seed=21)
        path = tmp_path / "net.params"
        mlp.save_params(params, path)
        loaded = mlp.load_params(path)
        assert loaded.arch == params.arch
        assert all(np.array_equal(a, b) for a, b in zip(params.arrays(), loaded.arrays()))
        assert open(path).readline().strip() == "sphnn-params-v1"

    def test_load_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "bogus.params"
        path.write_text("not-a-params-file\n")
        with pytest.raises(ValueError):
            mlp.load_params(path)

    def test_params_validation(self):
        arch = mlp.Architecture(2, (3,), 1)
        with pytest.raises(mlp.ShapeError):
            mlp.MlpParams(arch, (np.zeros((3, 2)), np.zeros((1, 4))), (np.zeros(3), np.zeros(1)))
        with pytest.raises(mlp.NonFiniteError):
            mlp.MlpParams(
                arch,
                (np.full((3, 2), np.nan), np.zeros((1, 3))),
                (np.zeros(3), np.zeros(1)),
            )
