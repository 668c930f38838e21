"""Structural constructors, coefficient bundles and distances."""

import numpy as np
import pytest

from sphnn import mlp
from sphnn.structure import (
    CoefficientSet,
    CompactBox,
    StructureError,
    coefficient_distance,
    gram_from,
    operator_norm,
    skew_from,
)
from sphnn.systems import (
    canonical_j,
    mass_spring_ito_coefficients,
    mass_spring_ph_coefficients,
    van_der_pol_coefficients,
)


def quadratic_set(j=None, r=None):
    j = canonical_j() if j is None else j
    r = np.zeros((2, 2)) if r is None else r
    return CoefficientSet(
        n=2, d=1, m=1,
        H=lambda x: 0.5 * float(x @ x),
        grad_H=lambda x: np.asarray(x, float).copy(),
        hess_H=lambda x: np.eye(2),
        J=lambda x, _j=j: _j,
        R=lambda x, _r=r: _r,
        sigma=lambda x: np.zeros((2, 1)),
        g=lambda x: np.array([[0.0], [1.0]]),
    )


class TestConstructors:
    def test_skew_zero_and_identity(self):
        assert np.array_equal(skew_from(np.zeros((3, 3))), np.zeros((3, 3)))
        assert np.array_equal(skew_from(np.eye(3)), np.zeros((3, 3)))

    def test_skew_hand_example(self):
        got = skew_from(np.array([[1.0, 2.0], [3.0, 4.0]]))
        assert np.array_equal(got, np.array([[0.0, -1.0], [1.0, 0.0]]))

    def test_skew_rejects_nonsquare(self):
        with pytest.raises(StructureError):
            skew_from(np.zeros((2, 3)))

    def test_skew_property_exact(self):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            a = rng.normal(size=(3, 3))
            s = skew_from(a)
            assert np.abs(s + s.T).max() == 0.0

    def test_gram_zero_identity_and_hand(self):
        assert np.array_equal(gram_from(np.zeros((2, 2))), np.zeros((2, 2)))
        assert np.array_equal(gram_from(np.eye(2)), np.eye(2))
        got = gram_from(np.array([[1.0, 1.0]]))
        assert np.array_equal(got, np.ones((2, 2)))
        eigs = np.sort(np.linalg.eigvalsh(got))
        assert eigs == pytest.approx([0.0, 2.0], abs=1e-12)

    def test_gram_psd_property(self):
        rng = np.random.default_rng(6)
        for _ in range(1000):
            d = rng.normal(size=(rng.integers(1, 4), 3))
            assert np.linalg.eigvalsh(gram_from(d)).min() >= -1e-10


class TestCompactBox:
    def test_grid_and_membership(self):
        box = CompactBox(np.array([0.0, 0.0]), np.array([1.0, 2.0]), 3)
        grid = box.grid()
        assert grid.shape == (9, 2)
        assert box.contains(np.array([0.0, 2.0]))  # closed box: boundary inside
        assert not box.contains(np.array([1.0001, 1.0]))

    def test_requires_lower_below_upper(self):
        with pytest.raises(StructureError):
            CompactBox(np.array([1.0]), np.array([1.0]))


class TestDriftAndOutput:
    def test_zero_gradient_zero_input(self):
        c = quadratic_set()
        zero_grad = CoefficientSet(
            n=2, d=1, m=1, H=lambda x: 1.0,
            grad_H=lambda x: np.zeros(2), hess_H=lambda x: np.zeros((2, 2)),
            J=c.J, R=c.R, sigma=c.sigma, g=c.g,
        )
        assert np.array_equal(zero_grad.drift(np.array([2.0, 3.0]), np.zeros(1)), np.zeros(2))

    def test_mass_spring_ito_drift_matches_printed_sde(self):
        c = mass_spring_ito_coefficients(1.0, 1.0)
        got = c.drift(np.array([1.0, 0.0]), np.zeros(1))
        assert got == pytest.approx([-0.5, -1.0], abs=1e-14)

    def test_canonical_conservative_drift(self):
        c = quadratic_set()
        assert c.drift(np.array([1.0, 0.0])) == pytest.approx([0.0, -1.0], abs=1e-15)

    def test_drift_linear_in_input(self):
        c = quadratic_set()
        x = np.array([0.3, 0.8])
        rng = np.random.default_rng(3)
        for _ in range(20):
            u1, u2 = rng.normal(size=(2, 1))
            lhs = c.drift(x, u1 + u2)
            rhs = c.drift(x, u1) + c.drift(x, u2) - c.drift(x, np.zeros(1))
            assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_output_examples(self):
        c = quadratic_set()
        no_port = CoefficientSet(
            n=2, d=1, m=1, H=c.H, grad_H=c.grad_H, hess_H=c.hess_H,
            J=c.J, R=c.R, sigma=c.sigma, g=lambda x: np.zeros((2, 1)),
        )
        assert np.array_equal(no_port.output(np.array([5.0, -2.0])), np.zeros(1))
        ms = mass_spring_ph_coefficients(1.0, 1.0)
        assert ms.output(np.array([2.0, 3.0])) == pytest.approx([3.0])
        selector = CoefficientSet(
            n=2, d=1, m=2, H=c.H, grad_H=c.grad_H, hess_H=c.hess_H,
            J=c.J, R=c.R, sigma=c.sigma, g=lambda x: np.eye(2),
        )
        x = np.array([0.7, -1.3])
        assert np.array_equal(selector.output(x), x)

    def test_conservative_energy_identity_with_learned_storage(self):
        # R = 0 and u = 0: the skew form kills grad_H . drift
        rng = np.random.default_rng(11)
        j = canonical_j()
        for trial in range(25):
            params = mlp.init_params(mlp.Architecture(2, (8, 8), 1), seed=trial)
            field = mlp.ScalarField(params)
            c = CoefficientSet(
                n=2, d=1, m=1,
                H=field.value, grad_H=field.gradient, hess_H=field.hessian,
                J=lambda x: j, R=lambda x: np.zeros((2, 2)),
                sigma=lambda x: np.zeros((2, 1)), g=lambda x: np.zeros((2, 1)),
            )
            for _ in range(4):
                x = rng.normal(size=2)
                assert abs(c.grad_H(x) @ c.drift(x)) < 1e-10

    def test_validate_structure(self):
        good = quadratic_set()
        good.validate_structure(np.random.default_rng(0).normal(size=(20, 2)))
        vdp = van_der_pol_coefficients(1.0, 0.1)
        with pytest.raises(StructureError):
            vdp.validate_structure(np.array([[0.0, 1.0]]))  # R indefinite inside the strip
        vdp.validate_structure(np.array([[0.0, 1.0]]), require_psd=False)


class TestCoefficientDistance:
    def box(self):
        return CompactBox(np.array([-1.0, -1.0]), np.array([1.0, 1.0]), 11)

    def test_identical_sets_zero(self):
        c = quadratic_set()
        dist = coefficient_distance(c, c, self.box())
        assert (dist.sup_J, dist.sup_R, dist.sup_sigma, dist.c2_H) == (0.0, 0.0, 0.0, 0.0)

    def test_constant_storage_shift(self):
        a = quadratic_set()
        shift = 0.73
        b = CoefficientSet(
            n=2, d=1, m=1, H=lambda x: a.H(x) + shift,
            grad_H=a.grad_H, hess_H=a.hess_H, J=a.J, R=a.R, sigma=a.sigma, g=a.g,
        )
        dist = coefficient_distance(a, b, self.box())
        assert dist.c2_H == pytest.approx(shift, abs=1e-14)
        assert dist.sup_J == dist.sup_R == dist.sup_sigma == 0.0

    def test_linear_storage_perturbation(self):
        # H + eps*q on [-1,1]^2: value sup eps, gradient sup eps, Hessian 0
        a = quadratic_set()
        eps = 1e-3
        b = CoefficientSet(
            n=2, d=1, m=1, H=lambda x: a.H(x) + eps * x[0],
            grad_H=lambda x: a.grad_H(x) + np.array([eps, 0.0]),
            hess_H=a.hess_H, J=a.J, R=a.R, sigma=a.sigma, g=a.g,
        )
        dist = coefficient_distance(a, b, self.box())
        assert dist.c2_H == pytest.approx(2 * eps, rel=1e-12)

    def test_distance_deterministic(self):
        params = mlp.init_params(mlp.Architecture(2, (8, 8), 1), seed=77)
        field = mlp.ScalarField(params)
        learned = CoefficientSet(
            n=2, d=1, m=1,
            H=field.value, grad_H=field.gradient, hess_H=field.hessian,
            J=lambda x: canonical_j(), R=lambda x: np.zeros((2, 2)),
            sigma=lambda x: np.zeros((2, 1)), g=lambda x: np.array([[0.0], [1.0]]),
            provenance="learned",
        )
        truth = quadratic_set()
        d1 = coefficient_distance(truth, learned, self.box())
        d2 = coefficient_distance(truth, learned, self.box())
        assert (d1.sup_J, d1.sup_R, d1.sup_sigma, d1.c2_H) == (
            d2.sup_J, d2.sup_R, d2.sup_sigma, d2.c2_H,
        )

    def test_operator_norm_is_largest_singular_value(self):
        m = np.array([[3.0, 0.0], [4.0, 0.0]])
        assert operator_norm(m) == pytest.approx(5.0)
