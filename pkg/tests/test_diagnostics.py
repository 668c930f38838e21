"""Energy curves, rollout metrics, passivity and stability checks."""

import numpy as np
import pytest

from sphnn import mlp
from sphnn.data import TransitionDataset
from sphnn.diagnostics import (
    DiagnosticsError,
    dynkin_rate_check,
    energy_curve,
    lipschitz_estimate,
    passivity_residual,
    rollout_deterministic,
    rollout_metrics,
    stability_bound_check,
    uat_report,
    weak_passivity_mc,
)
from sphnn.sde import Trajectory
from sphnn.structure import CoefficientSet, CompactBox
from sphnn.systems import (
    SdeSystem,
    damped_oscillator_coefficients,
    mass_spring_ph_coefficients,
    sde_system_from_coefficients,
)
from sphnn.training import SphnnModel, SphnnSpec, TrainConfig, init_fields, train


def with_r(coeffs, r_fn):
    return CoefficientSet(
        n=coeffs.n, d=coeffs.d, m=coeffs.m, H=coeffs.H, grad_H=coeffs.grad_H,
        hess_H=coeffs.hess_H, J=coeffs.J, R=r_fn, sigma=coeffs.sigma, g=coeffs.g,
    )


class TestEnergyCurve:
    def test_constant_trajectory(self):
        states = np.tile([1.0, 0.0], (5, 1))
        traj = Trajectory(0.1, np.arange(5) * 0.1, states, 0, 0)
        ms = mass_spring_ph_coefficients()
        assert np.array_equal(energy_curve(ms.H, traj), np.full(5, 0.5))

    def test_mass_spring_point_value(self):
        ms = mass_spring_ph_coefficients(1.0, 1.0)
        assert ms.H(np.array([1.0, 0.0])) == pytest.approx(0.5)

    def test_conservative_rollout_keeps_energy(self):
        ms = mass_spring_ph_coefficients()
        _, states, diverged = rollout_deterministic(
            lambda x: ms.drift(x), np.array([1.0, 0.0]), 1e-3, 5.0
        )
        assert not diverged
        h = np.array([ms.H(x) for x in states])
        assert np.abs(h - 0.5).max() < 1e-3


class TestRolloutMetrics:
    def test_truth_as_model_all_zero(self):
        ms = mass_spring_ph_coefficients()
        drift = lambda x: ms.drift(x)
        held = np.random.default_rng(0).normal(size=(50, 2))
        mets = rollout_metrics(drift, drift, ms.H, held, horizon=2.0, dt=0.01)
        assert mets.true_mse == 0.0
        assert mets.mean_abs_dq == mets.mean_abs_dp == mets.mean_abs_dh == 0.0
        assert mets.valid

    def test_constant_drift_offset_variation_of_constants(self):
        # model = truth + (eps, 0) on the harmonic system: the gap obeys
        # Delta(t) = int exp(J(t-s)) (eps,0) ds, so |dq| = eps |sin t|
        ms = mass_spring_ph_coefficients()
        eps = 1e-3
        truth = lambda x: ms.drift(x)
        model = lambda x: ms.drift(x) + np.array([eps, 0.0])
        horizon, dt = 4.0, 0.005
        held = np.zeros((1, 2))
        mets = rollout_metrics(model, truth, ms.H, held, horizon=horizon, dt=dt)
        times = np.arange(int(horizon / dt) + 1) * dt
        expected_dq = eps * np.abs(np.sin(times)).mean()
        expected_dp = eps * np.abs(np.cos(times) - 1.0).mean()
        assert mets.mean_abs_dq == pytest.approx(expected_dq, rel=1e-3)
        assert mets.mean_abs_dp == pytest.approx(expected_dp, rel=1e-3)
        assert mets.true_mse == pytest.approx(eps**2, rel=1e-12)

    def test_divergent_model_flagged(self):
        ms = mass_spring_ph_coefficients()
        blower = lambda x: 50.0 * x
        held = np.zeros((1, 2))
        mets = rollout_metrics(blower, lambda x: ms.drift(x), ms.H, held,
                               horizon=2.0, dt=0.01)
        assert not mets.valid
        assert np.isinf(mets.mean_abs_dh)


class TestPassivityResidual:
    def test_no_noise_no_dissipation(self):
        ms = mass_spring_ph_coefficients()
        silent = CoefficientSet(
            n=2, d=1, m=1, H=ms.H, grad_H=ms.grad_H, hess_H=ms.hess_H,
            J=ms.J, R=lambda x: np.zeros((2, 2)),
            sigma=lambda x: np.zeros((2, 1)), g=ms.g,
        )
        assert passivity_residual(silent, np.array([0.3, -0.8])) == 0.0

    def test_mass_spring_hand_value(self):
        ms = mass_spring_ph_coefficients(1.0, 1.0)
        assert passivity_residual(ms, np.array([1.0, 0.0])) == pytest.approx(0.5, abs=1e-12)

    def test_dissipation_shifts_residual(self):
        ms = mass_spring_ph_coefficients(1.0, 1.0)
        damped = with_r(ms, lambda x: np.eye(2))
        assert passivity_residual(damped, np.array([1.0, 0.0])) == pytest.approx(-0.5, abs=1e-12)

    def test_fd_hessian_agreement(self):
        # residual with finite-difference Hessian agrees with the analytic one
        rng = np.random.default_rng(1)
        params = mlp.init_params(mlp.Architecture(2, (8, 8), 1), seed=3)
        field = mlp.ScalarField(params)

        def fd_hess(x, h=1e-4):
            out = np.zeros((2, 2))
            for i in range(2):
                e = np.zeros(2)
                e[i] = h
                out[:, i] = (field.gradient(x + e) - field.gradient(x - e)) / (2 * h)
            return 0.5 * (out + out.T)

        base = CoefficientSet(
            n=2, d=1, m=1, H=field.value, grad_H=field.gradient, hess_H=field.hessian,
            J=lambda x: np.array([[0.0, 1.0], [-1.0, 0.0]]),
            R=lambda x: 0.1 * np.eye(2),
            sigma=lambda x: np.array([[0.2], [0.1]]), g=lambda x: np.zeros((2, 1)),
        )
        fd_version = CoefficientSet(
            n=2, d=1, m=1, H=base.H, grad_H=base.grad_H, hess_H=fd_hess,
            J=base.J, R=base.R, sigma=base.sigma, g=base.g,
        )
        for _ in range(100):
            x = rng.normal(size=2)
            assert abs(
                passivity_residual(base, x) - passivity_residual(fd_version, x)
            ) < 1e-6


class TestWeakPassivity:
    def test_strictly_dissipative_holds(self):
        damped = damped_oscillator_coefficients(0.5, 0.1)
        box = CompactBox(np.array([1.0, 1.0]), np.array([2.0, 2.0]), 11)
        rep = weak_passivity_mc(damped, np.array([1.5, 1.5]), None, box,
                                0.01, 1.0, 200, 7, strict=True)
        assert rep.c0_hat < 0
        assert rep.holds(2.0)
        # energy must visibly decrease for this heavily damped system
        assert rep.mean_energy[-1] < rep.initial_energy

    def test_conservative_energy_constant(self):
        ms = mass_spring_ph_coefficients()
        silent = CoefficientSet(
            n=2, d=1, m=1, H=ms.H, grad_H=ms.grad_H, hess_H=ms.hess_H,
            J=ms.J, R=ms.R, sigma=lambda x: np.zeros((2, 1)), g=ms.g,
        )
        box = CompactBox(np.array([-2.0, -2.0]), np.array([2.0, 2.0]), 5)
        rep = weak_passivity_mc(silent, np.array([1.0, 0.0]), None, box,
                                0.01, 1.0, 20, 3)
        assert np.abs(rep.mean_energy - 0.5).max() < 1e-4
        assert rep.holds(2.0)

    def test_dynkin_rate_matches_generator(self):
        ms = mass_spring_ph_coefficients()
        box = CompactBox(np.array([-50.0, -50.0]), np.array([50.0, 50.0]), 5)
        rate, se, expected = dynkin_rate_check(
            ms, np.array([1.0, 0.0]), None, box, 1e-3, 0.02, 400, 13
        )
        assert expected == pytest.approx(0.5, abs=1e-12)
        assert abs(rate - expected) <= 3 * se

    def test_instant_exit_rejected(self):
        damped = damped_oscillator_coefficients(0.0, 50.0)  # huge noise, small box
        box = CompactBox(np.array([-0.01, -0.01]), np.array([0.01, 0.01]), 3)
        with pytest.raises(DiagnosticsError):
            weak_passivity_mc(damped, np.zeros(2), None, box, 0.01, 0.2, 30, 1)

    def test_supply_term_enters_margin(self):
        damped = damped_oscillator_coefficients(0.5, 0.05)
        box = CompactBox(np.array([0.5, 0.5]), np.array([3.0, 3.0]), 7)
        u_fn = lambda t: np.array([0.2])
        rep = weak_passivity_mc(damped, np.array([1.5, 1.5]), u_fn, box,
                                0.01, 0.5, 100, 11, strict=True)
        assert rep.supply[-1] != 0.0
        assert rep.holds(2.0)


class TestStability:
    def quadratic_decay(self):
        return CoefficientSet(
            n=1, d=1, m=1, H=lambda x: 0.5 * float(x @ x),
            grad_H=lambda x: np.asarray(x, float).copy(),
            hess_H=lambda x: np.eye(1),
            J=lambda x: np.zeros((1, 1)), R=lambda x: np.eye(1),
            sigma=lambda x: np.zeros((1, 1)), g=lambda x: np.zeros((1, 1)),
        )

    def test_identical_systems_zero_everything(self):
        truth = self.quadratic_decay()
        box = CompactBox(np.array([-2.0]), np.array([2.0]), 21)
        rep = stability_bound_check(truth, truth, box, np.array([1.0]), None,
                                    0.01, 0.5, 4, 0)
        assert rep.alpha == 0.0 and rep.beta == 0.0
        assert rep.empirical_f == 0.0 and rep.bound == 0.0
        assert rep.holds

    def test_linear_perturbation_closed_form(self):
        truth = self.quadratic_decay()
        learned = SdeSystem(
            name="pert", n=1, d=1, m=1,
            drift_fn=lambda t, x, u=None: -x + 0.01,
            diffusion_fn=lambda x: np.zeros((1, 1)),
        )
        box = CompactBox(np.array([-2.0]), np.array([2.0]), 41)
        rep = stability_bound_check(truth, learned, box, np.array([1.0]), None,
                                    0.01, 1.0, 6, 0)
        assert rep.alpha == pytest.approx(0.01, abs=1e-12)
        assert rep.beta == 0.0
        closed_form = (0.01 * (1 - np.exp(-1.0))) ** 2
        assert rep.empirical_f == pytest.approx(closed_form, rel=1e-2)
        assert rep.holds

    def test_lipschitz_estimator_on_linear_field(self):
        box = CompactBox(np.array([-1.0, -1.0]), np.array([1.0, 1.0]), 11)
        l_hat = lipschitz_estimate(lambda x: 3.0 * x, lambda x: np.zeros((2, 1)), box,
                                   safety=1.0)
        assert l_hat == pytest.approx(3.0, rel=1e-9)

    def test_grid_too_coarse_raises(self):
        box = CompactBox(np.array([-1.0]), np.array([1.0]), 5)
        with pytest.raises(DiagnosticsError):
            lipschitz_estimate(lambda x: x, lambda x: np.zeros((1, 1)), box,
                               neighbor_radius_steps=1e-6)


class TestUatReport:
    def base(self):
        return mass_spring_ph_coefficients()

    def test_identical_sets_zero(self):
        c = self.base()
        box = CompactBox(np.array([-1.0, -1.0]), np.array([1.0, 1.0]), 5)
        rep = uat_report(c, c, box, np.array([0.5, 0.0]), None, 0.01, 0.5, 8, 0)
        assert rep.distance.total == 0.0
        assert rep.sup_distance_q99 == 0.0

    def test_linear_storage_perturbation_distance(self):
        c = self.base()
        eps = 1e-3
        pert = CoefficientSet(
            n=2, d=1, m=1, H=lambda x: c.H(x) + eps * x[0],
            grad_H=lambda x: c.grad_H(x) + np.array([eps, 0.0]),
            hess_H=c.hess_H, J=c.J, R=c.R, sigma=c.sigma, g=c.g,
        )
        box = CompactBox(np.array([-1.0, -1.0]), np.array([1.0, 1.0]), 11)
        rep = uat_report(c, pert, box, np.array([0.5, 0.0]), None, 0.01, 0.2, 4, 0)
        assert rep.distance.c2_H == pytest.approx(2 * eps, rel=1e-12)
        assert rep.sup_distance_q90 > 0.0

    def test_longer_training_tightens_trajectories(self):
        # same data, 10x the epochs: the coupled 90% quantile must shrink
        rng = np.random.default_rng(8)
        x = rng.uniform(-1.5, 1.5, size=(1500, 2))
        j = np.array([[0.0, 1.0], [-1.0, 0.0]])
        vel = x @ j.T
        ds = TransitionDataset(x, x + vel * 0.01, 0.01, np.zeros((1500, 1)))
        spec = SphnnSpec(n=2, d=1, m=1, learn_h=True, j_source="analytic", j_matrix=j,
                         r_source="zero", sigma_fn=lambda xx: np.zeros((2, 1)),
                         g_matrix=np.array([[0.0], [1.0]]), hidden=(16, 16))
        truth = CoefficientSet(
            n=2, d=1, m=1, H=lambda xx: 0.5 * float(xx @ xx),
            grad_H=lambda xx: np.asarray(xx, float).copy(), hess_H=lambda xx: np.eye(2),
            J=lambda xx: j, R=lambda xx: np.zeros((2, 2)),
            sigma=lambda xx: np.zeros((2, 1)), g=lambda xx: np.array([[0.0], [1.0]]),
        )
        box = CompactBox(np.array([-2.0, -2.0]), np.array([2.0, 2.0]), 9)
        q90 = {}
        for epochs in (6, 60):
            model, _ = train(ds, spec, TrainConfig(objective="IB", epochs=epochs,
                                                   learning_rate=3e-3, seed=3))
            rep = uat_report(truth, model.to_coefficient_set(), box,
                             np.array([1.0, 0.0]), None, 0.01, 1.0, 4, 0,
                             learned_system=model.to_sde_system())
            q90[epochs] = rep.sup_distance_q90
        assert q90[60] < q90[6]
