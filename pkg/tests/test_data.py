"""Transition extraction, velocity targets, and dataset persistence."""

import numpy as np
import pytest

from sphnn.data import (
    DatasetError,
    TransitionDataset,
    ce_targets,
    extract_transitions,
    ib_targets,
    load_dataset,
    save_dataset,
)
from sphnn.sde import Ensemble, Trajectory, simulate_ensemble
from sphnn.systems import SdeSystem


def path(states, dt=0.1, idx=0):
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    return Trajectory(dt, np.arange(len(states)) * dt, states, 0, idx)


def dataset(x, x_next, dt=0.1, u=None):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    x_next = np.atleast_2d(np.asarray(x_next, dtype=np.float64))
    u = np.zeros((len(x), 1)) if u is None else u
    return TransitionDataset(x, x_next, dt, u)


class TestExtract:
    def test_three_state_path_gives_two_transitions(self):
        ens = Ensemble((path([[0.0], [1.0], [2.0]]),))
        ds = extract_transitions(ens)
        assert len(ds) == 2
        assert np.array_equal(ds.x, [[0.0], [1.0]])
        assert np.array_equal(ds.x_next, [[1.0], [2.0]])

    def test_empty_ensemble(self):
        ds = extract_transitions(Ensemble(()))
        assert len(ds) == 0

    def test_path_count_arithmetic(self):
        rng = np.random.default_rng(0)
        paths = tuple(path(rng.normal(size=(101, 2)), idx=i) for i in range(10))
        ds = extract_transitions(Ensemble(paths))
        assert len(ds) == 1000

    def test_mixed_dt_rejected(self):
        with pytest.raises((DatasetError, ValueError)):
            extract_transitions(Ensemble((path([[0.0], [1.0]], dt=0.1, idx=0),
                                          path([[0.0], [1.0]], dt=0.2, idx=1))))

    def test_input_signal_recorded(self):
        ens = Ensemble((path([[0.0], [1.0], [2.0]]),))
        ds = extract_transitions(ens, u_fn=lambda t: np.array([t]))
        assert np.array_equal(ds.u, [[0.0], [0.1]])


class TestIbTargets:
    def test_stationary_transition_zero(self):
        ds = dataset([[1.0, 2.0]], [[1.0, 2.0]])
        assert np.array_equal(ib_targets(ds).values, np.zeros((1, 2)))

    def test_hand_value(self):
        ds = dataset([[0.0, 0.0]], [[0.1, -0.2]], dt=0.1)
        assert ib_targets(ds).values[0] == pytest.approx([1.0, -2.0])

    def test_noiseless_constant_drift_recovered_exactly(self):
        b = np.array([0.7, -0.3])
        sys = SdeSystem(name="const", n=2, d=1, m=1,
                        drift_fn=lambda t, x, u=None: b,
                        diffusion_fn=lambda x: np.zeros((2, 1)))
        ens = simulate_ensemble(sys, np.zeros(2), None, 0.05, 1.0, 0, 3)
        ds = extract_transitions(ens)
        targets = ib_targets(ds).values
        assert np.abs(targets - b).max() < 1e-12

    def test_reconstruction_inverts_euler_step(self):
        rng = np.random.default_rng(2)
        ds = dataset(rng.normal(size=(50, 2)), rng.normal(size=(50, 2)), dt=0.01)
        rebuilt = ds.x + ib_targets(ds).values * ds.dt
        assert np.abs(rebuilt - ds.x_next).max() < 1e-12


class TestCeTargets:
    def test_k1_equals_ib_on_distinct_states(self):
        rng = np.random.default_rng(3)
        ds = dataset(rng.normal(size=(40, 2)), rng.normal(size=(40, 2)))
        ce = ce_targets(ds, 1)
        assert np.array_equal(ce.values, ib_targets(ds).values)
        assert ce.kind == "CE" and ce.ce_neighbors == 1

    def test_duplicate_states_shared_increment(self):
        x = np.zeros((5, 1))
        inc = np.full((5, 1), 0.3)
        ds = dataset(x, x + inc, dt=1.0)
        for k in (1, 3, 5):
            assert ce_targets(ds, k).values == pytest.approx(np.full((5, 1), 0.3))

    def test_two_cluster_hand_average(self):
        # cluster at x=0 with increments +1 and +3; far cluster at x=10
        x = np.array([[0.0], [0.0], [10.0]])
        x_next = np.array([[1.0], [3.0], [9.0]])
        ds = dataset(x, x_next, dt=1.0)
        ce = ce_targets(ds, 2)
        assert ce.values[0, 0] == pytest.approx(2.0)
        assert ce.values[1, 0] == pytest.approx(2.0)

    def test_k_equal_to_size_gives_global_mean(self):
        rng = np.random.default_rng(4)
        ds = dataset(rng.normal(size=(30, 2)), rng.normal(size=(30, 2)))
        ce = ce_targets(ds, 30)
        mean = ib_targets(ds).values.mean(axis=0)
        assert np.allclose(ce.values, np.broadcast_to(mean, (30, 2)), atol=1e-12)

    def test_k_out_of_range_rejected(self):
        ds = dataset(np.zeros((3, 1)), np.ones((3, 1)))
        with pytest.raises(DatasetError):
            ce_targets(ds, 0)
        with pytest.raises(DatasetError):
            ce_targets(ds, 4)

    def test_empty_dataset_rejected(self):
        ds = TransitionDataset(np.zeros((0, 2)), np.zeros((0, 2)), 0.1, np.zeros((0, 1)))
        with pytest.raises(DatasetError):
            ce_targets(ds, 1)

    def test_nadaraya_watson_variant(self):
        rng = np.random.default_rng(5)
        ds = dataset(rng.normal(size=(25, 2)), rng.normal(size=(25, 2)))
        nw = ce_targets(ds, 4, estimator="nadaraya_watson", bandwidth=1e-6)
        # vanishing bandwidth concentrates all weight on the point itself
        assert np.allclose(nw.values, ib_targets(ds).values, atol=1e-8)
        wide = ce_targets(ds, 4, estimator="nadaraya_watson", bandwidth=1e6)
        mean = ib_targets(ds).values.mean(axis=0)
        assert np.allclose(wide.values, np.broadcast_to(mean, (25, 2)), atol=1e-6)


class TestMeanIbConvergence:
    def test_constant_coefficient_three_sigma(self):
        # dX = b dt + s dW: the mean IB target estimates b with
        # standard error s / sqrt(N dt)
        b, s = 0.4, 0.3
        n_samples = 10_000
        dt = 0.01
        sys = SdeSystem(name="const", n=1, d=1, m=1,
                        drift_fn=lambda t, x, u=None: np.array([b]),
                        diffusion_fn=lambda x: np.array([[s]]))
        ens = simulate_ensemble(sys, np.zeros(1), None, dt, dt * (n_samples // 10), 31, 10)
        ds = extract_transitions(ens)
        assert len(ds) == n_samples
        se = s / np.sqrt(n_samples * dt)
        assert abs(ib_targets(ds).values.mean() - b) < 3 * se


class TestPersistence:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        ds = dataset(rng.normal(size=(20, 2)), rng.normal(size=(20, 2)), dt=0.05,
                     u=rng.normal(size=(20, 1)))
        p = tmp_path / "ds.csv"
        save_dataset(ds, p)
        back = load_dataset(p)
        assert np.array_equal(back.x, ds.x)
        assert np.array_equal(back.x_next, ds.x_next)
        assert np.array_equal(back.u, ds.u)
        assert back.dt == ds.dt
        assert open(p).readline().strip() == "xk_1,xk_2,xn_1,xn_2,dt,u_1"

    def test_empty_dataset_header_only(self, tmp_path):
        ds = TransitionDataset(np.zeros((0, 2)), np.zeros((0, 2)), 1.0, np.zeros((0, 1)))
        p = tmp_path / "empty.csv"
        save_dataset(ds, p)
        assert len(open(p).readlines()) == 1
        assert len(load_dataset(p)) == 0

    def test_nan_token_rejected_with_line_number(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text(
            "xk_1,xn_1,dt,u_1\n"
            "0.0,1.0,0.1,0.0\n"
            "0.5,NaN,0.1,0.0\n"
        )
        with pytest.raises(DatasetError, match=":3:"):
            load_dataset(p)

    def test_short_row_rejected_with_line_number(self, tmp_path):
        p = tmp_path / "short.csv"
        p.write_text("xk_1,xn_1,dt,u_1\n0.0,1.0,0.1\n")
        with pytest.raises(DatasetError, match=":2:"):
            load_dataset(p)

    def test_nonuniform_dt_rejected(self, tmp_path):
        p = tmp_path / "dt.csv"
        p.write_text("xk_1,xn_1,dt,u_1\n0.0,1.0,0.1,0.0\n0.0,1.0,0.2,0.0\n")
        with pytest.raises(DatasetError, match=":3:"):
            load_dataset(p)
