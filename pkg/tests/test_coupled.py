"""Oscillator consensus, thermal comfort, and first-moment check behavior."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mftg.core import RandomStream, TimeGrid
from mftg.coupled import (
    ComfortLaw,
    OscillatorEnsemble,
    ThermalNetwork,
    circular_gap,
    consensus_control,
    coupling_matrix,
    energy_mean_check,
    order_parameter,
    ou_mean_check,
    phase_clusters,
    simulate_kuramoto,
    simulate_rooms,
)
from mftg.errors import ConfigError


# ---------------------------------------------------------------------------
# consensus feedback formula


class TestConsensusControl:
    def test_zero_for_aligned_phases_without_drift(self):
        theta = np.full(5, 1.3)
        u = consensus_control(theta, np.zeros(5), 1.0)
        np.testing.assert_array_equal(u, np.zeros(5))

    def test_cancels_drift_exactly_at_the_mean(self):
        # phases sum to 3.0 exactly, so the middle oscillator sits at the mean
        theta = np.array([0.5, 1.0, 1.5])
        omega = np.array([0.4, 1.3, -0.2])
        u = consensus_control(theta, omega, 2.0)
        assert u[1] == -omega[1]

    def test_two_body_quarter_turn(self):
        theta = np.array([0.0, np.pi / 2])
        u = consensus_control(theta, np.zeros(2), 1.0)
        np.testing.assert_array_equal(u, [np.sin(np.pi / 4), np.sin(-np.pi / 4)])

    def test_rejects_negative_gain(self):
        with pytest.raises(ConfigError):
            consensus_control(np.zeros(3), np.zeros(3), np.array([1.0, -0.1, 1.0]))

    @given(
        shift=st.floats(-10.0, 10.0),
        seed=st.integers(0, 2**20),
        n=st.integers(2, 8),
    )
    @settings(max_examples=60, deadline=None)
    def test_invariant_under_common_phase_shift(self, shift, seed, n):
        rng = np.random.default_rng(seed)
        theta = rng.uniform(-3.0, 3.0, n)
        omega = rng.normal(size=n)
        eta = rng.uniform(0.0, 2.0, n)
        u0 = consensus_control(theta, omega, eta)
        u1 = consensus_control(theta + shift, omega, eta)
        np.testing.assert_allclose(u1, u0, atol=1e-9)


# ---------------------------------------------------------------------------
# order parameter and clustering helpers


class TestPhaseGeometry:
    def test_order_parameter_is_one_when_aligned(self):
        assert order_parameter(np.full(7, 2.2)) == 1.0

    def test_order_parameter_vanishes_for_balanced_spread(self):
        theta = np.array([0.0, np.pi / 2, np.pi, 3 * np.pi / 2])
        assert order_parameter(theta) < 1e-15

    @given(
        st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40).map(np.array)
    )
    @settings(max_examples=100, deadline=None)
    def test_order_parameter_bounds(self, theta):
        r = order_parameter(theta)
        assert 0.0 <= r <= 1.0

    def test_circular_gap_wraps(self):
        assert circular_gap(0.1, 2 * np.pi - 0.1) == pytest.approx(0.2, abs=1e-12)
        assert circular_gap(0.0, np.pi) == pytest.approx(np.pi)

    def test_clusters_partition_indices(self):
        rng = np.random.default_rng(3)
        theta = rng.uniform(0.0, 2 * np.pi, 25)
        groups = phase_clusters(theta, merge_below=0.4)
        flat = sorted(i for g in groups for i in g)
        assert flat == list(range(25))

    def test_clusters_merge_through_chains(self):
        # consecutive gaps below threshold, endpoints far apart
        theta = np.array([0.0, 0.08, 0.16, 3.0])
        groups = phase_clusters(theta, merge_below=0.1)
        assert groups == [[0, 1, 2], [3]]

    def test_coupling_matrix_shapes(self):
        full = coupling_matrix("full", 4, strength=2.0)
        np.testing.assert_array_equal(full, np.full((4, 4), 0.5))
        block = coupling_matrix("block", 5, strength=3.0, block_sizes=[2, 3])
        assert block[0, 1] == 1.5 and block[2, 3] == 1.0
        assert block[0, 2] == 0.0 and block[4, 1] == 0.0
        rand = coupling_matrix("random", 6, strength=1.2, rng=np.random.default_rng(0))
        assert rand.shape == (6, 6)
        np.testing.assert_allclose(rand, rand.T)
        assert np.min(rand) >= 0.0 and np.max(rand) <= 0.2

    def test_coupling_matrix_rejects_bad_specs(self):
        with pytest.raises(ConfigError):
            coupling_matrix("ring", 4)
        with pytest.raises(ConfigError):
            coupling_matrix("block", 4, block_sizes=[2, 3])
        with pytest.raises(ConfigError):
            coupling_matrix("random", 4)


# ---------------------------------------------------------------------------
# phase SDE simulation


class TestKuramotoSimulation:
    def test_two_body_consensus_contraction(self):
        ens = OscillatorEnsemble(
            theta0=np.array([0.0, 1.0]),
            omega=np.zeros(2),
            kmat=np.zeros((2, 2)),
            sigma=0.0,
            eta=1.0,
        )
        grid = TimeGrid(0.0, 20.0, 2000)
        res = simulate_kuramoto(ens, grid, RandomStream(0), control="consensus")
        gap = np.abs(res.phases.values[:, 0] - res.phases.values[:, 1])
        assert np.all(np.diff(gap) <= 1e-15)
        assert gap[-1] < 1e-3
        # the pull is antisymmetric about the mean, which therefore stays put
        mean = res.phases.values.mean(axis=1)
        np.testing.assert_allclose(mean, 0.5, atol=1e-12)

    def test_zero_coupling_advances_linearly(self):
        omega = np.array([0.5, -1.0, 2.0])
        ens = OscillatorEnsemble(
            theta0=np.array([0.1, 0.2, 0.3]),
            omega=omega,
            kmat=np.zeros((3, 3)),
            sigma=0.0,
        )
        grid = TimeGrid(0.0, 5.0, 500)
        res = simulate_kuramoto(ens, grid, RandomStream(1))
        expected = ens.theta0[None, :] + grid.times()[:, None] * omega[None, :]
        np.testing.assert_allclose(res.phases.values, expected, atol=1e-10)

    def test_block_coupling_forms_three_clusters(self):
        sizes = [4, 4, 4]
        centers = np.repeat([0.0, 2.0, 4.2], 4)
        rng = np.random.default_rng(5)
        theta0 = centers + rng.uniform(-0.3, 0.3, 12)
        ens = OscillatorEnsemble(
            theta0=theta0,
            omega=np.zeros(12),
            kmat=coupling_matrix("block", 12, strength=4.0, block_sizes=sizes),
            sigma=0.0,
        )
        grid = TimeGrid(0.0, 30.0, 3000)
        res = simulate_kuramoto(ens, grid, RandomStream(2))
        terminal = res.phases.values[-1]
        blocks = [range(0, 4), range(4, 8), range(8, 12)]
        for block in blocks:
            for i in block:
                for j in block:
                    assert circular_gap(terminal[i], terminal[j]) < 0.1
        for bi in range(3):
            for bj in range(bi + 1, 3):
                for i in blocks[bi]:
                    for j in blocks[bj]:
                        assert circular_gap(terminal[i], terminal[j]) > 0.5
        assert phase_clusters(terminal) == [list(b) for b in blocks]

    def test_large_ensemble_reaches_consensus(self):
        rng = np.random.default_rng(7)
        n = 500
        ens = OscillatorEnsemble(
            theta0=rng.uniform(0.0, 2 * np.pi, n),
            omega=rng.normal(0.0, 1.0, n),
            kmat=coupling_matrix("full", n, strength=0.5),
            sigma=0.01,
            eta=1.0,
        )
        grid = TimeGrid(0.0, 50.0, 2500)
        res = simulate_kuramoto(ens, grid, RandomStream(3), control="consensus")
        assert res.order.values[-1] > 0.99

    def test_order_parameter_path_stays_in_unit_interval(self):
        rng = np.random.default_rng(11)
        ens = OscillatorEnsemble(
            theta0=rng.uniform(0.0, 2 * np.pi, 20),
            omega=rng.normal(size=20),
            kmat=coupling_matrix("full", 20, strength=1.0),
            sigma=0.8,
        )
        res = simulate_kuramoto(ens, TimeGrid(0.0, 5.0, 400), RandomStream(4))
        r = res.order.values
        assert np.all(r >= 0.0) and np.all(r <= 1.0)

    def test_same_stream_reproduces_and_wrapping_is_consistent(self):
        rng = np.random.default_rng(13)
        ens = OscillatorEnsemble(
            theta0=rng.uniform(0.0, 2 * np.pi, 6),
            omega=rng.normal(size=6),
            kmat=coupling_matrix("full", 6, strength=1.0),
            sigma=0.3,
        )
        grid = TimeGrid(0.0, 2.0, 100)
        a = simulate_kuramoto(ens, grid, RandomStream(21))
        b = simulate_kuramoto(ens, grid, RandomStream(21))
        np.testing.assert_array_equal(a.phases.values, b.phases.values)
        wrapped = a.wrapped()
        assert np.all(wrapped >= 0.0) and np.all(wrapped < 2 * np.pi)

    def test_rejects_bad_configurations(self):
        with pytest.raises(ConfigError):
            OscillatorEnsemble(np.array([0.0]), np.array([0.0]), np.zeros((1, 1)))
        with pytest.raises(ConfigError):
            OscillatorEnsemble(np.zeros(2), np.zeros(3), np.zeros((2, 2)))
        with pytest.raises(ConfigError):
            OscillatorEnsemble(np.zeros(2), np.zeros(2), -np.ones((2, 2)))
        with pytest.raises(ConfigError):
            OscillatorEnsemble(np.zeros(2), np.zeros(2), np.zeros((2, 2)), sigma=-0.1)
        with pytest.raises(ConfigError):
            OscillatorEnsemble(np.zeros(2), np.zeros(2), np.zeros((2, 2)), eta=-1.0)
        ens = OscillatorEnsemble(np.zeros(2), np.zeros(2), np.zeros((2, 2)))
        with pytest.raises(ConfigError):
            simulate_kuramoto(ens, TimeGrid(0.0, 1.0, 10), RandomStream(0), control="pid")


# ---------------------------------------------------------------------------
# thermal network


def _plain_network(n, t0, sigma=0.0, eps2=None, price=1.0, eps1=0.8):
    return ThermalNetwork(
        t0=t0,
        t_ext=10.0,
        t_ref=55.0,
        eps1=eps1,
        eps2=np.zeros((n, n)) if eps2 is None else eps2,
        eps3=0.2,
        sigma=sigma,
        price=price,
    )


class TestRooms:
    def test_passive_rooms_relax_exponentially_to_exterior(self):
        t0 = np.array([30.0, 12.0])
        net = _plain_network(2, t0)
        grid = TimeGrid(0.0, 2.0, 4000)
        res = simulate_rooms(net, grid, RandomStream(0), law=ComfortLaw(gain=0.0), n_paths=1)
        expected = 10.0 + (t0[None, :] - 10.0) * np.exp(-net.eps1 * grid.times())[:, None]
        np.testing.assert_allclose(res.sample.values, expected, atol=1e-2)
        np.testing.assert_array_equal(res.effort, np.zeros(2))

    def test_diffusive_coupling_is_dissipative(self):
        rng = np.random.default_rng(9)
        raw = rng.uniform(0.0, 0.3, (5, 5))
        net = _plain_network(
            5, rng.uniform(0.0, 30.0, 5), eps2=(raw + raw.T) / 2, eps1=0.3
        )
        grid = TimeGrid(0.0, 5.0, 1000)
        res = simulate_rooms(net, grid, RandomStream(1), law=ComfortLaw(gain=0.0), n_paths=1)
        deviation = np.abs(res.sample.values - 10.0).sum(axis=1)
        assert np.all(np.diff(deviation) <= 1e-12)

    def test_ten_rooms_enter_comfort_band_and_stay(self):
        rng = np.random.default_rng(2)
        raw = rng.uniform(0.0, 0.02, (10, 10))
        net = _plain_network(
            10, np.linspace(13.0, 19.0, 10), sigma=0.05, eps2=(raw + raw.T) / 2, eps1=0.1
        )
        grid = TimeGrid(0.0, 10.0, 2000)
        res = simulate_rooms(net, grid, RandomStream(5), n_paths=8)
        temps = res.sample.values
        lo, hi = net.band
        for room in range(10):
            inside = (temps[:, room] >= lo) & (temps[:, room] <= hi)
            first = int(np.argmax(inside))
            assert inside[first], f"room {room} never reached the band"
            assert np.all(inside[first:]), f"room {room} left the band after entering"
        assert np.all(res.comfort > 0.5)

    def test_higher_price_reduces_total_effort(self):
        net_cheap = _plain_network(4, np.full(4, 15.0), price=1.0)
        net_dear = _plain_network(4, np.full(4, 15.0), price=4.0)
        grid = TimeGrid(0.0, 6.0, 1200)
        law = ComfortLaw(price_weight=0.5)
        cheap = simulate_rooms(net_cheap, grid, RandomStream(6), law=law, n_paths=1)
        dear = simulate_rooms(net_dear, grid, RandomStream(6), law=law, n_paths=1)
        assert dear.effort.sum() < cheap.effort.sum()
        assert np.all(dear.effort < cheap.effort)

    def test_matches_independent_reimplementation(self):
        # step the documented law and cost by hand and demand exact agreement
        rng = np.random.default_rng(4)
        raw = rng.uniform(0.0, 0.05, (3, 3))
        eps2 = (raw + raw.T) / 2
        net = _plain_network(3, np.array([14.0, 24.5, 31.0]), eps2=eps2, price=2.0)
        law = ComfortLaw(gain=3.0, u_max=1.5, price_weight=0.2)
        grid = TimeGrid(0.0, 1.0, 200)
        res = simulate_rooms(net, grid, RandomStream(8), law=law, n_paths=1)

        temps = net.t0.copy()
        h = grid.h
        row_sums = eps2.sum(axis=1)
        cost = np.zeros(3)
        effort = np.zeros(3)
        hits = np.zeros(3)
        path = [temps.copy()]
        for _ in range(grid.n_steps):
            gap = net.t_comf - temps
            lever = net.t_ref - temps
            push = law.gain * gap / (net.eps3 * lever)
            u = np.where(gap * lever > 0, push, 0.0) / (1.0 + law.price_weight * 2.0)
            u = np.clip(u, 0.0, law.u_max)
            drift = net.eps1 * (10.0 - temps) + eps2 @ temps - row_sums * temps
            drift = drift + net.eps3 * u * lever
            cost += h * (u * 2.0 + gap * gap)
            hits += (temps >= 23.0) & (temps <= 25.0)
            effort += h * u
            temps = temps + h * drift
            path.append(temps.copy())
        np.testing.assert_allclose(res.sample.values, np.array(path), atol=1e-12)
        np.testing.assert_allclose(res.cost, cost, atol=1e-12)
        np.testing.assert_allclose(res.effort, effort, atol=1e-12)
        np.testing.assert_allclose(res.comfort, hits / grid.n_steps, atol=1e-12)

    def test_rejects_bad_networks_and_laws(self):
        with pytest.raises(ConfigError):
            _plain_network(2, np.array([20.0, 20.0]), eps1=0.0)
        with pytest.raises(ConfigError):
            ThermalNetwork(
                t0=np.zeros(2), t_ext=10.0, t_ref=55.0,
                eps1=0.1, eps2=np.zeros((2, 2)), eps3=0.0,
            )
        with pytest.raises(ConfigError):
            _plain_network(2, np.array([20.0, 20.0]), eps2=-np.ones((2, 2)))
        with pytest.raises(ConfigError):
            ThermalNetwork(
                t0=np.zeros(2), t_ext=10.0, t_ref=55.0,
                eps1=0.1, eps2=np.zeros((2, 2)), eps3=0.2, band=(25.0, 23.0),
            )
        with pytest.raises(ConfigError):
            ComfortLaw(gain=-1.0)
        net = _plain_network(2, np.array([20.0, 20.0]), price=-1.0)
        with pytest.raises(ConfigError):
            simulate_rooms(net, TimeGrid(0.0, 1.0, 10), RandomStream(0))
        ok_net = _plain_network(2, np.array([20.0, 20.0]))
        with pytest.raises(ConfigError):
            simulate_rooms(ok_net, TimeGrid(0.0, 1.0, 10), RandomStream(0), n_paths=0)


# ---------------------------------------------------------------------------
# first-moment checks


class TestEnergyMeanCheck:
    def test_balanced_flows_keep_mean_constant(self):
        check = energy_mean_check(1.3, 1.3, 5.0, TimeGrid(0.0, 4.0, 128))
        np.testing.assert_array_equal(check.predicted.values, np.full(129, 5.0))
        assert check.mc_mean is None and check.ok is None

    def test_unit_drain_is_linear(self):
        grid = TimeGrid(0.0, 1.0, 64)
        check = energy_mean_check(1.0, 0.0, 5.0, grid)
        np.testing.assert_allclose(check.predicted.values, 5.0 - grid.times(), atol=1e-12)

    def test_time_varying_flows_match_quadrature(self):
        grid = TimeGrid(0.0, 3.0, 300)
        check = energy_mean_check(np.sin, 0.0, 2.0, grid)
        expected = 2.0 - (1.0 - np.cos(grid.times()))
        np.testing.assert_allclose(check.predicted.values, expected, atol=1e-9)

    def test_monte_carlo_agrees_within_three_se(self):
        grid = TimeGrid(0.0, 1.0, 50)
        check = energy_mean_check(
            1.0, 0.5, 2.0, grid, sigma=0.5, stream=RandomStream(11), n_paths=10_000
        )
        assert check.ok is True
        assert check.max_z <= 3.0
        np.testing.assert_allclose(
            check.predicted.values, 2.0 - 0.5 * grid.times(), atol=1e-12
        )

    def test_monte_carlo_requires_noise_and_paths(self):
        grid = TimeGrid(0.0, 1.0, 10)
        with pytest.raises(ConfigError):
            energy_mean_check(1.0, 0.0, 5.0, grid, sigma=0.0, stream=RandomStream(0))
        with pytest.raises(ConfigError):
            energy_mean_check(
                1.0, 0.0, 5.0, grid, sigma=0.5, stream=RandomStream(0), n_paths=1
            )


class TestOuMeanCheck:
    def test_started_at_target_stays_there(self):
        check = ou_mean_check(2.0, 0.7, 0.7, TimeGrid(0.0, 3.0, 60))
        np.testing.assert_array_equal(check.predicted.values, np.full(61, 0.7))

    def test_unit_decay_value(self):
        check = ou_mean_check(1.0, 0.0, 1.0, TimeGrid(0.0, 1.0, 16))
        assert abs(check.predicted.final - math.exp(-1.0)) < 1e-15

    def test_monte_carlo_agrees_within_three_se(self):
        check = ou_mean_check(
            1.0, 0.3, 1.5, TimeGrid(0.0, 2.0, 100),
            sigma=1.0, stream=RandomStream(17), n_paths=10_000,
        )
        assert check.ok is True
        assert check.max_z <= 3.0

    def test_rejects_nonpositive_reversion(self):
        with pytest.raises(ConfigError):
            ou_mean_check(0.0, 0.0, 1.0, TimeGrid(0.0, 1.0, 10))
        with pytest.raises(ConfigError):
            ou_mean_check(-1.0, 0.0, 1.0, TimeGrid(0.0, 1.0, 10))

    def test_mean_reversion_from_both_sides(self):
        grid = TimeGrid(0.0, 5.0, 100)
        above = ou_mean_check(0.8, 1.0, 3.0, grid).predicted.values
        below = ou_mean_check(0.8, 1.0, -1.0, grid).predicted.values
        assert np.all(np.diff(above) < 0.0) and np.all(np.diff(below) > 0.0)
        assert abs(above[-1] - 1.0) < 0.05 and abs(below[-1] - 1.0) < 0.05
