"""Renting-game equilibria and throughput-sharing equilibria."""

import math

import numpy as np
import pytest

from mftg.cloud import (
    CloudGame,
    SharingNetwork,
    best_response_oracle,
    cloud_equilibrium,
    cloud_payoff,
    efficiency_ratio,
    expost_throughput,
    kkt_residual,
    optimal_price,
    participation_cap,
    sharing_equilibrium,
    sharing_payoffs,
)
from mftg.core import RandomStream
from mftg.errors import (
    AlphaOutOfRangeError,
    ConfigError,
    InfeasibleSharingError,
    NoBracketError,
)


class TestCloudGameValidation:
    def test_requires_two_clients(self):
        with pytest.raises(ConfigError):
            CloudGame(n=1, alpha=1.0, c=1.0, p=1.0)

    def test_rejects_nonpositive_value_or_price(self):
        with pytest.raises(ConfigError):
            CloudGame(n=2, alpha=1.0, c=0.0, p=1.0)
        with pytest.raises(ConfigError):
            CloudGame(n=2, alpha=1.0, c=1.0, p=-2.0)

    def test_rejects_negative_return_index(self):
        with pytest.raises(ConfigError):
            CloudGame(n=2, alpha=-0.5, c=1.0, p=1.0)


class TestCloudEquilibrium:
    def test_two_client_unit_instance(self):
        game = CloudGame(n=2, alpha=1.0, c=1.0, p=1.0)
        assert cloud_equilibrium(game) == pytest.approx(0.25, abs=1e-15)

    def test_equilibrium_maximizes_against_itself(self):
        # unilateral deviations sampled on a grid never beat the closed form
        for game in (
            CloudGame(n=2, alpha=1.0, c=1.0, p=1.0),
            CloudGame(n=5, alpha=0.7, c=3.0, p=0.4),
            CloudGame(n=3, alpha=0.4, c=0.8, p=1.7),
        ):
            u = cloud_equilibrium(game)
            base = cloud_payoff(game, u, u)
            zs = np.linspace(0.0, 3.0 * u + 1.0, 1000)
            gains = np.array([cloud_payoff(game, z, u) for z in zs]) - base
            assert gains.max() <= 1e-8

    def test_large_population_demand_stays_under_capacity(self):
        game = CloudGame(n=10**6, alpha=1.0, c=1.0, p=1.0)
        total = game.n * cloud_equilibrium(game)
        assert total == pytest.approx(1.0 - 1.0 / game.n, abs=1e-12)
        assert total < game.c / game.p

    def test_zero_return_index_means_zero_demand(self):
        assert cloud_equilibrium(CloudGame(n=4, alpha=0.0, c=2.0, p=0.5)) == 0.0

    def test_increasing_returns_rejected(self):
        with pytest.raises(AlphaOutOfRangeError):
            cloud_equilibrium(CloudGame(n=4, alpha=1.2, c=1.0, p=1.0))

    def test_equilibrium_payoff_nonnegative(self):
        for alpha in (0.2, 0.5, 0.8, 1.0):
            for n in (2, 3, 10):
                game = CloudGame(n=n, alpha=alpha, c=1.3, p=0.6)
                u = cloud_equilibrium(game)
                pay = cloud_payoff(game, u, u)
                expect = (game.c / n) * (1.0 - alpha * (n - 1) / n)
                assert pay == pytest.approx(expect, abs=1e-12)
                assert pay >= 0.0


class TestBestResponseOracle:
    def test_symmetric_fixed_point(self):
        game = CloudGame(n=2, alpha=1.0, c=1.0, p=1.0)
        u = cloud_equilibrium(game)
        g = (game.n - 1) / game.n * u**game.alpha
        assert best_response_oracle(game, g) == pytest.approx(u, abs=1e-8)

    def test_fixed_point_across_instances(self):
        rng = np.random.default_rng(42)
        for _ in range(10):
            game = CloudGame(
                n=int(rng.integers(2, 9)),
                alpha=float(rng.uniform(0.3, 1.0)),
                c=float(rng.uniform(0.5, 5.0)),
                p=float(rng.uniform(0.2, 3.0)),
            )
            u = cloud_equilibrium(game)
            g = (game.n - 1) / game.n * u**game.alpha
            assert best_response_oracle(game, g) == pytest.approx(u, rel=1e-8)

    def test_grid_search_agrees_with_root(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            game = CloudGame(
                n=int(rng.integers(2, 9)),
                alpha=float(rng.uniform(0.3, 0.95)),
                c=float(rng.uniform(0.5, 5.0)),
                p=float(rng.uniform(0.2, 3.0)),
            )
            g = float(rng.uniform(0.01, 0.3))
            root = best_response_oracle(game, g)
            zmax = 2.0 * game.c / game.p
            zs = np.linspace(zmax / 1e4, zmax, 10_000)
            pays = game.c * zs**game.alpha / (zs**game.alpha + game.n * g) - game.p * zs
            brute = zs[int(np.argmax(pays))]
            assert abs(brute - root) <= 2.0 * (zmax / 10_000)

    def test_crowded_market_shrinks_relative_share(self):
        game = CloudGame(n=2, alpha=1.0, c=10.0, p=0.1)
        shares = []
        for g in (1.0, 5.0, 20.0):
            z = best_response_oracle(game, g)
            # with linear returns the root solves (z + n g)^2 = c n g / p
            assert z + game.n * g == pytest.approx(
                math.sqrt(game.c * game.n * g / game.p), rel=1e-10
            )
            shares.append(z / (z + game.n * g))
        assert shares[0] > shares[1] > shares[2]

    def test_saturated_market_has_no_positive_root(self):
        game = CloudGame(n=2, alpha=1.0, c=1.0, p=1.0)
        with pytest.raises(NoBracketError):
            best_response_oracle(game, 1.0)

    def test_nonpositive_aggregate_rejected(self):
        game = CloudGame(n=2, alpha=1.0, c=1.0, p=1.0)
        with pytest.raises(ConfigError):
            best_response_oracle(game, 0.0)


class TestOptimalPriceAndEfficiency:
    def test_two_client_price(self):
        assert optimal_price(2, 1.0) == 0.5

    def test_clearing_price_fills_capacity(self):
        for n, alpha, c in ((2, 1.0, 1.0), (7, 0.6, 3.7)):
            p_star = optimal_price(n, alpha)
            game = CloudGame(n=n, alpha=alpha, c=c, p=p_star)
            u = cloud_equilibrium(game)
            assert n * u == pytest.approx(c, abs=1e-12)
            assert efficiency_ratio(game, u) == pytest.approx(1.0, abs=1e-12)

    def test_price_converges_to_return_index(self):
        assert optimal_price(10**6, 0.8) == pytest.approx(0.8, abs=1e-6)
        assert optimal_price(50, 1.0) < 1.0

    def test_unit_price_instance(self):
        game = CloudGame(n=2, alpha=1.0, c=1.0, p=1.0)
        assert efficiency_ratio(game, cloud_equilibrium(game)) == pytest.approx(0.5)

    def test_vanishing_return_index_wastes_everything(self):
        game = CloudGame(n=3, alpha=1e-9, c=1.0, p=1.0)
        assert efficiency_ratio(game, cloud_equilibrium(game)) < 1e-6

    def test_dearer_prices_lower_the_ratio(self):
        ratios = []
        for p in (0.5, 1.0, 2.0):
            game = CloudGame(n=4, alpha=0.9, c=2.0, p=p)
            ratios.append(efficiency_ratio(game, cloud_equilibrium(game)))
        assert ratios[0] > ratios[1] > ratios[2]

    def test_parameter_validation(self):
        with pytest.raises(ConfigError):
            optimal_price(1, 1.0)
        with pytest.raises(ConfigError):
            optimal_price(3, 0.0)

    def test_participation_cap(self):
        assert participation_cap(0.5) == math.inf
        assert participation_cap(1.0) == math.inf
        assert participation_cap(1.5) == pytest.approx(3.0)
        with pytest.raises(ConfigError):
            participation_cap(0.0)


def _line_network(eps_val, thp=(3.0, 1.0, 0.0), theta=1.0):
    eps = np.zeros((3, 3))
    eps[0, 1] = eps_val
    eps[1, 2] = eps_val
    return SharingNetwork(eps=eps, thp0=np.array(thp), theta=theta)


class TestExpostThroughput:
    def test_no_sharing_keeps_initial_profile(self):
        net = _line_network(1.0)
        out = expost_throughput(net, np.zeros((3, 3)))
        assert np.array_equal(out, net.thp0)

    def test_single_transfer_moves_one_unit(self):
        eps = np.array([[0.0, 1.0], [0.0, 0.0]])
        net = SharingNetwork(eps=eps, thp0=np.array([2.0, 0.5]))
        s = np.array([[0.0, 1.0], [0.0, 0.0]])
        assert np.array_equal(expost_throughput(net, s), [1.0, 1.5])

    def test_random_transfers_conserve_total(self):
        rng = np.random.default_rng(3)
        n = 20
        eps = rng.uniform(0.0, 1.0, (n, n))
        np.fill_diagonal(eps, 0.0)
        thp0 = rng.uniform(0.0, 5.0, n)
        net = SharingNetwork(eps=eps, thp0=thp0)
        s = rng.uniform(0.0, 0.3, (n, n))
        np.fill_diagonal(s, 0.0)
        out = expost_throughput(net, s)
        assert abs(math.fsum(out) - math.fsum(thp0)) <= 1e-12 * max(1.0, math.fsum(thp0))

    def test_infeasible_matrices_rejected(self):
        net = _line_network(1.0)
        bad_shape = np.zeros((2, 2))
        with pytest.raises(InfeasibleSharingError):
            expost_throughput(net, bad_shape)
        neg = np.zeros((3, 3))
        neg[0, 1] = -0.1
        with pytest.raises(InfeasibleSharingError):
            expost_throughput(net, neg)
        diag = np.zeros((3, 3))
        diag[1, 1] = 0.2
        with pytest.raises(InfeasibleSharingError):
            expost_throughput(net, diag)
        over = np.zeros((3, 3))
        over[0, 1] = net.cap + 1.0
        with pytest.raises(InfeasibleSharingError):
            expost_throughput(net, over)


class TestSharingPayoffsAndKkt:
    def test_two_node_hand_payoffs(self):
        eps = np.array([[0.0, 1.0], [0.0, 0.0]])
        net = SharingNetwork(eps=eps, thp0=np.array([2.0, 0.0]), theta=1.0)
        s = np.array([[0.0, 1.0], [0.0, 0.0]])
        pays = sharing_payoffs(net, s)
        assert pays[0] == pytest.approx(-2.0 * math.exp(-1.0))
        assert pays[1] == pytest.approx(-math.exp(-1.0))
        assert kkt_residual(net, s) == pytest.approx(0.0, abs=1e-15)

    def test_kkt_sees_unbalanced_edge(self):
        eps = np.array([[0.0, 1.0], [0.0, 0.0]])
        net = SharingNetwork(eps=eps, thp0=np.array([2.0, 0.0]), theta=1.0)
        s = np.array([[0.0, 0.5], [0.0, 0.0]])
        assert kkt_residual(net, s) > 0.1


class TestSharingEquilibrium:
    def test_no_altruism_no_sharing(self):
        net = SharingNetwork(eps=np.zeros((3, 3)), thp0=np.array([3.0, 1.0, 0.0]))
        res = sharing_equilibrium(net)
        assert np.all(res.s == 0.0)
        assert res.converged
        assert res.kkt == 0.0

    def test_two_node_symmetric_split(self):
        eps = np.array([[0.0, 1.0], [0.0, 0.0]])
        net = SharingNetwork(eps=eps, thp0=np.array([2.0, 0.0]), theta=1.0)
        res = sharing_equilibrium(net)
        assert res.converged
        assert res.throughput == pytest.approx([1.0, 1.0], abs=1e-8)
        assert res.s[0, 1] == pytest.approx(1.0, abs=1e-8)
        assert res.kkt <= 1e-6

    def test_line_network_matches_hand_equilibrium(self):
        # equal weights and exponential utilities: each active hop keeps a
        # throughput advantage of log(1/eps)/theta for the giver
        res = sharing_equilibrium(_line_network(0.5))
        gap = math.log(2.0)
        expect = np.array([4.0 / 3.0 + gap, 4.0 / 3.0, 4.0 / 3.0 - gap])
        assert res.converged
        assert res.throughput == pytest.approx(expect, abs=1e-6)
        assert res.kkt <= 1e-6

    def test_fairness_improves_with_altruism(self):
        gaps = []
        for eps_val in (0.5, 1.0):
            res = sharing_equilibrium(_line_network(eps_val))
            assert res.converged
            gaps.append(float(res.throughput.max() - res.throughput.min()))
        assert gaps[1] < gaps[0] - 0.5
        assert gaps[1] == pytest.approx(0.0, abs=1e-6)

    def test_total_throughput_conserved_at_equilibrium(self):
        res = sharing_equilibrium(_line_network(0.7))
        assert math.fsum(res.throughput) == pytest.approx(4.0, abs=1e-9)

    def test_throughputs_unique_across_restarts(self):
        # complete graph with two rich nodes: transfers can shuffle along
        # many routes but the final profile is pinned down
        n = 4
        eps = np.full((n, n), 1.0)
        np.fill_diagonal(eps, 0.0)
        net = SharingNetwork(eps=eps, thp0=np.array([3.0, 3.0, 0.0, 0.0]))
        res = sharing_equilibrium(net, restarts=5, stream=RandomStream(11))
        assert res.restart_spread <= 1e-6
        assert res.throughput == pytest.approx([1.5, 1.5, 1.5, 1.5], abs=1e-6)

    def test_no_convergence_is_flagged_not_raised(self):
        res = sharing_equilibrium(_line_network(0.5), iters=1)
        assert res.converged is False
        assert res.iterations == 1

    def test_active_deviations_do_not_improve_payoffs(self):
        net = _line_network(0.5)
        res = sharing_equilibrium(net)
        base = sharing_payoffs(net, res.s)
        for i, j in ((0, 1), (1, 2)):
            for delta in (1e-3, -1e-3):
                trial = res.s.copy()
                trial[i, j] = max(0.0, trial[i, j] + delta)
                assert sharing_payoffs(net, trial)[i] <= base[i] + 1e-8

    def test_validation(self):
        with pytest.raises(ConfigError):
            sharing_equilibrium(_line_network(0.5), iters=0)
        with pytest.raises(ConfigError):
            SharingNetwork(eps=np.zeros((2, 2)), thp0=np.array([1.0, -0.5]))
        bad = np.zeros((2, 2))
        bad[0, 0] = 0.3
        with pytest.raises(ConfigError):
            SharingNetwork(eps=bad, thp0=np.array([1.0, 1.0]))
