import numpy as np
import pytest

from oracles import (conditional_from_joint, dense_log_density,
                     dense_precision, random_graph)
from womble import (AreaGraph, CarParams, ValidationError, adjacency_from_w,
                    build_precision, full_conditional_phi, log_density_phi,
                    precision_quadform)
from conftest import all_ones_adj


def _graph(n, borders):
    return AreaGraph(n, np.asarray(borders, dtype=np.int64).reshape(-1, 2))


class TestBuildPrecision:
    def test_two_area_pattern(self):
        g = _graph(2, [(0, 1)])
        prec = build_precision(all_ones_adj(g), 0.5)
        np.testing.assert_allclose(prec.Q.toarray(),
                                   [[1.0, -0.5], [-0.5, 1.0]])

    def test_isolated_area_diagonal(self):
        g = _graph(2, [])
        prec = build_precision(all_ones_adj(g), 0.99)
        q = prec.Q.toarray()
        np.testing.assert_allclose(np.diag(q), [0.01, 0.01])
        assert np.count_nonzero(q - np.diag(np.diag(q))) == 0

    def test_diagonal_formula(self):
        g = _graph(3, [(0, 1), (1, 2)])
        adj = all_ones_adj(g)
        prec = build_precision(adj, 0.7)
        expected_diag = 0.7 * adj.row_sums + 0.3
        np.testing.assert_allclose(prec.Q.toarray().diagonal(), expected_diag)

    def test_logdet_vs_dense_random_graphs(self):
        rng = np.random.default_rng(42)
        for _ in range(30):
            n, borders = random_graph(rng, n_max=6)
            g = _graph(n, borders)
            w = rng.integers(0, 2, size=g.n_borders).astype(np.uint8)
            adj = adjacency_from_w(g, w)
            prec = build_precision(adj, 0.99)
            dense = dense_precision(n, borders, w, 0.99)
            _, logdet = np.linalg.slogdet(dense)
            assert abs(prec.log_det - logdet) < 1e-10

    def test_rho_bounds(self):
        g = _graph(2, [(0, 1)])
        with pytest.raises(ValidationError):
            build_precision(all_ones_adj(g), 1.0)
        with pytest.raises(ValidationError):
            build_precision(all_ones_adj(g), -0.01)

    def test_quadform_matches_dense(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n, borders = random_graph(rng, n_max=8)
            g = _graph(n, borders)
            w = rng.integers(0, 2, size=g.n_borders).astype(np.uint8)
            adj = adjacency_from_w(g, w)
            d = rng.normal(size=n)
            dense = dense_precision(n, borders, w, 0.99)
            assert precision_quadform(adj, 0.99, d) == pytest.approx(
                d @ dense @ d, rel=1e-12, abs=1e-12)


class TestLogDensity:
    def test_single_area_closed_form(self):
        g = _graph(1, [])
        adj = all_ones_adj(g)
        prec = build_precision(adj, 0.99)
        params = CarParams(mu=0.0, tau2=1.0, rho=0.99)
        val = log_density_phi(np.array([0.0]), params, prec)
        assert val == pytest.approx(-0.5 * np.log(2 * np.pi) + 0.5 * np.log(0.01))

    def test_phi_at_mean_drops_quadratic(self):
        g = _graph(3, [(0, 1), (1, 2)])
        adj = all_ones_adj(g)
        prec = build_precision(adj, 0.5)
        params = CarParams(mu=1.7, tau2=2.0, rho=0.5)
        val = log_density_phi(np.full(3, 1.7), params, prec)
        expected = -1.5 * np.log(2 * np.pi * 2.0) + 0.5 * prec.log_det
        assert val == pytest.approx(expected)

    def test_path_graph_vs_dense_oracle(self):
        rng = np.random.default_rng(3)
        g = _graph(5, [(0, 1), (1, 2), (2, 3), (3, 4)])
        adj = all_ones_adj(g)
        prec = build_precision(adj, 0.99)
        for _ in range(5):
            phi = rng.normal(size=5)
            mu, tau2 = rng.normal(), rng.gamma(2.0)
            params = CarParams(mu=mu, tau2=tau2, rho=0.99)
            ours = log_density_phi(phi, params, prec)
            dense = dense_log_density(
                phi, mu, tau2, dense_precision(5, g.borders, adj.w, 0.99))
            assert ours == pytest.approx(dense, abs=1e-8)

    def test_rho_zero_reduces_to_independent_normals(self):
        rng = np.random.default_rng(11)
        g = _graph(4, [(0, 1), (1, 2), (2, 3)])
        adj = all_ones_adj(g)
        prec = build_precision(adj, 0.0)
        phi = rng.normal(size=4)
        params = CarParams(mu=0.3, tau2=1.7, rho=0.0)
        ours = log_density_phi(phi, params, prec)
        from scipy.stats import norm
        indep = norm(loc=0.3, scale=np.sqrt(1.7)).logpdf(phi).sum()
        assert ours == pytest.approx(indep, abs=1e-12)

    def test_logdet_refactorize_after_flip(self):
        # severing a border changes Q; the refreshed factorization must match
        # a dense recomputation
        rng = np.random.default_rng(5)
        for _ in range(10):
            n, borders = random_graph(rng, n_max=8)
            g = _graph(n, borders)
            if g.n_borders == 0:
                continue
            w = np.ones(g.n_borders, dtype=np.uint8)
            w[rng.integers(g.n_borders)] = 0
            adj = adjacency_from_w(g, w)
            prec = build_precision(adj, 0.99)
            _, logdet = np.linalg.slogdet(dense_precision(n, borders, w, 0.99))
            assert abs(prec.log_det - logdet) < 1e-10


class TestFullConditional:
    def test_no_retained_neighbours(self):
        g = _graph(3, [(0, 1), (1, 2)])
        adj = adjacency_from_w(g, np.zeros(2, dtype=np.uint8))
        params = CarParams(mu=0.4, tau2=2.0, rho=0.99)
        mean, var = full_conditional_phi(1, np.array([5.0, 0.0, -3.0]),
                                         params, adj)
        assert mean == pytest.approx(0.4)
        assert var == pytest.approx(2.0 / 0.01)

    def test_two_area_plugin(self):
        g = _graph(2, [(0, 1)])
        adj = all_ones_adj(g)
        params = CarParams(mu=0.0, tau2=1.0, rho=0.99)
        mean, var = full_conditional_phi(0, np.array([0.0, 1.0]), params, adj)
        assert mean == pytest.approx(0.99 / 1.0)
        assert var == pytest.approx(1.0 / 1.0)

    def test_matches_joint_partition_oracle(self):
        rng = np.random.default_rng(19)
        for _ in range(25):
            n, borders = random_graph(rng, n_max=8, n_min=2)
            g = _graph(n, borders)
            w = rng.integers(0, 2, size=g.n_borders).astype(np.uint8)
            adj = adjacency_from_w(g, w)
            mu, tau2 = rng.normal(), rng.gamma(2.0) + 0.1
            params = CarParams(mu=mu, tau2=tau2, rho=0.99)
            phi = rng.normal(size=n)
            dense = dense_precision(n, borders, w, 0.99)
            k = int(rng.integers(n))
            mean, var = full_conditional_phi(k, phi, params, adj)
            omean, ovar = conditional_from_joint(k, phi, mu, tau2, dense)
            assert mean == pytest.approx(omean, abs=1e-8)
            assert var == pytest.approx(ovar, abs=1e-8)

    def test_index_out_of_range(self):
        g = _graph(2, [(0, 1)])
        with pytest.raises(ValidationError):
            full_conditional_phi(5, np.zeros(2), CarParams(0.0, 1.0),
                                 all_ones_adj(g))


class TestCarParams:
    def test_tau2_positive(self):
        with pytest.raises(ValidationError):
            CarParams(mu=0.0, tau2=0.0)

    def test_rho_range(self):
        with pytest.raises(ValidationError):
            CarParams(mu=0.0, tau2=1.0, rho=1.0)

    def test_alpha_nonnegative(self):
        with pytest.raises(ValidationError):
            CarParams(mu=0.0, tau2=1.0, alpha=np.array([-0.1]))
