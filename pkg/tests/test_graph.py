import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from womble import (AreaGraph, ConstantMetricError, DissimilarityData,
                    ValidationError, alpha_min, alpha_natural_limit,
                    alpha_prior_upper, build_graph, compute_border_metrics,
                    evaluate_w)

LN2 = np.log(2.0)


class TestBuildGraph:
    def test_matrix_transcription(self):
        g = build_graph(np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]]))
        assert g.n == 3
        assert [tuple(b) for b in g.borders] == [(0, 1), (1, 2)]

    def test_four_cycle_pairs(self):
        g = build_graph([(0, 1), (1, 2), (2, 3), (3, 0)])
        assert g.n_borders == 4
        assert g.n_components == 1

    def test_disjoint_edges_components(self):
        g = build_graph([(0, 1), (2, 3)])
        assert g.n_components == 2

    def test_unordered_normalization(self):
        g = build_graph([(1, 0), (2, 1)])
        assert [tuple(b) for b in g.borders] == [(0, 1), (1, 2)]

    def test_asymmetric_matrix_rejected(self):
        with pytest.raises(ValidationError, match="symmetric"):
            build_graph(np.array([[0, 1], [0, 0]]))

    def test_nonzero_diagonal_rejected(self):
        with pytest.raises(ValidationError, match="diagonal"):
            build_graph(np.array([[1, 1], [1, 0]]))

    def test_self_loop_rejected(self):
        with pytest.raises(ValidationError, match="self-loop"):
            build_graph([(0, 0), (1, 2)])

    def test_ambiguous_2x2_zero_one_is_matrix(self):
        # a 2x2 all-0/1 input reads as a matrix, not as two index pairs
        g = build_graph(np.array([(0, 1), (1, 0)]))
        assert g.n == 2 and g.n_borders == 1

    def test_out_of_range_rejected(self):
        with pytest.raises(ValidationError):
            AreaGraph(2, np.array([[0, 5]]))

    def test_duplicate_rejected(self):
        with pytest.raises(ValidationError, match="duplicate"):
            build_graph([(0, 1), (1, 0), (1, 2)])

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            build_graph(np.zeros((0, 0)))

    def test_isolated_areas_fine_via_matrix(self):
        mat = np.zeros((3, 3), dtype=int)
        mat[0, 1] = mat[1, 0] = 1
        g = build_graph(mat)
        assert g.n == 3 and g.n_borders == 1 and g.n_components == 2

    def test_coloring_is_proper(self):
        g = build_graph([(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)])
        color_of = {}
        for c, members in enumerate(g.coloring):
            for k in members:
                color_of[k] = c
        for k, j in g.borders:
            assert color_of[k] != color_of[j]


class TestBorderMetrics:
    def test_single_border_rejected(self):
        g = AreaGraph(2, np.array([[0, 1]]))
        with pytest.raises(ValidationError, match="fewer than 2 borders"):
            compute_border_metrics(g, np.array([1.0, 3.0]))

    def test_sample_sd_standardization(self):
        # raw absolute differences 2 and 4 -> sample SD sqrt(2)
        g = build_graph([(0, 1), (1, 2)])
        dis = compute_border_metrics(g, np.array([0.0, 2.0, 6.0]))
        assert dis.scales[0] == pytest.approx(np.sqrt(2.0))
        np.testing.assert_allclose(dis.border_metrics[:, 0],
                                   [2.0 / np.sqrt(2), 4.0 / np.sqrt(2)])

    def test_identical_neighbours_get_zero(self):
        g = build_graph([(0, 1), (1, 2), (2, 3)])
        dis = compute_border_metrics(g, np.array([5.0, 5.0, 1.0, 3.0]))
        assert dis.border_metrics[0, 0] == 0.0

    def test_constant_metric_rejected_by_name(self):
        g = build_graph([(0, 1), (1, 2)])
        with pytest.raises(ConstantMetricError, match="flat"):
            compute_border_metrics(g, np.array([[0.0, 0], [1, 1], [3, 2]]),
                                   metric_names=["ok", "flat"])

    def test_missing_values_rejected(self):
        g = build_graph([(0, 1), (1, 2)])
        with pytest.raises(ValidationError, match="missing"):
            compute_border_metrics(g, np.array([0.0, np.nan, 1.0]))

    def test_border_value_constructor_matches(self):
        g = build_graph([(0, 1), (1, 2)])
        direct = DissimilarityData.from_border_values(g, np.array([2.0, 4.0]))
        via_cov = compute_border_metrics(g, np.array([0.0, 2.0, 6.0]))
        np.testing.assert_allclose(direct.border_metrics, via_cov.border_metrics)


class TestEvaluateW:
    def setup_method(self):
        self.g = build_graph([(0, 1), (1, 2), (2, 3)])
        self.dis = DissimilarityData(
            q=1, metric_names=("m",),
            border_metrics=np.array([[0.0], [2.0], [4.0]]),
            scales=np.array([1.0]))

    def test_alpha_zero_keeps_everything(self):
        adj = evaluate_w(self.g, self.dis, np.array([0.0]))
        assert adj.boundary_count == 0
        assert adj.w.tolist() == [1, 1, 1]

    def test_zero_dissimilarity_never_boundary(self):
        adj = evaluate_w(self.g, self.dis, np.array([100.0]))
        assert adj.w[0] == 1
        assert adj.boundary_count == 2

    def test_tie_at_half_keeps_border(self):
        # z = 2, alpha = ln(2)/2: exp(-ln 2) = 0.5 exactly -> keep
        adj = evaluate_w(self.g, self.dis, np.array([LN2 / 2.0]))
        assert adj.w[1] == 1
        assert adj.w[2] == 0  # z = 4 is strictly past the tie

    def test_negative_alpha_rejected(self):
        with pytest.raises(ValidationError, match="non-negative"):
            evaluate_w(self.g, self.dis, np.array([-0.1]))

    def test_row_sums_count_retained_borders(self):
        adj = evaluate_w(self.g, self.dis, np.array([LN2 / 2.0]))
        # borders kept: (0,1), (1,2); severed: (2,3)
        assert adj.row_sums.tolist() == [1, 2, 1, 0]


class TestAlphaThresholds:
    def _dis(self, values):
        g = build_graph([(k, k + 1) for k in range(len(values))])
        return DissimilarityData(
            q=1, metric_names=("m",),
            border_metrics=np.asarray(values, dtype=float)[:, None],
            scales=np.array([1.0]))

    def test_alpha_min_matches_reported_threshold(self):
        # a metric maxing at ln(2)/0.131 has no-effect threshold 0.131
        dis = self._dis([1.0, LN2 / 0.131])
        assert alpha_min(dis, 0) == pytest.approx(0.131)

    def test_alpha_min_unit_max(self):
        dis = self._dis([0.3, 1.0])
        assert alpha_min(dis, 0) == pytest.approx(np.log(2.0))

    def test_alpha_min_closed_form(self):
        dis = self._dis([0.1, 2.0 * LN2])
        assert alpha_min(dis, 0) == pytest.approx(0.5)

    def test_alpha_min_all_zero_metric(self):
        dis = self._dis([0.0, 0.0])
        with pytest.raises(ValidationError, match="zero on every border"):
            alpha_min(dis, 0)

    def test_prior_upper_half_fraction(self):
        dis = self._dis([1.0, 2.0, 3.0, 4.0])
        m = alpha_prior_upper(dis, 0, 0.5)
        assert m == pytest.approx(LN2 / 2.0)
        # enumerate all four candidate thresholds: at alpha = M at most half
        # of the borders are severed, and M is the largest such candidate
        g = dis  # metric values are the thresholds' source
        counts = {}
        for z in [1.0, 2.0, 3.0, 4.0]:
            cand = LN2 / z
            severed = int(np.sum(g.border_metrics[:, 0] * cand > LN2))
            counts[cand] = severed
        assert counts[m] <= 2
        larger = [c for c in counts if c > m]
        assert all(counts[c] > 2 for c in larger)

    def test_prior_upper_full_fraction_is_natural_limit(self):
        dis = self._dis([1.0, 2.0, 3.0, 4.0])
        assert alpha_prior_upper(dis, 0, 1.0) == pytest.approx(LN2 / 1.0)
        assert alpha_natural_limit(dis, 0) == pytest.approx(LN2 / 1.0)

    def test_single_border_full_fraction(self):
        dis = DissimilarityData(q=1, metric_names=("m",),
                                border_metrics=np.array([[2.5]]),
                                scales=np.array([1.0]))
        assert alpha_prior_upper(dis, 0, 1.0) == pytest.approx(LN2 / 2.5)

    def test_zero_quantile_rejected(self):
        dis = self._dis([0.0, 0.0, 1.0, 2.0])
        with pytest.raises(ValidationError, match="zero"):
            alpha_prior_upper(dis, 0, 0.75)

    def test_natural_limit_ignores_zero_values(self):
        dis = self._dis([0.0, 0.5, 2.0])
        assert alpha_natural_limit(dis, 0) == pytest.approx(LN2 / 0.5)


class TestAdjacencyProperties:
    """Adjacency-rule invariants, property-tested."""

    @given(st.integers(min_value=0, max_value=2 ** 32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_boundary_count_monotone_in_alpha(self, seed):
        rng = np.random.default_rng(seed)
        b = int(rng.integers(2, 12))
        g = build_graph([(k, k + 1) for k in range(b)])
        q = int(rng.integers(1, 4))
        metrics = rng.gamma(1.0, 1.0, size=(b, q))
        dis = DissimilarityData(q=q, metric_names=tuple(f"m{i}" for i in range(q)),
                                border_metrics=metrics, scales=np.ones(q))
        a_lo = rng.uniform(0.0, 2.0, size=q)
        a_hi = a_lo + rng.uniform(0.0, 2.0, size=q)
        lo = evaluate_w(g, dis, a_lo).boundary_count
        hi = evaluate_w(g, dis, a_hi).boundary_count
        assert lo <= hi

    @given(st.integers(min_value=0, max_value=2 ** 32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_single_metric_exact_endpoints(self, seed):
        rng = np.random.default_rng(seed)
        b = int(rng.integers(2, 15))
        g = build_graph([(k, k + 1) for k in range(b)])
        z = rng.gamma(1.0, 1.0, size=b)
        z[rng.random(b) < 0.2] = 0.0
        if z.max() == 0.0:
            z[0] = 1.0
        dis = DissimilarityData(q=1, metric_names=("m",),
                                border_metrics=z[:, None], scales=np.ones(1))
        amin = alpha_min(dis, 0)
        assert evaluate_w(g, dis, np.array([amin])).boundary_count == 0
        upper = alpha_natural_limit(dis, 0)
        adj = evaluate_w(g, dis, np.array([upper * (1 + 1e-9)]))
        assert adj.boundary_count == int(np.sum(z > 0))

    @given(st.integers(min_value=0, max_value=2 ** 32 - 1),
           st.sampled_from([0.25, 0.5, 0.75, 1.0]))
    @settings(max_examples=40, deadline=None)
    def test_single_metric_fraction_bound_at_prior_cap(self, seed, fraction):
        # for a single metric with alpha <= M, the severed fraction stays
        # within the configured cap (multi-metric runs compound and may not)
        rng = np.random.default_rng(seed)
        b = int(rng.integers(2, 25))
        g = build_graph([(k, k + 1) for k in range(b)])
        z = rng.gamma(1.0, 1.0, size=b) + 1e-6
        dis = DissimilarityData(q=1, metric_names=("m",),
                                border_metrics=z[:, None], scales=np.ones(1))
        m = alpha_prior_upper(dis, 0, fraction)
        for a in (m, 0.5 * m, 0.0):
            adj = evaluate_w(g, dis, np.array([a]))
            assert adj.boundary_count <= fraction * b + 1e-9

    @given(st.floats(min_value=1e-3, max_value=1e3),
           st.integers(min_value=0, max_value=2 ** 32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_covariate_rescaling_invariance(self, c, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 10))
        g = build_graph([(k, k + 1) for k in range(n - 1)])
        cov = rng.normal(size=(n, 2))
        dis1 = compute_border_metrics(g, cov)
        cov2 = cov.copy()
        cov2[:, 0] *= c
        dis2 = compute_border_metrics(g, cov2)
        np.testing.assert_allclose(dis1.border_metrics, dis2.border_metrics,
                                   rtol=1e-10)
        alpha = rng.uniform(0, 2, size=2)
        w1 = evaluate_w(g, dis1, alpha).w
        w2 = evaluate_w(g, dis2, alpha).w
        np.testing.assert_array_equal(w1, w2)
