import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import cs_cost_loops, exhaustive_hard_minimizer, same_partition, two_clouds
from srrm.clustering import (
    ClusterConfig,
    FeatureMatrix,
    affinity_matrix,
    cluster,
    cs_cost,
    cs_gradient,
    gaussian_affinity,
    hard_assign,
    init_memberships,
    mean_row_entropy,
    median_width,
    project_simplex,
    read_memberships,
    simplex_tangent,
    write_memberships,
)
from srrm.errors import DegenerateClusterError, DomainError, ParseError


def interior_memberships(rng, n, k, floor=0.01):
    m = rng.dirichlet(np.ones(k), size=n)
    m = floor + (1 - k * floor) * m
    return m


class TestAffinity:
    def test_self_affinity(self):
        assert gaussian_affinity([1.0, 2.0], [1.0, 2.0], 0.7) == 1.0

    def test_two_sigma_apart(self):
        sigma = 0.8
        assert gaussian_affinity([0.0, 0.0], [2 * sigma, 0.0], sigma) == pytest.approx(np.exp(-1), abs=1e-12)

    def test_symmetric_and_bounded(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a, b = rng.normal(size=3), rng.normal(size=3)
            v = gaussian_affinity(a, b, 1.3)
            assert v == gaussian_affinity(b, a, 1.3)
            assert 0 < v <= 1

    def test_dimension_mismatch(self):
        with pytest.raises(DomainError):
            gaussian_affinity([1.0], [1.0, 2.0], 1.0)

    def test_matrix_matches_pairwise(self):
        x = np.random.default_rng(1).normal(size=(6, 2))
        g = affinity_matrix(x, 0.9)
        for i in range(6):
            for j in range(6):
                assert g[i, j] == pytest.approx(gaussian_affinity(x[i], x[j], 0.9), rel=1e-14)

    def test_median_width(self):
        x = np.array([[0.0], [1.0], [3.0]])
        assert median_width(x) == 2.0


class TestCost:
    def test_two_identical_points(self):
        x = np.zeros((2, 1))
        m = np.eye(2)
        assert cs_cost(m, x, ClusterConfig(n_clusters=2, kernel_width=1.0)) == pytest.approx(1.0)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            x = rng.normal(size=(7, 2))
            m = interior_memberships(rng, 7, 3)
            cfg = ClusterConfig(n_clusters=3, kernel_width=0.8, entropy_weight=0.3)
            assert cs_cost(m, x, cfg) == pytest.approx(cs_cost_loops(m, x, 0.8, 0.3), rel=1e-12)

    def test_uniform_memberships_entropy_penalty(self):
        # the entropy term enters as -mu * sum(m log m) = +mu * H, so uniform rows cost mu * N * log K more
        rng = np.random.default_rng(3)
        x = rng.normal(size=(9, 2))
        m = np.full((9, 3), 1 / 3)
        base = cs_cost(m, x, ClusterConfig(n_clusters=3, kernel_width=1.0))
        reg = cs_cost(m, x, ClusterConfig(n_clusters=3, kernel_width=1.0, entropy_weight=0.5))
        assert reg - base == pytest.approx(0.5 * 9 * np.log(3), rel=1e-12)

    def test_hard_row_has_no_entropy(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(5, 2))
        m = interior_memberships(rng, 5, 2)
        m[0] = [1.0, 0.0]
        cfg0 = ClusterConfig(n_clusters=2, kernel_width=1.0)
        cfg1 = ClusterConfig(n_clusters=2, kernel_width=1.0, entropy_weight=2.0)
        ent_rest = -np.sum(m[1:] * np.log(m[1:]))
        assert cs_cost(m, x, cfg1) - cs_cost(m, x, cfg0) == pytest.approx(2.0 * ent_rest, rel=1e-12)

    def test_label_permutation_invariance(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(8, 3))
        m = interior_memberships(rng, 8, 4)
        cfg = ClusterConfig(n_clusters=4, kernel_width=1.1, entropy_weight=0.2)
        for perm in ([1, 0, 2, 3], [3, 2, 1, 0], [2, 3, 0, 1]):
            assert cs_cost(m[:, perm], x, cfg) == pytest.approx(cs_cost(m, x, cfg), rel=1e-13)

    def test_empty_cluster(self):
        x = np.random.default_rng(6).normal(size=(4, 2))
        m = np.array([[1.0, 0.0]] * 4)
        with pytest.raises(DegenerateClusterError) as info:
            cs_cost(m, x, ClusterConfig(n_clusters=2, kernel_width=1.0))
        assert info.value.clusters == [1]


class TestGradient:
    def test_central_differences(self):
        rng = np.random.default_rng(7)
        h = 1e-6
        for _ in range(10):
            x = rng.normal(size=(10, 2))
            m = interior_memberships(rng, 10, 3)
            cfg = ClusterConfig(n_clusters=3, kernel_width=1.0, entropy_weight=0.05)
            g = affinity_matrix(x, 1.0)
            grad = cs_gradient(m, x, cfg, affinity=g)
            for i in range(10):
                for k in range(3):
                    up, dn = m.copy(), m.copy()
                    up[i, k] += h
                    dn[i, k] -= h
                    fd = (cs_cost(up, x, cfg, affinity=g) - cs_cost(dn, x, cfg, affinity=g)) / (2 * h)
                    assert abs(grad[i, k] - fd) / (1 + abs(grad[i, k])) < 1e-5

    def test_single_cluster_has_no_tangent_component(self):
        x = np.random.default_rng(8).normal(size=(6, 2))
        grad = cs_gradient(np.ones((6, 1)), x, ClusterConfig(n_clusters=1, kernel_width=1.0))
        assert np.all(simplex_tangent(grad) == 0)

    def test_entropy_part(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(6, 2))
        m = interior_memberships(rng, 6, 3)
        mu = 0.7
        g0 = cs_gradient(m, x, ClusterConfig(n_clusters=3, kernel_width=1.0))
        g1 = cs_gradient(m, x, ClusterConfig(n_clusters=3, kernel_width=1.0, entropy_weight=mu))
        np.testing.assert_allclose(g1 - g0, -mu * (np.log(m) + 1), rtol=1e-12, atol=1e-12)

    def test_entropy_floor(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(4, 2))
        m = np.array([[1.0, 0.0], [0.5, 0.5], [0.2, 0.8], [0.0, 1.0]])
        cfg = ClusterConfig(n_clusters=2, kernel_width=1.0, entropy_weight=1.0, entropy_floor=1e-6)
        g = cs_gradient(m, x, cfg) - cs_gradient(m, x, ClusterConfig(n_clusters=2, kernel_width=1.0))
        assert g[0, 1] == pytest.approx(-(np.log(1e-6) + 1))
        assert np.all(np.isfinite(g))


class TestProjection:
    def test_feasible_rows_unchanged(self):
        m = init_memberships(20, 4, seed=1)
        assert np.array_equal(project_simplex(m), m)

    def test_known_projection(self):
        np.testing.assert_allclose(project_simplex([0.5, 0.5, 0.5]), [1 / 3] * 3)
        np.testing.assert_allclose(project_simplex([2.0, 0.0]), [1.0, 0.0])
        np.testing.assert_allclose(project_simplex([0.6, 0.6, -1.0]), [0.5, 0.5, 0.0])

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, (5, 4), elements=st.floats(-10, 10)))
    def test_on_simplex_and_idempotent(self, v):
        p = project_simplex(v)
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(project_simplex(p), p, atol=1e-15)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, 4, elements=st.floats(-5, 5)), st.integers(0, 2**31))
    def test_is_nearest_point(self, v, seed):
        p = project_simplex(v)
        others = np.random.default_rng(seed).dirichlet(np.ones(4), size=200)
        assert np.all(np.sum((others - v) ** 2, axis=1) >= np.sum((p - v) ** 2) - 1e-12)


class TestCluster:
    def test_two_clouds_match_exhaustive_oracle(self):
        for seed in range(5):
            x, truth = two_clouds(seed, n=10)
            result = cluster(x, ClusterConfig(n_clusters=2, kernel_width=1.0, seed=seed, batch_size=None))
            labels = hard_assign(result.memberships)
            best, _ = exhaustive_hard_minimizer(x, 1.0)
            assert same_partition(labels, best)
            assert same_partition(labels, truth)
            assert result.memberships.max(axis=1).min() >= 0.9
            assert np.all(np.isfinite(result.cost_trace))
            assert result.cost_trace[-1] < result.cost_trace[0]

    def test_deterministic(self):
        x = np.random.default_rng(11).normal(size=(60, 3))
        cfg = ClusterConfig(n_clusters=3, seed=4, batch_size=16, max_iterations=50)
        a, b = cluster(x, cfg), cluster(x, cfg)
        assert np.array_equal(a.memberships, b.memberships)
        assert np.array_equal(a.cost_trace, b.cost_trace)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(6, 80), st.integers(2, 5), st.integers(0, 10_000), st.sampled_from([None, 8]))
    def test_rows_stay_on_simplex(self, n, k, seed, batch):
        x = np.random.default_rng(seed).normal(size=(n, 2))
        cfg = ClusterConfig(n_clusters=k, seed=seed, batch_size=batch, max_iterations=40, step_size=0.2)
        try:
            m = cluster(x, cfg).memberships
        except DegenerateClusterError:
            return
        assert np.all(m >= 0)
        assert np.max(np.abs(m.sum(axis=1) - 1)) <= 1e-12

    def test_larger_entropy_weight_gives_sparser_rows(self):
        # minimising +mu*H drives rows toward the vertices as mu grows
        rng = np.random.default_rng(12)
        x = np.vstack([rng.normal(0, 1, (30, 2)), rng.normal(2.5, 1, (30, 2))])
        g = affinity_matrix(x, 1.0)
        base = ClusterConfig(n_clusters=2, kernel_width=1.0, seed=3, batch_size=None, tol=0)
        grad0 = cs_gradient(init_memberships(60, 2, seed=3), x, base, affinity=g)
        scale = np.mean(np.abs(simplex_tangent(grad0)))
        entropies = []
        for rel in (0.0, 0.5, 1.0, 2.0, 4.0):
            cfg = ClusterConfig(n_clusters=2, kernel_width=1.0, seed=3, batch_size=None, tol=0,
                                entropy_weight=rel * scale)
            entropies.append(mean_row_entropy(cluster(x, cfg, affinity=g).memberships))
        assert all(b <= a + 1e-12 for a, b in zip(entropies, entropies[1:]))

    def test_cost_never_increases(self):
        x = np.random.default_rng(14).normal(size=(120, 3))
        trace = cluster(x, ClusterConfig(n_clusters=4, seed=2, batch_size=32, step_size=0.5)).cost_trace
        assert np.all(np.diff(trace) <= 0)

    def test_wide_kernel_does_not_drain_clusters(self):
        # six overlapping clouds under a median-width kernel: full-size steps used to empty five clusters at once
        rng = np.random.default_rng(15)
        x = rng.uniform(-6, 6, size=(6, 3))[rng.integers(0, 6, size=223)] + rng.normal(size=(223, 3))
        m = cluster(x, ClusterConfig(n_clusters=6, seed=1, max_iterations=100)).memberships
        assert m.sum(axis=0).min() > 1.0

    def test_snapshots(self):
        x = np.random.default_rng(13).normal(size=(30, 2))
        r = cluster(x, ClusterConfig(n_clusters=2, seed=1, max_iterations=50), snapshot_every=10)
        assert sorted(r.snapshots) == [0, 10, 20, 30, 40, 50]
        assert len(r.cost_trace) == 51

    def test_too_few_points(self):
        with pytest.raises(DomainError):
            cluster(np.zeros((2, 1)), ClusterConfig(n_clusters=3))

    def test_invalid_config(self):
        with pytest.raises(DomainError):
            ClusterConfig(entropy_weight=-1)
        with pytest.raises(DomainError):
            ClusterConfig(kernel_width=0)


class TestHardAssign:
    def test_argmax(self):
        assert hard_assign(np.array([[0.2, 0.5, 0.3]]))[0] == 1

    def test_tie_lowest_index(self):
        assert hard_assign(np.array([[0.5, 0.5]]))[0] == 0

    def test_monotone_rescaling(self):
        m = init_memberships(30, 4, seed=2)
        assert np.array_equal(hard_assign(m), hard_assign(np.exp(3 * m) + 7))


def test_feature_matrix_inverse():
    rng = np.random.default_rng(14)
    raw = np.column_stack([rng.normal(300, 5, 20), rng.random(20), np.ones(20), np.linspace(0, 1, 20)])
    f = FeatureMatrix.from_raw(raw, ("LST", "PPT", "const", "x_scaled"), passthrough=("x_scaled",))
    np.testing.assert_allclose(f.inverse(), raw, rtol=1e-14)
    assert np.array_equal(f.values[:, 3], raw[:, 3])
    assert f.values[:, 0].std() == pytest.approx(1.0)


def test_feature_matrix_rejects_nan():
    with pytest.raises(DomainError):
        FeatureMatrix(np.array([[np.nan]]), ("a",), np.zeros(1), np.ones(1))


def test_membership_file_round_trip(tmp_path):
    m = init_memberships(7, 3, seed=5)
    write_memberships(m, tmp_path / "m.txt")
    assert np.array_equal(read_memberships(tmp_path / "m.txt"), m)
    (tmp_path / "bad.txt").write_text("2 2\n0.5 0.5\n0.5\n")
    with pytest.raises(ParseError):
        read_memberships(tmp_path / "bad.txt")
