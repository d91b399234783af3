import math

import numpy as np
import pytest

from artifact.bootstrap_engine import CountTable, DatasetMatrix, ScaleGrid, default_scale_grid
from artifact.hclust import (
    ClusterId,
    DistanceMatrix,
    annotated_newick,
    assess_counts,
    average_linkage,
    canonical_rows,
    clusters_of,
    distance,
    mixture_dataset,
    mixture_sim,
    mixture_study,
    multiscale_cluster_counts,
    pvclust_run,
    report_rows,
)

from conftest import lung_table


def leaves(*labels):
    return ClusterId.of(str(x) for x in labels)


class TestDistance:
    def test_identical_columns(self):
        x = np.random.default_rng(0).normal(size=(20, 3))
        x[:, 2] = x[:, 0]
        d = distance(DatasetMatrix.from_array(x)).square()
        assert d[0, 2] == 0.0

    def test_mean_squared_difference(self):
        d = distance(DatasetMatrix.from_array([[0.0, 2.0, 1.0], [0.0, 2.0, 1.0]]))
        assert d.square()[0, 1] == 4.0

    def test_population_limit(self):
        a = 1.0
        d = distance(mixture_sim(a, 200000, 1)).square()
        assert d[0, 1] == pytest.approx(a * a / 2 + 2, abs=0.05)
        assert d[0, 2] == pytest.approx(a * a / 2 + 2, abs=0.05)
        assert d[1, 2] == pytest.approx(a * a + 2, abs=0.05)

    def test_correlation(self):
        x = np.random.default_rng(1).normal(size=(50, 3))
        d = distance(DatasetMatrix.from_array(x), "correlation").square()
        assert d[0, 1] == pytest.approx(1 - np.corrcoef(x[:, 0], x[:, 1])[0, 1], abs=1e-12)

    def test_constant_column_named(self):
        x = np.random.default_rng(1).normal(size=(10, 3))
        x[:, 1] = 3.0
        with pytest.raises(ValueError, match="c2"):
            distance(DatasetMatrix.from_array(x), "correlation")

    def test_matrix_validation(self):
        with pytest.raises(ValueError):
            DistanceMatrix.from_square([[0, 1, 2], [1, 0, 3], [2, 4, 0]])
        with pytest.raises(ValueError):
            DistanceMatrix(np.array([1.0, -1.0, 2.0]), 3, "custom")


class TestLinkage:
    def test_hand_example(self):
        d = DistanceMatrix.from_square([[0, 1, 4], [1, 0, 5], [4, 5, 0]])
        dend = average_linkage(d)
        assert dend.cluster(0) == ClusterId.of([1, 2])
        assert np.allclose(dend.heights, [1.0, 4.5])

    def test_ties_go_to_smallest_pair(self):
        d = DistanceMatrix(np.ones(6), 4, "custom")
        dend = average_linkage(d)
        assert dend.cluster(0) == ClusterId.of([1, 2])
        assert dend.cluster(1) == ClusterId.of([1, 2, 3])

    def test_population_merges_first_with_one(self):
        d = DistanceMatrix.from_square([[0, 2.5, 2.5], [2.5, 0, 3.0], [2.5, 3.0, 0]])
        assert average_linkage(d).cluster(0) in (ClusterId.of([1, 2]), ClusterId.of([1, 3]))

    def test_heights_monotone(self):
        x = np.random.default_rng(2).normal(size=(30, 12))
        dend = average_linkage(distance(DatasetMatrix.from_array(x)))
        assert np.all(np.diff(dend.heights) >= 0) and not dend.flags

    def test_matches_scipy_average_linkage(self):
        from scipy.cluster.hierarchy import linkage

        x = np.random.default_rng(3).normal(size=(40, 9))
        d = distance(DatasetMatrix.from_array(x))
        ref = linkage(d.condensed, "average")
        assert np.allclose(average_linkage(d).heights, ref[:, 2])


class TestClusters:
    def test_count(self):
        x = np.random.default_rng(4).normal(size=(5, 73))
        assert len(clusters_of(average_linkage(distance(DatasetMatrix.from_array(x))))) == 71
        assert len(clusters_of(average_linkage(DistanceMatrix(np.array([1.0, 2.0, 3.0]), 3, "c")))) == 1

    def test_nested(self):
        x = np.random.default_rng(5).normal(size=(8, 10))
        dend = average_linkage(distance(DatasetMatrix.from_array(x)))
        seen = [frozenset([lab]) for lab in dend.labels]
        for g in clusters_of(dend):
            parts = [s for s in seen if s <= g.members]
            assert frozenset().union(*parts) == g.members
            seen.append(g.members)

    def test_identity_is_set_equality(self):
        assert ClusterId.of(["b", "a"]) == ClusterId.of(["a", "b"])
        assert str(ClusterId.of([3, 1])) == "{1,3}"

    def test_newick(self):
        d = DistanceMatrix.from_square([[0, 1, 4], [1, 0, 5], [4, 5, 0]])
        dend = average_linkage(d, ["x", "y", "z"])
        assert dend.newick() == "(z,(x,y));" or dend.newick() == "((x,y),z);"


class TestCounts:
    grid = default_scale_grid(300)

    def test_separated_pair_near_one(self):
        rng = np.random.default_rng(6)
        base = rng.normal(size=(300, 1))
        x = np.hstack([base, base + 0.05 * rng.normal(size=(300, 1)), 3 + rng.normal(size=(300, 1))])
        data = DatasetMatrix.from_array(x, ["1", "2", "3"])
        (ct,) = multiscale_cluster_counts(data, [leaves(1, 2)], self.grid, 200, 1)
        assert ct.frequency[6] > 0.99

    def test_absent_target_countable(self):
        data = mixture_sim(2.0, 300, 2)
        first = average_linkage(distance(data), data.col_labels).cluster(0)
        other = leaves(2, 3) if first != leaves(2, 3) else leaves(1, 2)
        tables = multiscale_cluster_counts(data, [first, other], self.grid, 200, 3)
        assert tables[1].C[6] < tables[0].C[6]

    def test_seeded_and_permutation_invariant(self):
        data = mixture_sim(0.3, 300, 7)
        targets = [leaves(1, 2), leaves(1, 3), leaves(2, 3)]
        a = multiscale_cluster_counts(data, targets, self.grid, 150, 11)
        assert a == multiscale_cluster_counts(data, targets, self.grid, 150, 11)
        perm = np.random.default_rng(0).permutation(300)
        shuffled = DatasetMatrix.from_array(data.values[perm][:, [1, 2, 0]], ["2", "3", "1"])
        assert a == multiscale_cluster_counts(shuffled, targets, self.grid, 150, 11)
        # with p = 3 exactly one of the three pairs forms first
        total = sum(t.C for t in a)
        assert np.array_equal(total, a[0].B)

    def test_canonical_rows(self):
        x = np.random.default_rng(8).normal(size=(10, 3))
        assert np.array_equal(canonical_rows(x), canonical_rows(x[::-1][:, [2, 1, 0]])[:, [2, 1, 0]])

    def test_requires_nprime(self):
        with pytest.raises(ValueError):
            multiscale_cluster_counts(mixture_sim(0.0, 50, 0), [leaves(1, 2)], ScaleGrid.parametric([1.0]), 10, 0)


class TestMixture:
    def test_moments(self):
        a, n = 1.5, 40000
        x = mixture_sim(a, n, 3).values
        assert np.allclose(x.mean(axis=0), [a, a / 2, a / 2], atol=4 * 1.3 / math.sqrt(n))
        cov = np.cov(x.T)
        assert np.allclose(cov, [[1, 0, 0], [0, 1 + a * a / 4, -a * a / 4], [0, -a * a / 4, 1 + a * a / 4]], atol=0.05)

    def test_cluster_frequencies_at_zero(self):
        counts = {}
        N = 600
        for rep in range(N):
            x = mixture_dataset(0.0, 200, 12, rep)
            d = distance(DatasetMatrix.from_array(x, ["1", "2", "3"]))
            g = str(average_linkage(d, ["1", "2", "3"]).cluster(0))
            counts[g] = counts.get(g, 0) + 1
        assert sum(counts.values()) == N
        se = math.sqrt(N * (1 / 3) * (2 / 3))
        for g in ("{1,2}", "{1,3}", "{2,3}"):
            assert abs(counts.get(g, 0) - N / 3) <= 4 * se

    def test_small_study(self):
        st = mixture_study(1.0, 200, 20, 200, seed=1)
        sel = st.selection_probability()
        assert sum(st.selected.values()) <= 20
        assert all(0 <= v <= 1 for v in sel.values())
        for m, rates in st.rates().items():
            for c, r in rates.items():
                assert math.isnan(r) or 0 <= r <= 1


class TestReports:
    def test_lung_57(self):
        rep = assess_counts(lung_table(57))
        assert rep.model == "poly.3"
        assert 1 - rep.p_si == pytest.approx(0.799, abs=0.01)

    def test_lung_67(self):
        rep = assess_counts(lung_table(67))
        assert rep.model == "sing.3" and rep.p_si == 1.0 and "clamped_si" in rep.flags

    def test_always_present_cluster(self):
        g = default_scale_grid(916)
        rep = assess_counts(CountTable(g.sigma2, 1000, np.full(13, 1000), g.nprime))
        assert rep.flags == {"degenerate_fit"} and rep.p_bp == 0.0
        assert math.isnan(rep.p_au) and math.isnan(rep.p_si)

    def test_pvclust_run(self):
        data = mixture_sim(1.0, 1000, 5)
        dend, reports = pvclust_run(data, B=300, seed=2)
        assert len(reports) == 1
        rows = report_rows(reports)
        assert set(rows[0]) == {"cluster_id", "members", "bp", "au", "si", "t", "gamma", "model", "flags"}
        r = reports[0].report
        assert 0 <= r.p_bp <= 1 and 0 <= r.p_au <= 1 and 0 <= r.p_si <= 1
        nw = annotated_newick(dend, reports)
        assert nw.endswith(";") and nw.count("[") == 1

    def test_separated_pair_supported(self):
        rng = np.random.default_rng(9)
        base = rng.normal(size=(400, 1))
        x = np.hstack([base, base + 0.1 * rng.normal(size=(400, 1)), 4 + rng.normal(size=(400, 1))])
        _, reports = pvclust_run(DatasetMatrix.from_array(x, ["1", "2", "3"]), B=500, seed=3)
        rep = reports[0]
        assert rep.cluster == leaves(1, 2)
        assert 1 - rep.report.p_si > 0.99 or "degenerate_fit" in rep.report.flags
