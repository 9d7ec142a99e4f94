import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from langxfer.stats import (DistanceTable, average_ranks, commutativity,
                            correlate, permutation_pvalue, spearman_rho)


def brute_force_rho(x, y):
    """Pearson correlation of average ranks, straight from the definition."""
    def ranks(v):
        out = []
        for vi in v:
            less = sum(1 for u in v if u < vi)
            equal = sum(1 for u in v if u == vi)
            out.append(less + (equal + 1) / 2)
        return out

    rx, ry = ranks(x), ranks(y)
    mx = sum(rx) / len(rx)
    my = sum(ry) / len(ry)
    num = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    den = math.sqrt(sum((a - mx) ** 2 for a in rx) * sum((b - my) ** 2 for b in ry))
    return num / den


class TestSpearman:
    def test_identical_ranking(self):
        assert spearman_rho([1, 5, 9], [10, 50, 90]) == pytest.approx(1.0)

    def test_reversed_ranking(self):
        assert spearman_rho([1, 2, 3, 4], [9, 7, 5, 3]) == pytest.approx(-1.0)

    def test_rank_formula_case(self):
        # ranks differ by d = (1,1,1,1,0): rho = 1 - 6*4/(5*24) = 0.8
        assert spearman_rho([1, 2, 3, 4, 5], [2, 1, 4, 3, 5]) == pytest.approx(0.8)

    def test_matches_exhaustive_definition_for_all_small_permutations(self):
        for n in (3, 4, 5, 6):
            x = list(range(1, n + 1))
            for perm in itertools.permutations(x):
                assert spearman_rho(x, perm) == pytest.approx(
                    brute_force_rho(x, perm), abs=1e-12)

    def test_ties_use_average_ranks(self):
        assert average_ranks([10, 20, 20, 30]).tolist() == [1.0, 2.5, 2.5, 4.0]
        assert spearman_rho([1, 2, 2, 3], [1, 2, 2, 3]) == pytest.approx(1.0)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            spearman_rho([1, 2, 3], [1, 2])

    def test_too_short(self):
        with pytest.raises(ValueError):
            spearman_rho([1, 2], [1, 2])

    def test_constant_vector_rejected(self):
        with pytest.raises(ValueError, match="constant"):
            spearman_rho([1, 1, 1], [1, 2, 3])

    @given(st.lists(st.integers(-50, 50), min_size=4, max_size=12, unique=True),
           st.integers(0, 2**31),
           st.sampled_from([lambda v: v * 3 + 2, lambda v: v ** 3,
                            lambda v: np.exp(v / 10)]))
    @settings(max_examples=40, deadline=None)
    def test_invariant_under_monotone_transform(self, xs, seed, transform):
        # well-separated inputs so the transforms stay strictly monotone in floats
        ys = np.random.default_rng(seed).permutation(len(xs)).astype(float)
        base = spearman_rho(xs, ys)
        assert spearman_rho(transform(np.asarray(xs, dtype=np.float64)), ys) \
            == pytest.approx(base, abs=1e-9)


class TestPermutationPValue:
    def test_monotone_pair_is_significant(self):
        p = permutation_pvalue(np.arange(10.0), np.arange(10.0) * 2 + 1,
                               n_permutations=10_000, seed=0)
        assert p <= 0.001

    def test_zero_permutations_degenerate(self):
        assert permutation_pvalue([1, 2, 3], [1, 2, 3], n_permutations=0) == 1.0

    def test_in_unit_interval_and_reproducible(self):
        rng = np.random.default_rng(5)
        x, y = rng.random(8), rng.random(8)
        p1 = permutation_pvalue(x, y, n_permutations=500, seed=42)
        p2 = permutation_pvalue(x, y, n_permutations=500, seed=42)
        assert p1 == p2
        assert 0 < p1 <= 1

    def test_null_calibration(self):
        # independent x, y: p should exceed 0.05 in the vast majority of trials
        hits = 0
        for trial in range(100):
            rng = np.random.default_rng([7, trial])
            x = rng.random(12)
            y = rng.random(12)
            p = permutation_pvalue(x, y, n_permutations=300, seed=trial)
            hits += p > 0.05
        assert hits >= 90


class TestCorrelate:
    def records(self):
        recs = []
        for i, (s, t) in enumerate([("a", "x"), ("a", "y"), ("b", "x"),
                                    ("b", "y"), ("c", "x"), ("c", "y")]):
            for rung in (100, 1000):
                recs.append({"source": s, "target": t, "rung_bytes": rung,
                             "dt_bytes": 10.0 * (i + 1) + rung / 1000})
        return recs

    def test_perfect_covariate(self):
        recs = self.records()
        cov = {(r["source"], r["target"]): r["dt_bytes"] for r in recs
               if r["rung_bytes"] == 100}
        res = correlate(recs, "self", cov, exclude_largest_rung=True,
                        n_permutations=200, seed=0)
        assert res.rho == pytest.approx(1.0)
        assert res.excluded_rungs == [1000]
        assert res.n_observations == 6

    def test_exclude_largest_rung_filters(self):
        recs = self.records()
        cov = {(s, t): 1.0 + i for i, (s, t) in
               enumerate({(r["source"], r["target"]) for r in recs})}
        res = correlate(recs, "c", cov, exclude_largest_rung=False,
                        n_permutations=100, seed=0)
        assert res.n_observations == 12
        assert res.excluded_rungs == []

    def test_insufficient_observations(self):
        with pytest.raises(ValueError, match="need >= 3"):
            correlate([{"source": "a", "target": "b", "rung_bytes": 1,
                        "dt_bytes": 1.0}], "c", {("a", "b"): 1.0},
                      exclude_largest_rung=False)


class TestCommutativity:
    def test_published_matrix_deltas(self):
        table = {("en", "ru"): 75.64, ("ru", "en"): 174.63,
                 ("en", "zh"): 29.21, ("zh", "en"): 66.96,
                 ("ru", "zh"): 26.18, ("zh", "ru"): 48.47}
        rows = commutativity(table, unit="MiB").rows
        deltas = {(r["l1"], r["l2"]): round(r["delta"], 2) for r in rows}
        assert deltas == {("en", "ru"): 98.99, ("en", "zh"): 37.75,
                          ("ru", "zh"): 22.29}

    def test_symmetric_input_zero_delta(self):
        rows = commutativity({("a", "b"): 5.0, ("b", "a"): 5.0}).rows
        assert rows[0]["delta"] == 0.0

    def test_requires_bidirectional_pair(self):
        with pytest.raises(ValueError, match="both directions"):
            commutativity({("a", "b"): 5.0})


class TestDistanceTable:
    def test_load_and_symmetry(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("measure,lang1,lang2,value\n"
                     "syntactic,en,es,0.4\nsyntactic,en,zh,0.9\n"
                     "geographic,en,es,0.3\n")
        table = DistanceTable.load(p)
        assert table.get("syntactic", "es", "en") == 0.4
        assert table.get("syntactic", "en", "en") == 0.0
        assert table.measures == ["geographic", "syntactic"]

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="outside"):
            DistanceTable({("m", "a", "b"): 1.5})

    def test_asymmetry_rejected(self):
        with pytest.raises(ValueError, match="asymmetric"):
            DistanceTable({("m", "a", "b"): 0.5, ("m", "b", "a"): 0.6})


def test_overlap_graded_records_correlate_with_distance():
    # constructed transfer records over sources of graded vocabulary overlap
    # with the target; 1 - overlap plays the role of a language distance, so
    # the correlation of D_T with it should come out strongly negative
    overlaps = {"o0": 0.0, "o25": 0.25, "o50": 0.5, "o75": 0.75, "o100": 1.0}
    records = []
    distance = {}
    for tag, overlap in overlaps.items():
        for rung in (60_000, 200_000):
            records.append({"source": tag, "target": "tgt", "rung_bytes": rung,
                            "dt_bytes": 100_000.0 * overlap + rung / 10.0})
        distance[(tag, "tgt")] = 1.0 - overlap
    result = correlate(records, "distance:vocab", distance,
                       exclude_largest_rung=True, n_permutations=500, seed=3)
    assert result.rho == pytest.approx(-1.0)
    assert result.n_observations == 5
