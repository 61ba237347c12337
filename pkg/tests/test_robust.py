import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from riskcompute.cost import Category, CostLedger
from riskcompute.robust import (
    HlKind,
    HlVariant,
    default_subset_size,
    floyd_sample,
    hl_experiment,
    hl_full,
    hl_sample,
    hl_sequential,
    hl_subset,
    mean_prefix,
    quickselect,
    quickselect_median,
    unrank_pairs,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)
vectors = arrays(np.float64, st.integers(1, 200), elements=finite)


# -- selection ------------------------------------------------------------------


def test_quickselect_median_examples():
    assert quickselect_median([3, 1, 2], 0) == 2
    assert quickselect_median([1, 2, 3, 4], 0) == 2.5


def test_quickselect_median_empty():
    with pytest.raises(ValueError):
        quickselect_median([], 0)


@given(vectors, st.integers(0, 2**32 - 1))
def test_quickselect_median_matches_sort(v, seed):
    assert quickselect_median(v, seed) == np.median(v)


@given(vectors, st.data())
def test_quickselect_order_statistic(v, data):
    k = data.draw(st.integers(0, v.size - 1))
    assert quickselect(v, k, 1) == np.sort(v)[k]


@given(arrays(np.float64, st.integers(2, 300), elements=finite), st.integers(0, 1000))
def test_comparison_count_bounds(v, seed):
    ledger = CostLedger()
    quickselect(v, v.size // 2, seed, ledger)
    m = v.size
    assert m - 1 <= ledger[Category.COMPARISON] <= m * (m - 1) // 2


def test_quickselect_with_ties_counts_one_pass():
    ledger = CostLedger()
    assert quickselect(np.ones(50), 25, 0, ledger) == 1.0
    assert ledger[Category.COMPARISON] == 49


def test_quickselect_index_range():
    with pytest.raises(IndexError):
        quickselect([1.0, 2.0], 2)


# -- pair sampling helpers ----------------------------------------------------------


def test_unrank_pairs_enumerates_colex_order():
    m = 9
    i, j = unrank_pairs(np.arange(m * (m - 1) // 2))
    expected = sorted(combinations(range(m), 2), key=lambda ij: (ij[1], ij[0]))
    assert list(zip(i.tolist(), j.tolist())) == expected


def test_unrank_large_ranks():
    r = np.array([10**12, 10**12 + 1])
    i, j = unrank_pairs(r)
    np.testing.assert_array_equal(j * (j - 1) // 2 + i, r)
    assert np.all(i < j)


@given(st.integers(1, 500), st.data())
def test_floyd_sample_distinct_sorted(population, data):
    k = data.draw(st.integers(0, population))
    out = floyd_sample(population, k, np.random.default_rng(k))
    assert out.size == k == np.unique(out).size
    assert np.all(np.diff(out) > 0)
    assert k == 0 or (out[0] >= 0 and out[-1] < population)


def test_floyd_sample_is_uniform():
    rng = np.random.default_rng(0)
    counts = np.zeros(10)
    for _ in range(20_000):
        counts[floyd_sample(10, 3, rng)] += 1
    expected = 20_000 * 3 / 10
    assert np.all(np.abs(counts - expected) < 5 * np.sqrt(expected))


# -- variants ------------------------------------------------------------------------


def test_hl_full_examples():
    assert hl_full([4.2]).estimate == 4.2
    assert hl_full([0.0, 2.0]).estimate == 1.0
    assert hl_full(np.arange(10.0)).ledger[Category.DATA_LOOK] == 110


def test_hl_full_symmetric_sample_returns_centre():
    # n = 5 gives 15 Walsh averages, an odd count.
    x = 3.0 + np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
    assert hl_full(x, 1).estimate == 3.0


def test_hl_subset_examples():
    x = np.array([1.0, 5.0, 100.0])
    assert hl_subset(x, 2, 2, 0).estimate == 3.0
    assert default_subset_size(2000) == 44


def test_hl_subset_exhausting_all_pairs_is_deterministic():
    x = np.random.default_rng(3).normal(size=20)
    m = 7
    c = m * (m - 1)
    pair_means = [(x[i] + x[j]) / 2 for i, j in combinations(range(m), 2)]
    for seed in range(5):
        assert hl_subset(x, m, c, seed).estimate == pytest.approx(np.median(pair_means), abs=1e-15)


@pytest.mark.parametrize("m, c", [(1, 2), (5, 22), (30, 4), (5, 3)])
def test_hl_subset_rejects_infeasible(m, c):
    with pytest.raises(ValueError):
        hl_subset(np.ones(20), m, c)


def test_hl_sample_two_points():
    for seed in range(3):
        assert hl_sample([1.0, 4.0], 10, seed).estimate == 2.5


def test_hl_sample_deterministic():
    x = np.random.default_rng(0).normal(size=50)
    assert hl_sample(x, 40, 7).estimate == hl_sample(x, 40, 7).estimate


def test_hl_sample_needs_two_points():
    with pytest.raises(ValueError):
        hl_sample([1.0], 2)


def test_hl_sequential_examples():
    assert hl_sequential([1.0, 3.0, 2.0, 8.0], 4).estimate == 3.5
    assert hl_sequential([1.0, 3.0, 2.0, 8.0], 2).estimate == 2.0


@pytest.mark.parametrize("c", [3, 6])
def test_hl_sequential_rejects(c):
    with pytest.raises(ValueError):
        hl_sequential(np.ones(4), c)


def test_mean_prefix():
    x = np.array([2.0, 4.0, 9.0])
    ledger = CostLedger()
    assert mean_prefix(x, 3, ledger) == 5.0
    assert mean_prefix(x, 1) == 2.0
    assert ledger[Category.DATA_LOOK] == 3
    with pytest.raises(ValueError):
        mean_prefix(x, 4)


@given(arrays(np.float64, st.integers(4, 60), elements=finite), st.integers(0, 100), st.data())
def test_variants_stay_in_range_and_charge_two_looks_per_pair(x, seed, data):
    n = x.size
    c = 2 * data.draw(st.integers(1, n // 2))
    m = data.draw(st.integers(2, n))
    c_sub = 2 * data.draw(st.integers(1, m * (m - 1) // 2))
    results = [
        (hl_full(x, seed), n * (n + 1)),
        (hl_sample(x, c, seed), c),
        (hl_sequential(x, c), c),
        (hl_subset(x, m, c_sub, seed), c_sub),
    ]
    for res, looks in results:
        assert x.min() <= res.estimate <= x.max()
        assert res.ledger[Category.DATA_LOOK] == looks
        assert res.total_cost == looks + res.ledger[Category.COMPARISON]


def test_variant_dispatch_and_checks():
    x = np.random.default_rng(1).normal(size=30)
    v = HlVariant("sequential", 10)
    assert v.run(x, None).estimate == hl_sequential(x, 10).estimate
    with pytest.raises(ValueError):
        HlVariant(HlKind.SEQUENTIAL, 40).check(30)
    with pytest.raises(ValueError):
        HlVariant(HlKind.SUBSET, 4)


# -- Monte Carlo oracles -------------------------------------------------------------------


def _sample_oracle(x, c, rng):
    """Independent pair draw: choose an unordered pair uniformly by rejection."""
    n = x.size
    ij = rng.integers(n, size=(2 * c, 2))
    ij = ij[ij[:, 0] != ij[:, 1]][: c // 2]
    return float(np.median(x[ij].mean(axis=1)))


def test_hl_sample_risk_matches_independent_oracle():
    n, c, reps = 400, 400, 4000
    rng = np.random.default_rng(12)
    ours, oracle = np.empty(reps), np.empty(reps)
    for r in range(reps):
        x = rng.standard_normal(n)
        ours[r] = hl_sample(x, c, rng).estimate ** 2
        oracle[r] = _sample_oracle(x, c, rng) ** 2
    se = np.sqrt(ours.var(ddof=1) / reps + oracle.var(ddof=1) / reps)
    assert abs(ours.mean() - oracle.mean()) < 3 * se


def test_hl_sequential_risk_matches_median_of_pair_means():
    n, reps = 200, 10_000
    rng = np.random.default_rng(4)
    ours = np.array([hl_sequential(rng.standard_normal(n), n).estimate ** 2 for _ in range(reps)])
    # Pair means are iid N(0, 1/2): the oracle is the median of n/2 such draws.
    oracle = np.median(rng.standard_normal((reps, n // 2)), axis=1) ** 2 / 2
    se = np.sqrt(ours.var(ddof=1) / reps + oracle.var(ddof=1) / reps)
    assert abs(ours.mean() - oracle.mean()) < 3 * se


def test_mean_prefix_risk_is_one_over_c():
    rng = np.random.default_rng(9)
    c, reps = 25, 40_000
    loss = np.array([mean_prefix(rng.standard_normal(100), c) ** 2 for _ in range(reps)])
    assert abs(loss.mean() - 1 / c) < 3 * loss.std(ddof=1) / math.sqrt(reps)


# -- experiment table -------------------------------------------------------------------------


def test_experiment_rows_and_determinism():
    kw = dict(n=60, contamination_levels=[0.05, 0.1, 0.2], budgets=[20, 40, 60], replicates=40, master_seed=3, m=11)
    rows = hl_experiment(**kw)
    assert len(rows) == 3 * 3 * 4
    assert set(rows[0]) == {"variant", "alpha", "budget", "mean_cost", "risk", "risk_se", "replicates"}
    assert hl_experiment(**kw) == rows
    assert hl_experiment(**kw, n_jobs=2) == rows


def test_experiment_skips_infeasible_subset_budgets():
    # m = 4 leaves 6 distinct pairs, so c = 14 (7 pairs) is infeasible.
    rows = hl_experiment(16, [0.1], [4, 12, 14], 5, 0, kinds=("subset",), m=4)
    assert [r["budget"] for r in rows] == [4, 12]


def test_experiment_full_variant_budget():
    rows = hl_experiment(10, [0.0], [4], 3, 0, kinds=("full",))
    assert rows[0]["budget"] == 110
    assert rows[0]["mean_cost"] > 110


def test_experiment_risk_non_increasing_in_budget():
    budgets = [50, 100, 200, 400]
    rows = hl_experiment(400, [0.1], budgets, 2000, 17, kinds=("mean", "sequential", "sample"))
    for kind in ("mean", "sequential", "sample"):
        series = [r for r in rows if r["variant"] == kind]
        for a, b in zip(series, series[1:]):
            assert b["risk"] <= a["risk"] + 3 * math.hypot(a["risk_se"], b["risk_se"]), (kind, a, b)
