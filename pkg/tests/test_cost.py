import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from riskcompute.cost import (
    Allocation,
    Category,
    CostLedger,
    CostUnit,
    GeneralAllocation,
    allocation_cost,
    block_patterns,
    ledger_charge,
)

counts = st.integers(min_value=0, max_value=10_000)


@pytest.mark.parametrize(
    "alloc, expected",
    [
        (Allocation(0, 0, 50), 100),  # full sample for both statistics costs 2n
        (Allocation(30, 20, 0), 50),  # disjoint split costs n
        (Allocation(3, 4, 5), 17),
    ],
)
def test_allocation_cost_examples(alloc, expected):
    assert allocation_cost(alloc) == expected
    assert allocation_cost(alloc.to_general(), (1, 1)) == expected


def test_allocation_cost_weighted_pair():
    assert allocation_cost(Allocation(1, 2, 3), (2, 5)) == 1 * 2 + 2 * 5 + 3 * 7


@pytest.mark.parametrize("bad", [(0, 1), (1, -1), (1,), (1, 1, 1)])
def test_allocation_cost_rejects_bad_unit_costs(bad):
    with pytest.raises(ValueError):
        allocation_cost(Allocation(1, 1, 1), bad)


@pytest.mark.parametrize("args", [(-1, 0, 0), (0, -2, 0), (0, 0, -3)])
def test_allocation_rejects_negative_counts(args):
    with pytest.raises(ValueError):
        Allocation(*args)


def test_allocation_feasibility():
    Allocation(1, 1, 1).check_feasible(3)
    with pytest.raises(ValueError):
        Allocation(2, 1, 1).check_feasible(3)
    with pytest.raises(ValueError):
        Allocation(3, 0, 0).check_feasible(10)


@given(counts, counts, counts, st.floats(0.1, 10), st.floats(0.1, 10))
def test_allocation_cost_is_linear_in_unit_costs(n1, n2, n12, c1, c2):
    a = Allocation(n1, n2, n12)
    assert allocation_cost(a, (2 * c1, 2 * c2)) == pytest.approx(2 * allocation_cost(a, (c1, c2)))


@given(st.integers(2, 5000), st.data())
def test_streaming_allocation_costs_n(n, data):
    s = data.draw(st.integers(1, n - 1))
    assert allocation_cost(Allocation(s, n - s, 0)) == n


@given(counts, counts, counts, st.floats(0.1, 10), st.floats(0.1, 10))
def test_pair_and_general_costs_agree(n1, n2, n12, c1, c2):
    a = Allocation(n1, n2, n12)
    assert allocation_cost(a, (c1, c2)) == pytest.approx(allocation_cost(a.to_general(), (c1, c2)))


def test_general_allocation_overlaps_and_round_trip():
    g = GeneralAllocation.from_pair(3, 4, 5)
    np.testing.assert_array_equal(g.overlaps, [[8, 5], [5, 9]])
    assert g.as_pair() == Allocation(3, 4, 5)
    assert g.used == 12


def test_general_allocation_masks_realise_overlaps():
    g = GeneralAllocation(3, (((0,), 2), ((0, 1), 3), ((1, 2), 4), ((0, 1, 2), 1)))
    m = g.masks(12)
    ov = m.astype(int) @ m.T.astype(int)
    np.testing.assert_array_equal(ov, g.overlaps)
    assert not m[:, g.used:].any()


def test_general_allocation_from_block_sizes_order():
    assert block_patterns(3) == [(0,), (1,), (2,), (0, 1), (0, 2), (1, 2), (0, 1, 2)]
    g = GeneralAllocation.from_block_sizes(2, [1, 2, 3])
    assert g.as_pair() == Allocation(1, 2, 3)


def test_general_allocation_to_dict():
    d = GeneralAllocation.from_pair(1, 2, 3).to_dict()
    assert d["sizes"] == [4, 5]
    assert d["overlaps"] == {"0,1": 3}
    json.dumps(d)


def test_general_allocation_rejects_empty_statistic():
    with pytest.raises(ValueError):
        GeneralAllocation.disjoint([3, 0]).check_feasible()
    with pytest.raises(ValueError):
        GeneralAllocation(2, (((2,), 1),))


def test_ledger_charge_examples():
    ledger = ledger_charge(CostLedger(), CostUnit(Category.DATA_LOOK, 5))
    assert ledger.grand_total == 5
    ledger_charge(ledger, CostUnit(Category.COMPARISON, 3))
    assert ledger.grand_total == 8
    before = ledger.snapshot()
    ledger_charge(ledger, CostUnit(Category.VECTOR_MULTIPLY, 0))
    assert ledger.snapshot() == before


def test_cost_unit_rejects_negative():
    with pytest.raises(ValueError):
        CostUnit(Category.DATA_LOOK, -1)


@given(st.lists(st.tuples(st.sampled_from(list(Category)), st.integers(0, 1000)), max_size=30))
def test_ledger_totals_monotone_and_consistent(charges):
    ledger = CostLedger()
    prev = dict(ledger.totals)
    for cat, amount in charges:
        ledger.charge(cat, amount)
        totals = ledger.totals
        assert all(totals[c] >= prev[c] for c in Category)
        assert ledger.grand_total == sum(totals.values())
        prev = dict(totals)


def test_ledger_json_round_trip_and_snapshot_keys():
    ledger = CostLedger().look(4).compare(7).multiply(20)
    snap = ledger.snapshot()
    assert snap == {"DataLook": 4, "Comparison": 7, "VectorMultiply": 20, "grand_total": 31}
    assert CostLedger.from_json(ledger.to_json()) == ledger


def test_ledger_merge_and_scale():
    a = CostLedger().look(2)
    b = CostLedger().compare(3)
    total = a + b
    assert total.grand_total == 5
    assert a.grand_total == 2
    assert total.scaled(0.5)[Category.COMPARISON] == 1.5


def test_estimated_seconds_reporting_hook():
    ledger = CostLedger().look(1000)
    assert ledger.estimated_seconds({"DataLook": 2.0}) == pytest.approx(2e-6)
