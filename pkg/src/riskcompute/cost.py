"""Abstract compute-cost accounting shared by every estimator.

Costs are operation counts, not wall-clock time.  Three categories exist:
``DATA_LOOK`` (one access of a data point feeding a running statistic),
``COMPARISON`` (one element comparison inside a selection algorithm) and
``VECTOR_MULTIPLY`` (one length-p inner product / matrix-vector row).
"""
from __future__ import annotations

import enum
import itertools
import json
import time
from dataclasses import dataclass, field
from numbers import Real
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "Category",
    "CostUnit",
    "CostLedger",
    "Allocation",
    "GeneralAllocation",
    "allocation_cost",
    "ledger_charge",
    "benchmark_unit_costs",
    "block_patterns",
]


class Category(str, enum.Enum):
    DATA_LOOK = "DataLook"
    COMPARISON = "Comparison"
    VECTOR_MULTIPLY = "VectorMultiply"


def _check_amount(amount) -> None:
    if isinstance(amount, bool) or not isinstance(amount, (Real, np.integer, np.floating)):
        raise TypeError(f"cost amount must be a number, got {type(amount).__name__}")
    if not np.isfinite(amount) or amount < 0:
        raise ValueError(f"cost amount must be finite and >= 0, got {amount}")


@dataclass(frozen=True)
class CostUnit:
    category: Category
    amount: int = 1

    def __post_init__(self):
        object.__setattr__(self, "category", Category(self.category))
        _check_amount(self.amount)


class CostLedger:
    """Append-only tally of compute units by category.

    A ledger is owned by a single writer.  Parallel replicate runs each keep a
    private ledger and combine them afterwards with ``+`` or :meth:`merge`.
    """

    def __init__(self, totals: Mapping[Category | str, float] | None = None):
        self._totals = {c: 0 for c in Category}
        for key, value in (totals or {}).items():
            _check_amount(value)
            self._totals[Category(key)] += value

    def charge(self, category: Category | str | CostUnit, amount=1) -> "CostLedger":
        if isinstance(category, CostUnit):
            category, amount = category.category, category.amount
        _check_amount(amount)
        self._totals[Category(category)] += amount
        return self

    def look(self, amount=1) -> "CostLedger":
        return self.charge(Category.DATA_LOOK, amount)

    def compare(self, amount=1) -> "CostLedger":
        return self.charge(Category.COMPARISON, amount)

    def multiply(self, amount=1) -> "CostLedger":
        return self.charge(Category.VECTOR_MULTIPLY, amount)

    @property
    def totals(self) -> dict[Category, float]:
        return dict(self._totals)

    @property
    def grand_total(self):
        return sum(self._totals.values())

    def __getitem__(self, category: Category | str):
        return self._totals[Category(category)]

    def merge(self, other: "CostLedger") -> "CostLedger":
        for c in Category:
            self._totals[c] += other._totals[c]
        return self

    def __add__(self, other: "CostLedger") -> "CostLedger":
        return CostLedger(self._totals).merge(other)

    def scaled(self, factor: float) -> "CostLedger":
        """Return a new ledger with every total multiplied by ``factor`` (used for averages)."""
        if factor < 0:
            raise ValueError("factor must be >= 0")
        return CostLedger({c: v * factor for c, v in self._totals.items()})

    def __eq__(self, other):
        if not isinstance(other, CostLedger):
            return NotImplemented
        return self._totals == other._totals

    def __repr__(self):
        parts = ", ".join(f"{c.value}={v}" for c, v in self._totals.items())
        return f"CostLedger({parts}, grand_total={self.grand_total})"

    def snapshot(self) -> dict:
        out = {c.value: self._totals[c] for c in Category}
        out["grand_total"] = self.grand_total
        return out

    def to_json(self) -> str:
        return json.dumps(self.snapshot(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CostLedger":
        data = json.loads(text)
        grand = data.pop("grand_total", None)
        ledger = cls(data)
        if grand is not None and grand != ledger.grand_total:
            raise ValueError("grand_total does not match the per-category totals")
        return ledger

    def estimated_seconds(self, ns_per_unit: Mapping[Category | str, float]) -> float:
        """Map the tally onto measured per-unit timings.  Reporting only."""
        return sum(self._totals[Category(c)] * ns for c, ns in ns_per_unit.items()) * 1e-9


def ledger_charge(ledger: CostLedger, unit: CostUnit) -> CostLedger:
    return ledger.charge(unit)


def benchmark_unit_costs(p: int = 10, repeats: int = 20000) -> dict[Category, float]:
    """Rough nanoseconds per unit for each category on this machine.

    Never used by the estimators; it lets a report translate ledgers into time.
    """
    rng = np.random.default_rng(0)
    xs = rng.standard_normal(repeats).tolist()
    a = rng.standard_normal((p, p))
    v = rng.standard_normal(p)

    t0 = time.perf_counter_ns()
    acc = 0.0
    for x in xs:
        acc += x
    look = (time.perf_counter_ns() - t0) / repeats

    t0 = time.perf_counter_ns()
    hits = 0
    for x in xs:
        hits += x < 0.0
    comparison = (time.perf_counter_ns() - t0) / repeats

    reps = max(1, repeats // 10)
    t0 = time.perf_counter_ns()
    for _ in range(reps):
        a @ v
    multiply = (time.perf_counter_ns() - t0) / (reps * p)

    return {
        Category.DATA_LOOK: look,
        Category.COMPARISON: comparison,
        Category.VECTOR_MULTIPLY: multiply,
    }


def _check_count(name: str, value) -> int:
    if isinstance(value, bool) or int(value) != value:
        raise TypeError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if value < 0:
        raise ValueError(f"{name} must be >= 0, got {value}")
    return value


@dataclass(frozen=True)
class Allocation:
    """Two-statistic split of the sample.

    ``n1`` points feed only the first statistic, ``n2`` only the second and
    ``n12`` feed both.  Only these cardinalities affect risk and cost.
    """

    n1: int
    n2: int
    n12: int

    def __post_init__(self):
        for name in ("n1", "n2", "n12"):
            object.__setattr__(self, name, _check_count(name, getattr(self, name)))

    @property
    def used(self) -> int:
        return self.n1 + self.n2 + self.n12

    @property
    def size1(self) -> int:
        return self.n1 + self.n12

    @property
    def size2(self) -> int:
        return self.n2 + self.n12

    def cost(self, unit_costs: Sequence[float] = (1, 1)) -> float:
        return allocation_cost(self, unit_costs)

    def check_feasible(self, n: int) -> None:
        if self.used > n:
            raise ValueError(f"allocation uses {self.used} samples but only n={n} are available")
        if self.size1 < 1 or self.size2 < 1:
            raise ValueError("both statistics need at least one sample (n1+n12 >= 1 and n2+n12 >= 1)")

    def to_general(self) -> "GeneralAllocation":
        return GeneralAllocation.from_pair(self.n1, self.n2, self.n12)


@dataclass(frozen=True)
class GeneralAllocation:
    """Allocation of samples to ``p`` statistics as a sequence of blocks.

    Each block is ``(members, size)``: ``size`` consecutive samples that feed
    every statistic index in ``members``.  Any block layout is realizable, so
    set sizes and pairwise overlaps derived from it always are too.
    """

    p: int
    blocks: tuple[tuple[tuple[int, ...], int], ...] = field(default=())

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be >= 1")
        clean = []
        for members, size in self.blocks:
            members = tuple(sorted(set(int(k) for k in members)))
            if not members:
                raise ValueError("a block must feed at least one statistic")
            if members[0] < 0 or members[-1] >= self.p:
                raise ValueError(f"block members {members} out of range for p={self.p}")
            size = _check_count("block size", size)
            if size:
                clean.append((members, size))
        object.__setattr__(self, "blocks", tuple(clean))

    @classmethod
    def from_pair(cls, n1: int, n2: int, n12: int) -> "GeneralAllocation":
        return cls(2, (((0,), n1), ((0, 1), n12), ((1,), n2)))

    @classmethod
    def full(cls, p: int, n: int) -> "GeneralAllocation":
        return cls(p, ((tuple(range(p)), n),))

    @classmethod
    def disjoint(cls, sizes: Sequence[int]) -> "GeneralAllocation":
        return cls(len(sizes), tuple(((k,), s) for k, s in enumerate(sizes)))

    @classmethod
    def from_block_sizes(cls, p: int, sizes: Sequence[int]) -> "GeneralAllocation":
        """Blocks given in :func:`block_patterns` order."""
        return cls(p, tuple(zip(block_patterns(p), sizes)))

    @property
    def used(self) -> int:
        return sum(size for _, size in self.blocks)

    @property
    def overlaps(self) -> np.ndarray:
        """p x p matrix of ``|S_k ∩ S_l|``; the diagonal holds ``|S_k|``."""
        out = np.zeros((self.p, self.p), dtype=np.int64)
        for members, size in self.blocks:
            idx = np.array(members)
            out[np.ix_(idx, idx)] += size
        return out

    @property
    def sizes(self) -> np.ndarray:
        return np.diag(self.overlaps).copy()

    def cost(self, unit_costs: Sequence[float]) -> float:
        return allocation_cost(self, unit_costs)

    def check_feasible(self, n: int | None = None) -> None:
        if np.any(self.sizes < 1):
            raise ValueError(f"every statistic needs at least one sample, sizes={self.sizes.tolist()}")
        if n is not None and self.used > n:
            raise ValueError(f"allocation uses {self.used} samples but only n={n} are available")

    def masks(self, n: int) -> np.ndarray:
        """Boolean (p, n) membership matrix with blocks laid out consecutively."""
        self.check_feasible(n)
        out = np.zeros((self.p, n), dtype=bool)
        start = 0
        for members, size in self.blocks:
            out[list(members), start:start + size] = True
            start += size
        return out

    def as_pair(self) -> Allocation:
        if self.p != 2:
            raise ValueError("as_pair requires p == 2")
        ov = self.overlaps
        return Allocation(int(ov[0, 0] - ov[0, 1]), int(ov[1, 1] - ov[0, 1]), int(ov[0, 1]))

    def to_dict(self) -> dict:
        ov = self.overlaps
        return {
            "sizes": self.sizes.tolist(),
            "overlaps": {f"{k},{l}": int(ov[k, l]) for k in range(self.p) for l in range(k + 1, self.p)},
            "blocks": [[list(m), s] for m, s in self.blocks],
        }


def block_patterns(p: int) -> list[tuple[int, ...]]:
    """All non-empty subsets of ``range(p)``, ordered by size then lexicographically."""
    return [c for r in range(1, p + 1) for c in itertools.combinations(range(p), r)]


def allocation_cost(alloc: Allocation | GeneralAllocation, unit_costs: Sequence[float] = (1, 1)) -> float:
    """Cost ``sum_k c_k |S_k|`` of an allocation.

    For a two-statistic :class:`Allocation` this is
    ``n1*c1 + n2*c2 + n12*(c1 + c2)``, i.e. ``n1 + n2 + 2*n12`` at unit costs.
    """
    costs = np.asarray(unit_costs, dtype=float)
    if costs.ndim != 1 or np.any(~np.isfinite(costs)) or np.any(costs <= 0):
        raise ValueError(f"unit costs must be positive and finite, got {unit_costs!r}")
    if isinstance(alloc, Allocation):
        if costs.size != 2:
            raise ValueError("a two-statistic allocation needs exactly two unit costs")
        c1, c2 = costs
        total = alloc.n1 * c1 + alloc.n2 * c2 + alloc.n12 * (c1 + c2)
    elif isinstance(alloc, GeneralAllocation):
        if costs.size != alloc.p:
            raise ValueError(f"expected {alloc.p} unit costs, got {costs.size}")
        total = float(costs @ alloc.sizes)
    else:
        raise TypeError(f"unsupported allocation type {type(alloc).__name__}")
    return int(total) if float(total).is_integer() and np.all(costs == np.round(costs)) else float(total)

