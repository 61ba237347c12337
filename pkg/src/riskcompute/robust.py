"""Hodges-Lehmann location estimates under a budget of data looks.

Every pair mean costs two looks; the median of the pair means is found by
randomised QuickSelect whose element comparisons are charged to the ledger.
Besides the full estimator (all Walsh averages) there are three cheaper
variants built from ``c/2`` pairs: ``subset`` (pairs drawn without
replacement inside the first ``m`` points), ``sample`` (pairs drawn with
replacement from the whole sample) and ``sequential`` (the fixed disjoint
pairs ``(X1, X2), (X3, X4), ...``).
"""
from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cost import CostLedger
from .montecarlo import CHUNK_SIZE, as_generator, derive_stream, sample_contaminated
from .validation import check_even_budget, check_sample

__all__ = [
    "HlKind",
    "HlVariant",
    "HlResult",
    "quickselect",
    "quickselect_median",
    "hl_full",
    "hl_subset",
    "hl_sample",
    "hl_sequential",
    "mean_prefix",
    "hl_experiment",
    "unrank_pairs",
    "floyd_sample",
]


class HlKind(str, enum.Enum):
    FULL = "full"
    SUBSET = "subset"
    SAMPLE = "sample"
    SEQUENTIAL = "sequential"
    MEAN = "mean"


@dataclass(frozen=True)
class HlVariant:
    kind: HlKind
    budget_c: int | None = None
    m: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", HlKind(self.kind))
        if self.kind in (HlKind.SUBSET, HlKind.SAMPLE, HlKind.SEQUENTIAL):
            check_even_budget(self.budget_c)
        if self.kind is HlKind.SUBSET and self.m is None:
            raise ValueError("subset variant needs m")

    def check(self, n: int) -> None:
        c = self.budget_c
        if self.kind is HlKind.SEQUENTIAL and c > n:
            raise ValueError(f"sequential variant needs c <= n ({c} > {n})")
        if self.kind is HlKind.SUBSET:
            if not 2 <= self.m <= n:
                raise ValueError(f"subset size m must be in [2, n], got {self.m}")
            if c // 2 > self.m * (self.m - 1) // 2:
                raise ValueError(f"c/2 = {c // 2} exceeds the {self.m * (self.m - 1) // 2} pairs in the subset")
        if self.kind is HlKind.SAMPLE and n < 2:
            raise ValueError("sample variant needs n >= 2")
        if self.kind is HlKind.MEAN and not 1 <= (c or 0) <= n:
            raise ValueError(f"mean prefix needs 1 <= c <= n, got {c}")

    def run(self, sample, rng, ledger=None) -> "HlResult":
        k = self.kind
        if k is HlKind.FULL:
            return hl_full(sample, rng, ledger)
        if k is HlKind.SUBSET:
            return hl_subset(sample, self.m, self.budget_c, rng, ledger)
        if k is HlKind.SAMPLE:
            return hl_sample(sample, self.budget_c, rng, ledger)
        if k is HlKind.SEQUENTIAL:
            return hl_sequential(sample, self.budget_c, ledger, rng=rng)
        own = CostLedger()
        est = mean_prefix(sample, self.budget_c, own)
        if ledger is not None:
            ledger.merge(own)
        return HlResult(est, own)


@dataclass(frozen=True)
class HlResult:
    estimate: float
    ledger: CostLedger

    @property
    def total_cost(self):
        return self.ledger.grand_total


def quickselect(values, k: int, stream=None, ledger: CostLedger | None = None) -> float:
    """k-th smallest value (0-based) by randomised three-way QuickSelect.

    Each partitioning pass over ``m`` elements costs ``m - 1`` comparisons.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("quickselect needs a non-empty 1-D array")
    if not 0 <= k < v.size:
        raise IndexError(f"k={k} out of range for {v.size} values")
    rng = as_generator(stream)
    comparisons = 0
    while True:
        m = v.size
        if m == 1:
            break
        pivot = v[rng.integers(m)]
        comparisons += m - 1
        below = v[v < pivot]
        above = v[v > pivot]
        n_eq = m - below.size - above.size
        if k < below.size:
            v = below
        elif k < below.size + n_eq:
            v = np.array([pivot])
            k = 0
            break
        else:
            k -= below.size + n_eq
            v = above
    if ledger is not None:
        ledger.compare(comparisons)
    return float(v[k])


def quickselect_median(values, stream=None, ledger: CostLedger | None = None) -> float:
    """Median; even lengths average the two central order statistics (two selections)."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("median of an empty array")
    rng = as_generator(stream)
    n = v.size
    if n % 2:
        return quickselect(v, n // 2, rng, ledger)
    lo = quickselect(v, n // 2 - 1, rng, ledger)
    hi = quickselect(v, n // 2, rng, ledger)
    return 0.5 * (lo + hi)


def _finish(pair_means, rng, ledger, looks) -> HlResult:
    own = CostLedger().look(looks)
    est = quickselect_median(pair_means, rng, own)
    if ledger is not None:
        ledger.merge(own)
    return HlResult(est, own)


def hl_full(sample, stream=None, ledger: CostLedger | None = None) -> HlResult:
    """Median of all Walsh averages ``(X_i + X_j)/2`` with ``i <= j``; ``n(n+1)`` looks."""
    x = check_sample(sample, min_size=1)
    n = x.size
    i, j = np.triu_indices(n)
    return _finish(0.5 * (x[i] + x[j]), as_generator(stream), ledger, n * (n + 1))


def unrank_pairs(ranks) -> tuple[np.ndarray, np.ndarray]:
    """Map colex ranks ``r = j(j-1)/2 + i`` (``i < j``) back to index pairs."""
    r = np.asarray(ranks, dtype=np.int64)
    j = ((1 + np.sqrt(1 + 8 * r.astype(float))) // 2).astype(np.int64)
    j -= j * (j - 1) // 2 > r
    j += (j + 1) * j // 2 <= r
    return r - j * (j - 1) // 2, j


def floyd_sample(population: int, k: int, rng) -> np.ndarray:
    """``k`` distinct integers from ``range(population)`` (Floyd), returned sorted."""
    if not 0 <= k <= population:
        raise ValueError(f"cannot draw {k} distinct values from {population}")
    chosen: set[int] = set()
    for top in range(population - k, population):
        t = int(rng.integers(top + 1))
        chosen.add(top if t in chosen else t)
    return np.array(sorted(chosen), dtype=np.int64)


def hl_subset(sample, m: int, c: int, stream=None, ledger: CostLedger | None = None) -> HlResult:
    """``c/2`` distinct pairs drawn without replacement from the first ``m`` points."""
    x = check_sample(sample, min_size=2)
    c = check_even_budget(c)
    HlVariant(HlKind.SUBSET, c, m).check(x.size)
    rng = as_generator(stream)
    ranks = floyd_sample(m * (m - 1) // 2, c // 2, rng)
    i, j = unrank_pairs(ranks)
    return _finish(0.5 * (x[i] + x[j]), rng, ledger, c)


def hl_sample(sample, c: int, stream=None, ledger: CostLedger | None = None) -> HlResult:
    """``c/2`` distinct-index pairs drawn uniformly with replacement from all ``n choose 2``."""
    x = check_sample(sample, min_size=1)
    c = check_even_budget(c)
    if x.size < 2:
        raise ValueError("sample variant needs n >= 2")
    rng = as_generator(stream)
    h = c // 2
    i = rng.integers(x.size, size=h)
    j = rng.integers(x.size - 1, size=h)
    j += j >= i
    return _finish(0.5 * (x[i] + x[j]), rng, ledger, c)


def hl_sequential(sample, c: int, ledger: CostLedger | None = None, rng=None) -> HlResult:
    """Median of the means of ``(X1, X2), ..., (X_{c-1}, X_c)``.

    The estimate is a deterministic function of the sample; ``rng`` only
    drives QuickSelect pivots and hence the comparison count.
    """
    x = check_sample(sample, min_size=2)
    c = check_even_budget(c)
    if c > x.size:
        raise ValueError(f"c must be <= n, got c={c}, n={x.size}")
    pair_means = x[:c].reshape(-1, 2).mean(axis=1)
    return _finish(pair_means, as_generator(rng if rng is not None else 0), ledger, c)


def mean_prefix(sample, c: int, ledger: CostLedger | None = None) -> float:
    x = check_sample(sample, min_size=1)
    if int(c) != c or not 1 <= c <= x.size:
        raise ValueError(f"c must be in [1, n] = [1, {x.size}], got {c}")
    c = int(c)
    if ledger is not None:
        ledger.look(c)
    return float(x[:c].mean())


def default_subset_size(n: int) -> int:
    return math.isqrt(n)


def experiment_variants(n, budgets, kinds=("mean", "sequential", "sample", "subset"), m=None):
    """Feasible (variant, budget) combinations in a fixed order."""
    m = default_subset_size(n) if m is None else m
    out = []
    for kind in kinds:
        kind = HlKind(kind)
        if kind is HlKind.FULL:
            out.append(HlVariant(kind))
            continue
        for c in budgets:
            if kind is not HlKind.MEAN and c % 2:
                continue
            v = HlVariant(kind, int(c), m if kind is HlKind.SUBSET else None)
            try:
                v.check(n)
            except ValueError:
                continue
            out.append(v)
    return out


def _experiment_chunk(n, alphas, variants, master_seed, start, stop):
    losses = np.empty((len(alphas), len(variants), stop - start))
    costs = np.zeros((len(alphas), len(variants)))
    for r in range(start, stop):
        stream = derive_stream(master_seed, r)
        for a, alpha in enumerate(alphas):
            x = sample_contaminated(stream.generator(0, a), n, alpha)
            for v, variant in enumerate(variants):
                rng = None if variant.kind is HlKind.MEAN else stream.generator(1, a, v)
                res = variant.run(x, rng)
                losses[a, v, r - start] = res.estimate**2
                costs[a, v] += res.total_cost
    return losses, costs


def hl_experiment(
    n: int,
    contamination_levels,
    budgets,
    replicates: int,
    master_seed: int,
    kinds=("mean", "sequential", "sample", "subset"),
    m: int | None = None,
    n_jobs: int = 1,
) -> list[dict]:
    """Monte Carlo risk and mean total cost of each variant at each budget and contamination level.

    The true location is 0.  All variants within a replicate and contamination
    level see the same data set.  Infeasible (variant, budget) pairs are skipped.
    """
    if replicates < 2:
        raise ValueError("replicates must be >= 2")
    alphas = [float(a) for a in contamination_levels]
    variants = experiment_variants(n, budgets, kinds, m)
    bounds = [(s, min(s + CHUNK_SIZE, replicates)) for s in range(0, replicates, CHUNK_SIZE)]
    args = [(n, alphas, variants, master_seed, a, b) for a, b in bounds]
    if n_jobs == 1 or len(bounds) == 1:
        parts = [_experiment_chunk(*arg) for arg in args]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(lambda arg: _experiment_chunk(*arg), args))
    losses = np.concatenate([p[0] for p in parts], axis=2)
    costs = sum(p[1] for p in parts)
    rows = []
    for v, variant in enumerate(variants):
        for a, alpha in enumerate(alphas):
            loss = losses[a, v]
            rows.append(
                {
                    "variant": variant.kind.value,
                    "alpha": alpha,
                    "budget": variant.budget_c if variant.budget_c is not None else n * (n + 1),
                    "mean_cost": float(costs[a, v] / replicates),
                    "risk": float(loss.mean()),
                    "risk_se": float(loss.std(ddof=1) / np.sqrt(replicates)),
                    "replicates": replicates,
                }
            )
    return rows
