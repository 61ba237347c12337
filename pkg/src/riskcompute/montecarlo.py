"""Reproducible sampling and Monte Carlo risk estimation.

Every replicate ``r`` draws from a counter-based Philox stream keyed by
``(master_seed, r)``, so a run gives identical numbers however the
replicates are scheduled across workers.
"""
from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .cost import CostLedger

__all__ = [
    "RngStream",
    "derive_stream",
    "as_generator",
    "sample_contaminated",
    "contaminated_variance",
    "LossKind",
    "RiskEstimate",
    "ReplicateError",
    "simulate",
    "run_replicates",
    "CHUNK_SIZE",
]

# Fixed so that chunk boundaries never depend on the worker count.
CHUNK_SIZE = 1024


@dataclass(frozen=True)
class RngStream:
    master_seed: int
    stream_id: int

    def generator(self, *subkey: int) -> np.random.Generator:
        """A fresh generator positioned at the start of this stream.

        ``subkey`` selects an independent child stream (e.g. per variant or
        per budget inside one replicate).
        """
        ss = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_id, *subkey))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, *subkey: int) -> np.random.Generator:
        return self.generator(*subkey)


def derive_stream(master_seed: int, replicate_index: int) -> RngStream:
    if master_seed < 0 or replicate_index < 0:
        raise ValueError("seeds and replicate indices must be non-negative")
    return RngStream(int(master_seed), int(replicate_index))


def as_generator(stream) -> np.random.Generator:
    """Accept an RngStream, a Generator, an int seed or None."""
    if isinstance(stream, RngStream):
        return stream.generator()
    if isinstance(stream, np.random.Generator):
        return stream
    return np.random.default_rng(stream)


def sample_contaminated(stream, n: int, alpha: float) -> np.ndarray:
    """Draw ``n`` points from ``(1 - alpha) N(0, 1) + alpha * 4 t_3``.

    The t_3 component is ``Z / sqrt(chi2_3 / 3)``; its variance after scaling is 48.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if n < 0:
        raise ValueError("n must be >= 0")
    rng = as_generator(stream)
    z = rng.standard_normal(n)
    heavy = rng.random(n) < alpha
    k = int(heavy.sum())
    if k:
        t3 = rng.standard_normal(k) / np.sqrt(rng.chisquare(3, k) / 3.0)
        z[heavy] = 4.0 * t3
    return z


def contaminated_variance(alpha: float) -> float:
    return (1.0 - alpha) + 48.0 * alpha


class LossKind(str, enum.Enum):
    SCALAR = "SquaredErrorScalar"
    VECTOR = "SquaredErrorVector"


@dataclass(frozen=True)
class RiskEstimate:
    mean_loss: float
    std_error: float
    replicates: int
    loss_kind: LossKind
    mean_cost: CostLedger | None = None

    def within(self, value: float, n_se: float = 3.0) -> bool:
        return abs(self.mean_loss - value) <= n_se * self.std_error

    def z_score(self, value: float) -> float:
        if self.std_error == 0:
            return 0.0 if self.mean_loss == value else np.inf
        return (self.mean_loss - value) / self.std_error


class ReplicateError(RuntimeError):
    def __init__(self, index: int, cause: BaseException):
        super().__init__(f"estimator failed on replicate {index}: {cause!r}")
        self.index = index


Estimator = Callable[[np.ndarray, np.random.Generator, CostLedger], object]
Sampler = Callable[[np.random.Generator], np.ndarray]


def _run_chunk(estimator, sampler, master_seed, start, stop, track_cost):
    estimates = []
    ledger = CostLedger()
    for r in range(start, stop):
        stream = derive_stream(master_seed, r)
        data_rng = stream.generator(0)
        est_rng = stream.generator(1)
        try:
            sample = sampler(data_rng)
            est = estimator(sample, est_rng, ledger if track_cost else CostLedger())
        except Exception as exc:
            raise ReplicateError(r, exc) from exc
        estimates.append(np.atleast_1d(np.asarray(est, dtype=float)))
    return np.vstack(estimates), ledger


def simulate(
    estimator: Estimator,
    sampler: Sampler,
    replicates: int,
    master_seed: int,
    n_jobs: int = 1,
    track_cost: bool = True,
) -> tuple[np.ndarray, CostLedger]:
    """Run ``estimator(sampler(rng), rng2, ledger)`` for each replicate.

    Returns the ``(replicates, dim)`` array of estimates in replicate order and
    the summed ledger.  Replicate ``r`` draws data from child stream 0 and the
    estimator's own randomness from child stream 1 of ``(master_seed, r)``.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    bounds = [(s, min(s + CHUNK_SIZE, replicates)) for s in range(0, replicates, CHUNK_SIZE)]
    if n_jobs == 1 or len(bounds) == 1:
        parts = [_run_chunk(estimator, sampler, master_seed, a, b, track_cost) for a, b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            futures = [
                pool.submit(_run_chunk, estimator, sampler, master_seed, a, b, track_cost) for a, b in bounds
            ]
            parts = [f.result() for f in futures]
    estimates = np.vstack([p[0] for p in parts])
    ledger = CostLedger()
    for _, part in parts:
        ledger.merge(part)
    return estimates, ledger


def risk_from_losses(losses: np.ndarray, kind: LossKind, mean_cost: CostLedger | None = None) -> RiskEstimate:
    losses = np.asarray(losses, dtype=float)
    if losses.size < 2:
        raise ValueError("need at least two replicates for a standard error")
    return RiskEstimate(
        mean_loss=float(losses.mean()),
        std_error=float(losses.std(ddof=1) / np.sqrt(losses.size)),
        replicates=int(losses.size),
        loss_kind=kind,
        mean_cost=mean_cost,
    )


def run_replicates(
    estimator: Estimator,
    truth,
    sampler: Sampler,
    replicates: int,
    master_seed: int,
    weights: Sequence[float] | None = None,
    n_jobs: int = 1,
) -> RiskEstimate:
    """Monte Carlo risk under (optionally weighted) squared-error loss.

    ``weights`` is the diagonal of the loss weight matrix, so the loss is
    ``sum_k w_k (est_k - truth_k)^2``.
    """
    if replicates < 2:
        raise ValueError("replicates must be >= 2")
    truth = np.atleast_1d(np.asarray(truth, dtype=float))
    estimates, ledger = simulate(estimator, sampler, replicates, master_seed, n_jobs=n_jobs)
    if estimates.shape[1] != truth.size:
        raise ValueError(f"estimator returned dimension {estimates.shape[1]}, truth has {truth.size}")
    w = np.ones_like(truth) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != truth.shape or np.any(w < 0):
        raise ValueError("weights must be non-negative and match the parameter dimension")
    losses = ((estimates - truth) ** 2) @ w
    kind = LossKind.SCALAR if truth.size == 1 else LossKind.VECTOR
    mean_cost = ledger.scaled(1.0 / replicates) if ledger.grand_total else None
    return risk_from_losses(losses, kind, mean_cost)
