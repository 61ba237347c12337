"""Anytime matrix inversion for least squares.

Two iterative inverses of the Gram matrix ``S = X^T X`` are compared by the
regression risk of ``beta_hat = B X^T Y`` after each unit of work:

* Newton-Schulz, ``B <- 2B - B A B``, charged ``2p`` vector multiplies per step;
* power iteration with deflation, charged one vector multiply per step, after
  which ``B = sum_i v_i v_i^T / lambda_i`` over the recovered eigenpairs.
"""
from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cost import CostLedger
from .montecarlo import CHUNK_SIZE, as_generator, derive_stream
from .validation import check_square

__all__ = [
    "DesignConfig",
    "generate_design",
    "compound_symmetry_sqrt",
    "DivergenceError",
    "InitMode",
    "NewtonSchulzRun",
    "newton_schulz_step",
    "newton_schulz",
    "power_iteration",
    "ScheduleKind",
    "Schedule",
    "binomial_schedule_cost",
    "EigenPair",
    "DeflationResult",
    "deflated_eigs",
    "inverse_from_eigs",
    "regression_risk",
    "TrajectoryPoint",
    "Trajectory",
    "MethodSpec",
    "matinv_experiment",
]

EIG_FLOOR = 1e-12
DIVERGENCE_LIMIT = 1e10


def _check_rho(rho: float) -> float:
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"rho must be in [0,1), got {rho}")
    return float(rho)


@dataclass(frozen=True)
class DesignConfig:
    """Correlated Gaussian design ``X = Z D^{1/2} C^{1/2}``."""

    n_rows: int = 100
    p: int = 10
    rho: float = 0.0
    d_diag: tuple[float, ...] | None = None

    def __post_init__(self):
        _check_rho(self.rho)
        if self.p < 1 or self.n_rows < 1:
            raise ValueError("n_rows and p must be positive")
        d = np.linspace(4.0, 2.0, self.p) if self.d_diag is None else np.asarray(self.d_diag, dtype=float)
        if d.shape != (self.p,) or np.any(d <= 0):
            raise ValueError("d_diag must hold p strictly positive values")
        object.__setattr__(self, "d_diag", tuple(float(v) for v in d))

    def correlation(self) -> np.ndarray:
        return (1.0 - self.rho) * np.eye(self.p) + self.rho * np.ones((self.p, self.p))


def compound_symmetry_sqrt(p: int, rho: float) -> np.ndarray:
    """Symmetric square root of ``(1 - rho) I + rho 11^T``.

    The matrix has eigenvalue ``1 + (p-1) rho`` on the all-ones direction and
    ``1 - rho`` on its orthogonal complement.
    """
    rho = _check_rho(rho)
    proj = np.full((p, p), 1.0 / p)
    return math.sqrt(1.0 - rho) * (np.eye(p) - proj) + math.sqrt(1.0 + (p - 1) * rho) * proj


def generate_design(cfg: DesignConfig, stream=None) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``X`` and return ``(X, S)`` with ``S = X^T X`` exactly symmetric."""
    rng = as_generator(stream)
    z = rng.standard_normal((cfg.n_rows, cfg.p))
    x = (z * np.sqrt(cfg.d_diag)) @ compound_symmetry_sqrt(cfg.p, cfg.rho)
    s = x.T @ x
    s = 0.5 * (s + s.T)
    return x, s


class DivergenceError(ArithmeticError):
    def __init__(self, step: int, residual: float):
        super().__init__(f"Newton-Schulz diverged at step {step}: residual {residual:.3g}")
        self.step = step
        self.residual = residual


class InitMode(str, enum.Enum):
    SAFE = "safe"
    NAIVE = "naive"


def newton_schulz_step(b, a) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    a = np.asarray(a, dtype=float)
    if b.ndim != 2 or b.shape != a.shape or b.shape[0] != b.shape[1]:
        raise ValueError(f"B and A must be square and of the same shape, got {b.shape} and {a.shape}")
    return 2.0 * b - b @ a @ b


def initial_inverse(a: np.ndarray, mode: InitMode | str) -> np.ndarray:
    mode = InitMode(mode)
    if mode is InitMode.SAFE:
        return a.T / (np.linalg.norm(a, 1) * np.linalg.norm(a, np.inf))
    return np.eye(a.shape[0]) / np.trace(a)


@dataclass
class NewtonSchulzRun:
    iterates: list[np.ndarray]
    residuals: list[float]
    ledger: CostLedger

    @property
    def final(self) -> np.ndarray:
        return self.iterates[-1]


def newton_schulz(a, init_mode: InitMode | str = InitMode.SAFE, max_iters: int = 20,
                  ledger: CostLedger | None = None, tol: float = 0.0) -> NewtonSchulzRun:
    """Iterate Newton-Schulz from the chosen start; ``iterates[0]`` is the start.

    ``residuals[k]`` is ``||I - B_k A||_F``.  Stops early once the residual
    drops to ``tol``.
    """
    a = check_square(a)
    p = a.shape[0]
    eye = np.eye(p)
    b = initial_inverse(a, init_mode)
    own = CostLedger()
    iterates = [b]
    residuals = [float(np.linalg.norm(eye - b @ a))]
    for step in range(1, max_iters + 1):
        if residuals[-1] <= tol:
            break
        b = newton_schulz_step(b, a)
        own.multiply(2 * p)
        res = float(np.linalg.norm(eye - b @ a))
        if not np.isfinite(res) or res > DIVERGENCE_LIMIT:
            raise DivergenceError(step, res)
        iterates.append(b)
        residuals.append(res)
    if ledger is not None:
        ledger.merge(own)
    return NewtonSchulzRun(iterates, residuals, own)


def power_iteration(a, v0, k: int, ledger: CostLedger | None = None) -> np.ndarray:
    """``k`` normalised products ``v <- A v / ||A v||``, one vector multiply each."""
    a = np.asarray(a, dtype=float)
    v = np.asarray(v0, dtype=float).copy()
    if k < 0:
        raise ValueError("k must be >= 0")
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValueError("start vector must be nonzero")
    v /= norm
    for _ in range(k):
        w = a @ v
        norm = np.linalg.norm(w)
        if norm == 0:
            raise ArithmeticError("power iteration hit A v = 0")
        v = w / norm
    if ledger is not None:
        ledger.multiply(k)
    return v


class ScheduleKind(str, enum.Enum):
    CONSTANT = "constant"
    DECREASING = "decreasing"


@dataclass(frozen=True)
class Schedule:
    """Power-iteration steps spent on each of the ``p`` eigenvectors.

    ``constant`` spends ``k`` on every vector; ``decreasing`` spends
    ``k, k-1, ...`` floored at one step.
    """

    kind: ScheduleKind
    k: int

    def __post_init__(self):
        object.__setattr__(self, "kind", ScheduleKind(self.kind))
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k}")

    @classmethod
    def constant(cls, k: int) -> "Schedule":
        return cls(ScheduleKind.CONSTANT, k)

    @classmethod
    def decreasing(cls, k: int) -> "Schedule":
        return cls(ScheduleKind.DECREASING, k)

    def per_vector_iters(self, p: int) -> list[int]:
        if self.kind is ScheduleKind.CONSTANT:
            return [int(self.k)] * p
        return [max(int(self.k) - i, 1) for i in range(p)]

    def total_cost(self, p: int) -> int:
        return sum(self.per_vector_iters(p))

    @property
    def label(self) -> str:
        return f"power-{self.kind.value}-{self.k}"


def binomial_schedule_cost(k: int, p: int) -> int:
    """``C(k+p, 2) - C(k, 2)``, i.e. ``k + (k+1) + ... + (k+p-1)``; reference only."""
    return math.comb(k + p, 2) - math.comb(k, 2)


@dataclass(frozen=True)
class EigenPair:
    value: float
    vector: np.ndarray


@dataclass
class DeflationResult:
    pairs: list[EigenPair]
    truncated: bool
    ledger: CostLedger
    # cumulative cost after each completed eigenvector
    costs: list[int] = field(default_factory=list)

    def __iter__(self):
        return iter((pr.value, pr.vector) for pr in self.pairs)

    def __len__(self):
        return len(self.pairs)


def deflated_eigs(a, schedule: Schedule, stream=None, ledger: CostLedger | None = None,
                  literal: bool = False) -> DeflationResult:
    """Eigenpairs one at a time by power iteration on the deflated matrix.

    Deflation subtracts ``lambda_i v_i v_i^T`` with the Rayleigh quotient
    ``lambda_i``; ``literal=True`` subtracts ``v_i v_i^T`` instead.  When an
    estimate falls to ``1e-12`` or below the remaining pairs are dropped and
    ``truncated`` is set.
    """
    a = check_square(a)
    p = a.shape[0]
    rng = as_generator(stream)
    current = a.copy()
    own = CostLedger()
    pairs: list[EigenPair] = []
    costs: list[int] = []
    truncated = False
    spent = 0
    for iters in schedule.per_vector_iters(p):
        v = power_iteration(current, rng.standard_normal(p), iters, own)
        spent += iters
        lam = float(v @ current @ v)
        if lam <= EIG_FLOOR:
            truncated = True
            break
        pairs.append(EigenPair(lam, v))
        costs.append(spent)
        current = current - (1.0 if literal else lam) * np.outer(v, v)
        current = 0.5 * (current + current.T)
    if ledger is not None:
        ledger.merge(own)
    return DeflationResult(pairs, truncated, own, costs)


def inverse_from_eigs(eigs) -> np.ndarray:
    """``sum_i v_i v_i^T / lambda_i`` over pairs with ``lambda_i > 1e-12``."""
    kept = [(lam, np.asarray(v, dtype=float)) for lam, v in eigs if lam > EIG_FLOOR]
    if not kept:
        raise ValueError("no eigenpairs with a positive eigenvalue estimate")
    vecs = np.column_stack([v for _, v in kept])
    inv = (vecs / np.array([lam for lam, _ in kept])) @ vecs.T
    return 0.5 * (inv + inv.T)


def regression_risk(b, s, beta, sigma2_noise: float = 1.0) -> float:
    """Risk of ``B X^T Y`` given ``X``: ``||(BS - I) beta||^2 + sigma^2 tr(B S B^T)``."""
    b = np.asarray(b, dtype=float)
    s = check_square(s, "S")
    beta = np.asarray(beta, dtype=float)
    p = s.shape[0]
    if b.shape != (p, p) or beta.shape != (p,):
        raise ValueError(f"shape mismatch: B {b.shape}, S {s.shape}, beta {beta.shape}")
    bias = (b @ s - np.eye(p)) @ beta
    return float(bias @ bias + sigma2_noise * np.trace(b @ s @ b.T))


@dataclass(frozen=True)
class TrajectoryPoint:
    checkpoint: int
    cost: float
    risk: float
    residual: float


@dataclass
class Trajectory:
    rho: float
    method: str
    points: list[TrajectoryPoint]
    floor_risk: float

    def rows(self) -> list[dict]:
        return [
            {
                "rho": self.rho,
                "method": self.method,
                "checkpoint": pt.checkpoint,
                "cost": pt.cost,
                "risk": pt.risk,
                "residual": pt.residual,
                "floor_risk": self.floor_risk,
            }
            for pt in self.points
        ]

    @property
    def costs(self) -> np.ndarray:
        return np.array([pt.cost for pt in self.points])

    @property
    def risks(self) -> np.ndarray:
        return np.array([pt.risk for pt in self.points])


@dataclass(frozen=True)
class MethodSpec:
    """One curve of the experiment: Newton-Schulz with an init, or a power schedule."""

    name: str
    init_mode: InitMode | None = None
    iters: int = 20
    schedule: Schedule | None = None

    @classmethod
    def parse(cls, text: str, ns_iters: int = 20) -> "MethodSpec":
        """``ns-safe``, ``ns-naive``, ``power-constant-<k>`` or ``power-decreasing-<k>``."""
        parts = text.lower().split("-")
        if parts[0] == "ns" and len(parts) == 2:
            return cls(text.lower(), init_mode=InitMode(parts[1]), iters=ns_iters)
        if parts[0] == "power" and len(parts) == 3:
            return cls(text.lower(), schedule=Schedule(ScheduleKind(parts[1]), int(parts[2])))
        raise ValueError(f"unknown method {text!r}")


def _method_curve(method: MethodSpec, s: np.ndarray, beta, rng) -> tuple[list[float], list[float], list[float]]:
    p = s.shape[0]
    if method.schedule is None:
        run = newton_schulz(s, method.init_mode, method.iters)
        costs = [2.0 * p * k for k in range(len(run.iterates))]
        risks = [regression_risk(b, s, beta) for b in run.iterates]
        return costs, risks, list(run.residuals)
    res = deflated_eigs(s, method.schedule, rng)
    eye = np.eye(p)
    costs, risks, resid = [], [], []
    for i in range(1, len(res.pairs) + 1):
        b = inverse_from_eigs((pr.value, pr.vector) for pr in res.pairs[:i])
        costs.append(float(res.costs[i - 1]))
        risks.append(regression_risk(b, s, beta))
        resid.append(float(np.linalg.norm(eye - b @ s)))
    return costs, risks, resid


def _matinv_chunk(cfgs, methods, beta, master_seed, start, stop):
    out = []
    for r in range(start, stop):
        stream = derive_stream(master_seed, r)
        per_rho = []
        for ri, cfg in enumerate(cfgs):
            _, s = generate_design(cfg, stream.generator(0, ri))
            floor = regression_risk(np.linalg.inv(s), s, beta)
            curves = [_method_curve(m, s, beta, stream.generator(1, ri, mi)) for mi, m in enumerate(methods)]
            per_rho.append((floor, curves))
        out.append(per_rho)
    return out


def matinv_experiment(
    rhos=(0.01, 0.45, 0.88),
    methods=("ns-safe", "ns-naive", "power-constant-200", "power-decreasing-200"),
    datasets: int = 200,
    master_seed: int = 0,
    n_rows: int = 100,
    p: int = 10,
    ns_iters: int = 20,
    n_jobs: int = 1,
) -> list[Trajectory]:
    """Dataset-averaged risk against cumulative cost for each (rho, method).

    Power-method checkpoints come after each completed eigenvector; a
    checkpoint missing in some datasets (truncated deflation) is averaged over
    the datasets that reached it.
    """
    if datasets < 1:
        raise ValueError("datasets must be >= 1")
    cfgs = [DesignConfig(n_rows=n_rows, p=p, rho=r) for r in rhos]
    specs = [m if isinstance(m, MethodSpec) else MethodSpec.parse(m, ns_iters) for m in methods]
    beta = np.linspace(-1.0, 1.0, p)
    bounds = [(a, min(a + CHUNK_SIZE, datasets)) for a in range(0, datasets, CHUNK_SIZE)]
    args = [(cfgs, specs, beta, master_seed, a, b) for a, b in bounds]
    if n_jobs == 1 or len(bounds) == 1:
        parts = [_matinv_chunk(*arg) for arg in args]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(lambda arg: _matinv_chunk(*arg), args))
    results = [rec for part in parts for rec in part]

    out = []
    for ri, cfg in enumerate(cfgs):
        floor = float(np.mean([rec[ri][0] for rec in results]))
        for mi, method in enumerate(specs):
            curves = [rec[ri][1][mi] for rec in results]
            depth = max(len(c[0]) for c in curves)
            points = []
            for k in range(depth):
                reached = [c for c in curves if len(c[0]) > k]
                points.append(
                    TrajectoryPoint(
                        checkpoint=k,
                        cost=float(np.mean([c[0][k] for c in reached])),
                        risk=float(np.mean([c[1][k] for c in reached])),
                        residual=float(np.mean([c[2][k] for c in reached])),
                    )
                )
            out.append(Trajectory(cfg.rho, method.name, points, floor))
    return out
