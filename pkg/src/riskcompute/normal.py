"""Normal mean/variance estimation under a budget of data looks.

Covers the full-data MLE (2 looks per point), the one-pass streaming split
(1 look per point) and the general mixed allocation ``(n1, n2, n12)`` with
cost ``n1 + n2 + 2*n12``, together with their exact or asymptotic risks and
the budget-optimal allocation frontier.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .cost import Allocation, CostLedger
from .validation import check_sample

__all__ = [
    "NormalParams",
    "MomentSums",
    "mle_estimate",
    "mle_risk",
    "streaming_estimate",
    "streaming_risks",
    "streaming_mle_estimate",
    "asymptotic_streaming_risk",
    "optimal_split_p",
    "mixed_estimate",
    "mixed_asymptotic_cov",
    "mixed_asymptotic_risk",
    "optimal_allocation",
    "FrontierPoint",
    "FrontierCurve",
    "frontier",
]


@dataclass(frozen=True)
class NormalParams:
    mu: float
    sigma2: float

    def __post_init__(self):
        if not np.isfinite(self.mu):
            raise ValueError("mu must be finite")
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0):
            raise ValueError(f"sigma2 must be > 0, got {self.sigma2}")

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.sigma2))

    @property
    def snr(self) -> float:
        return self.mu / self.sigma

    @property
    def truth(self) -> np.ndarray:
        return np.array([self.mu, self.sigma2])


@dataclass(frozen=True)
class MomentSums:
    m1: float
    m2: float
    n1_eff: int
    n2_eff: int

    def __post_init__(self):
        if self.m2 < 0:
            raise ValueError("m2 is a sum of squares and cannot be negative")
        if self.n1_eff < 1 or self.n2_eff < 1:
            raise ValueError("both moment sums need at least one point")


def _charge(ledger, looks):
    if ledger is not None:
        ledger.look(looks)


def mle_estimate(sample, ledger: CostLedger | None = None) -> tuple[float, float]:
    x = check_sample(sample, min_size=2)
    n = x.size
    mean = float(x.sum() / n)
    var = float((x * x).sum() / n - mean * mean)
    _charge(ledger, 2 * n)
    return mean, var


def mle_risk(params: NormalParams, n: int) -> float:
    if n < 2:
        raise ValueError("n must be >= 2")
    s2 = params.sigma2
    return s2 / n + 2 * s2 * s2 / n


def _check_split(n, s, lo):
    if not lo <= s <= n - 1:
        raise ValueError(f"s must be in [{lo}, n-1] = [{lo}, {n - 1}], got {s}")


def streaming_sums(x: np.ndarray, s: int) -> MomentSums:
    """First moment over ``x[:s]``, second over ``x[s:]``."""
    return MomentSums(float(x[:s].sum()), float((x[s:] ** 2).sum()), s, x.size - s)


def streaming_estimate(sample, s: int, ledger: CostLedger | None = None) -> tuple[float, float]:
    """Unbiased one-pass estimates from the first ``s`` points (mean) and the rest (second moment).

    The variance estimate is ``s/((s-1)(n-s)) * (M2 - (n-s)/s^2 * M1^2)``,
    which is exactly unbiased for sigma^2.
    """
    x = check_sample(sample, min_size=3)
    n = x.size
    _check_split(n, s, 2)
    sums = streaming_sums(x, s)
    mu_hat = sums.m1 / s
    sigma2_hat = s / ((s - 1) * (n - s)) * (sums.m2 - (n - s) / s**2 * sums.m1**2)
    _charge(ledger, n)
    return mu_hat, sigma2_hat


def streaming_risks(params: NormalParams, n: int, s: int) -> tuple[float, float]:
    """Exact squared-error risks of :func:`streaming_estimate`.

    ``R(mu) = sigma^2/s`` and
    ``R(sigma^2) = (4 s n mu^2 sigma^2 + 2((s-1)s + n) sigma^4) / ((s-1)^2 (n-s))``.
    """
    _check_split(n, s, 2)
    mu2, s2 = params.mu**2, params.sigma2
    risk_mu = s2 / s
    risk_sigma2 = (4 * s * n * mu2 * s2 + 2 * ((s - 1) * s + n) * s2 * s2) / ((s - 1) ** 2 * (n - s))
    return risk_mu, risk_sigma2


def streaming_mle_estimate(sample, s: int, ledger: CostLedger | None = None) -> tuple[float, float]:
    x = check_sample(sample, min_size=2)
    n = x.size
    _check_split(n, s, 1)
    sums = streaming_sums(x, s)
    mu_hat = sums.m1 / s
    _charge(ledger, n)
    return mu_hat, sums.m2 / (n - s) - mu_hat**2


def asymptotic_streaming_risk(params: NormalParams, n: int, p: float) -> float:
    """Large-n total risk of the streaming estimates when ``s = p*n``."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie strictly inside (0, 1), got {p}")
    mu2, s2 = params.mu**2, params.sigma2
    return s2 * (4 * mu2 + 2 * p * s2 - p + 1) / (n * p * (1 - p))


def optimal_split_p(params: NormalParams) -> float:
    """Fraction of the stream to spend on the first moment that minimises the asymptotic risk."""
    a = np.sqrt(4 * params.mu**2 + 1)
    b = np.sqrt(4 * params.mu**2 + 2 * params.sigma2)
    return float(a / (b + a))


def _mixed_sums(x: np.ndarray, alloc: Allocation) -> MomentSums:
    # Layout: [n1 mean-only | n12 both | n2 second-moment-only].
    n1, n12, n2 = alloc.n1, alloc.n12, alloc.n2
    first = x[: n1 + n12]
    second = x[n1 : n1 + n12 + n2]
    return MomentSums(float(first.sum()), float((second**2).sum()), alloc.size1, alloc.size2)


def mixed_estimate(sample, alloc: Allocation, ledger: CostLedger | None = None) -> tuple[float, float]:
    x = check_sample(sample, min_size=1)
    alloc.check_feasible(x.size)
    sums = _mixed_sums(x, alloc)
    mu_hat = sums.m1 / sums.n1_eff
    _charge(ledger, alloc.cost())
    return mu_hat, sums.m2 / sums.n2_eff - mu_hat**2


def mixed_asymptotic_cov(params: NormalParams, alloc: Allocation) -> np.ndarray:
    """Large-n covariance of ``(mu_hat, sigma2_hat)`` from :func:`mixed_estimate`."""
    a, b = alloc.size1, alloc.size2
    if a < 1 or b < 1:
        raise ValueError("degenerate allocation: need n1+n12 >= 1 and n2+n12 >= 1")
    mu, s2 = params.mu, params.sigma2
    off = -2 * alloc.n2 * mu * s2 / (a * b)
    lower = (2 * a * s2 * s2 + 4 * (alloc.n1 + alloc.n2) * mu * mu * s2) / (a * b)
    return np.array([[s2 / a, off], [off, lower]])


def mixed_asymptotic_risk(params: NormalParams, alloc: Allocation) -> float:
    return float(np.trace(mixed_asymptotic_cov(params, alloc)))


def _risk_grid(mu, s2, n1, n2, n12):
    a = n1 + n12
    b = n2 + n12
    with np.errstate(divide="ignore", invalid="ignore"):
        r = s2 / a + (2 * a * s2 * s2 + 4 * (n1 + n2) * mu * mu * s2) / (a * b)
    return np.where((a >= 1) & (b >= 1), r, np.inf)


def _pick(risk, n1, n2, n12, tie_break):
    """Index of the minimum risk with deterministic tie-breaking.

    Ties (relative 1e-12) prefer larger n12 then larger n1 ("overlap"), or
    smaller n12 then larger n1 ("disjoint"); n2 smaller last.
    """
    best = risk.min()
    if not np.isfinite(best):
        raise ValueError("no feasible allocation")
    cand = np.flatnonzero(risk <= best * (1 + 1e-12))
    sign = -1 if tie_break == "overlap" else 1
    order = np.lexsort((n2[cand], -n1[cand], sign * n12[cand]))
    return cand[order[0]]


def _exhaustive(params, n, budget, tie_break):
    mu, s2 = params.mu, params.sigma2
    n12_max = min(budget // 2, n)
    n12 = np.arange(n12_max + 1)
    n1_max = min(budget, n)
    n1 = np.arange(n1_max + 1)
    N12, N1 = np.meshgrid(n12, n1, indexing="ij")
    ok = (2 * N12 + N1 <= budget) & (N12 + N1 <= n) & (N12 + N1 >= 1)
    N12, N1 = N12[ok], N1[ok]
    # For fixed (n1, n12) the risk is monotone in n2, so only the endpoints matter.
    n2_hi = np.minimum(budget - 2 * N12 - N1, n - N12 - N1)
    n2_lo = np.where(N12 >= 1, 0, 1)
    keep = n2_hi >= n2_lo
    N12, N1, n2_hi, n2_lo = N12[keep], N1[keep], n2_hi[keep], n2_lo[keep]
    c12 = np.concatenate([N12, N12])
    c1 = np.concatenate([N1, N1])
    c2 = np.concatenate([n2_lo, n2_hi])
    risk = _risk_grid(mu, s2, c1.astype(float), c2.astype(float), c12.astype(float))
    i = _pick(risk, c1, c2, c12, tie_break)
    return Allocation(int(c1[i]), int(c2[i]), int(c12[i]))


def _relaxed(params, n, budget, tie_break):
    """Continuous optimum over (n1, n12) then integer repair in a small window."""
    mu, s2 = params.mu, params.sigma2
    n12_hi = min(budget / 2, n)

    def best_n2(x1, x12):
        hi = max(min(budget - 2 * x12 - x1, n - x12 - x1), 0.0)
        lo = 0.0 if x12 >= 1 else 1.0
        hi = max(hi, lo)
        r_lo = _risk_grid(mu, s2, x1, lo, x12)
        r_hi = _risk_grid(mu, s2, x1, hi, x12)
        return lo if r_lo <= r_hi else hi

    def objective(z):
        x1, x12 = z
        if x1 < 0 or x12 < 0 or x1 + 2 * x12 > budget or x1 + x12 > n or x1 + x12 < 1:
            return 1e300
        r = _risk_grid(mu, s2, x1, best_n2(x1, x12), x12)
        return float(r) if np.isfinite(r) else 1e300

    starts = [(0.0, n12_hi), (budget / 3, budget / 3), (min(budget, n) * 0.9, 0.05)]
    best = None
    for x0 in starts:
        res = optimize.minimize(objective, x0, method="Nelder-Mead", options={"xatol": 1e-3, "fatol": 1e-15})
        if best is None or res.fun < best.fun:
            best = res
    c1, c12 = best.x
    radius = 3
    grid1 = np.arange(max(0, int(c1) - radius), int(c1) + radius + 2)
    grid12 = np.arange(max(0, int(c12) - radius), int(c12) + radius + 2)
    G12, G1 = np.meshgrid(grid12, grid1, indexing="ij")
    G12, G1 = G12.ravel(), G1.ravel()
    ok = (2 * G12 + G1 <= budget) & (G12 + G1 <= n) & (G12 + G1 >= 1)
    G12, G1 = G12[ok], G1[ok]
    hi = np.minimum(budget - 2 * G12 - G1, n - G12 - G1)
    lo = np.where(G12 >= 1, 0, 1)
    keep = hi >= lo
    G12, G1, hi, lo = G12[keep], G1[keep], hi[keep], lo[keep]
    c12 = np.concatenate([G12, G12])
    c1 = np.concatenate([G1, G1])
    c2 = np.concatenate([lo, hi])
    risk = _risk_grid(mu, s2, c1.astype(float), c2.astype(float), c12.astype(float))
    i = _pick(risk, c1, c2, c12, tie_break)
    return Allocation(int(c1[i]), int(c2[i]), int(c12[i]))


def optimal_allocation(
    params: NormalParams, n: int, budget: int, method: str = "exhaustive", tie_break: str = "overlap"
) -> Allocation:
    """Allocation minimising :func:`mixed_asymptotic_risk` with cost <= budget and at most n points.

    ``method="exhaustive"`` is exact (O(budget^2) candidates);
    ``method="relaxed"`` optimises continuous proportions and repairs to
    integers locally, for large n.
    """
    if int(budget) != budget or not 2 <= budget <= 2 * n:
        raise ValueError(f"budget must be an integer in [2, 2n] = [2, {2 * n}], got {budget}")
    if tie_break not in ("overlap", "disjoint"):
        raise ValueError("tie_break must be 'overlap' or 'disjoint'")
    budget = int(budget)
    if method == "exhaustive":
        return _exhaustive(params, n, budget, tie_break)
    if method == "relaxed":
        return _relaxed(params, n, budget, tie_break)
    raise ValueError(f"unknown method {method!r}")


@dataclass(frozen=True)
class FrontierPoint:
    budget: int
    allocation: Allocation
    risk: float
    risk_mu: float
    risk_sigma2: float

    def row(self) -> dict:
        a = self.allocation
        return {
            "budget": self.budget,
            "n1": a.n1,
            "n2": a.n2,
            "n12": a.n12,
            "risk": self.risk,
            "risk_mu": self.risk_mu,
            "risk_sigma2": self.risk_sigma2,
        }


@dataclass(frozen=True)
class FrontierCurve:
    params: NormalParams
    n: int
    points: tuple[FrontierPoint, ...] = field(default=())

    @property
    def budgets(self) -> np.ndarray:
        return np.array([pt.budget for pt in self.points])

    @property
    def risks(self) -> np.ndarray:
        return np.array([pt.risk for pt in self.points])

    def proportions(self) -> np.ndarray:
        """(len, 3) array of n1/n, n2/n, n12/n along the curve."""
        return np.array([[pt.allocation.n1, pt.allocation.n2, pt.allocation.n12] for pt in self.points]) / self.n

    def rows(self) -> list[dict]:
        return [pt.row() for pt in self.points]


def frontier(params: NormalParams, n: int, budgets, method: str = "exhaustive", tie_break: str = "overlap") -> FrontierCurve:
    budgets = [int(b) for b in budgets]
    if any(b2 < b1 for b1, b2 in zip(budgets, budgets[1:])):
        raise ValueError("budgets must be sorted ascending")
    points = []
    for b in budgets:
        alloc = optimal_allocation(params, n, b, method=method, tie_break=tie_break)
        cov = mixed_asymptotic_cov(params, alloc)
        points.append(FrontierPoint(b, alloc, float(np.trace(cov)), float(cov[0, 0]), float(cov[1, 1])))
    return FrontierCurve(params, n, tuple(points))
