"""Exponential families estimated from subset sufficient statistics.

Each component ``k`` of the sufficient statistic is summed over its own
subset ``S_k`` of the sample; ``tau_hat_k = T_k / |S_k|`` estimates the
mean-value parameter.  The covariance of ``tau_hat`` depends only on the set
sizes and their pairwise overlaps, which makes the risk of any smooth target
``eta(tau)`` a closed-form function of the allocation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, special

from .cost import CostLedger, GeneralAllocation, allocation_cost, block_patterns
from .validation import check_sample

__all__ = [
    "DomainError",
    "ConvergenceError",
    "FamilySpec",
    "TargetSpec",
    "normal_family",
    "bernoulli_family",
    "gamma_family",
    "identity_target",
    "natural_target",
    "normal_moments_target",
    "subset_statistics",
    "theta_hat",
    "sigma_matrix",
    "allocation_risk",
    "optimize_allocation",
    "numerical_jacobian",
]


class DomainError(ValueError):
    """Mean-value parameter outside the family's domain."""


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class FamilySpec:
    name: str
    p: int
    t: Callable[[np.ndarray], np.ndarray]
    tau_of_theta: Callable[[np.ndarray], np.ndarray]
    theta_of_tau: Callable[[np.ndarray], np.ndarray]
    fisher_info_inv_tau: Callable[[np.ndarray], np.ndarray]
    sampler: Callable[[np.ndarray, np.random.Generator, int], np.ndarray]
    unit_costs: tuple[float, ...] = field(default=None)
    theta_jacobian: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        costs = (1.0,) * self.p if self.unit_costs is None else tuple(float(c) for c in self.unit_costs)
        if len(costs) != self.p or any(c <= 0 for c in costs):
            raise ValueError("unit_costs must hold p positive values")
        object.__setattr__(self, "unit_costs", costs)

    def stats(self, x) -> np.ndarray:
        """(n, p) matrix of per-point sufficient statistics."""
        out = np.asarray(self.t(np.asarray(x, dtype=float)), dtype=float)
        return out.reshape(-1, self.p)

    def with_costs(self, unit_costs: Sequence[float]) -> "FamilySpec":
        return FamilySpec(**{**self.__dict__, "unit_costs": tuple(unit_costs)})


@dataclass(frozen=True)
class TargetSpec:
    name: str
    eta: Callable[[np.ndarray], np.ndarray]
    eta_grad: Callable[[np.ndarray], np.ndarray] | None = None
    q_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.q_weights is not None:
            q = tuple(float(w) for w in self.q_weights)
            if any(w < 0 for w in q):
                raise ValueError("q_weights must be non-negative")
            object.__setattr__(self, "q_weights", q)

    def jacobian(self, tau) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        if self.eta_grad is not None:
            return np.atleast_2d(np.asarray(self.eta_grad(tau), dtype=float))
        return numerical_jacobian(self.eta, tau)

    def weighted(self, q_weights) -> "TargetSpec":
        return TargetSpec(self.name, self.eta, self.eta_grad, tuple(q_weights))


def numerical_jacobian(fn, tau) -> np.ndarray:
    """Central differences with step ``1e-6 * max(1, |tau_k|)``."""
    tau = np.asarray(tau, dtype=float)
    f0 = np.atleast_1d(np.asarray(fn(tau), dtype=float))
    jac = np.empty((f0.size, tau.size))
    for k in range(tau.size):
        h = 1e-6 * max(1.0, abs(tau[k]))
        up, dn = tau.copy(), tau.copy()
        up[k] += h
        dn[k] -= h
        jac[:, k] = (np.atleast_1d(fn(up)) - np.atleast_1d(fn(dn))) / (2 * h)
    return jac


# -- builtin families ---------------------------------------------------------


def normal_family(unit_costs=(1, 1)) -> FamilySpec:
    """N(mu, sigma^2) with t(x) = (x, x^2); tau = (mu, mu^2 + sigma^2)."""

    def tau_of_theta(theta):
        t1, t2 = np.asarray(theta, dtype=float)
        if t2 >= 0:
            raise DomainError("theta_2 must be negative")
        s2 = -1.0 / (2 * t2)
        mu = t1 * s2
        return np.array([mu, mu * mu + s2])

    def theta_of_tau(tau):
        mu, m2 = np.asarray(tau, dtype=float)
        s2 = m2 - mu * mu
        if not s2 > 0:
            raise DomainError(f"implied variance {s2} must be positive")
        return np.array([mu / s2, -1.0 / (2 * s2)])

    def theta_jacobian(tau):
        mu, m2 = np.asarray(tau, dtype=float)
        s2 = m2 - mu * mu
        # d(s2)/dtau = (-2 mu, 1)
        return np.array(
            [
                [1 / s2 + 2 * mu * mu / s2**2, -mu / s2**2],
                [-mu / s2**2, 1 / (2 * s2**2)],
            ]
        )

    def cov(tau):
        mu, m2 = np.asarray(tau, dtype=float)
        s2 = m2 - mu * mu
        if not s2 > 0:
            raise DomainError(f"implied variance {s2} must be positive")
        return np.array([[s2, 2 * mu * s2], [2 * mu * s2, 2 * s2 * s2 + 4 * mu * mu * s2]])

    def sampler(tau, rng, size):
        mu, m2 = np.asarray(tau, dtype=float)
        return rng.normal(mu, np.sqrt(m2 - mu * mu), size)

    return FamilySpec(
        name="normal",
        p=2,
        t=lambda x: np.column_stack([x, x * x]),
        tau_of_theta=tau_of_theta,
        theta_of_tau=theta_of_tau,
        fisher_info_inv_tau=cov,
        sampler=sampler,
        unit_costs=tuple(unit_costs),
        theta_jacobian=theta_jacobian,
    )


def bernoulli_family(unit_costs=(1,)) -> FamilySpec:
    def theta_of_tau(tau):
        (q,) = np.atleast_1d(np.asarray(tau, dtype=float))
        if not 0 < q < 1:
            raise DomainError(f"Bernoulli mean must lie in (0, 1), got {q}")
        return np.array([special.logit(q)])

    def cov(tau):
        (q,) = np.atleast_1d(np.asarray(tau, dtype=float))
        return np.array([[q * (1 - q)]])

    return FamilySpec(
        name="bernoulli",
        p=1,
        t=lambda x: x.reshape(-1, 1),
        tau_of_theta=lambda theta: np.atleast_1d(special.expit(np.asarray(theta, dtype=float))),
        theta_of_tau=theta_of_tau,
        fisher_info_inv_tau=cov,
        sampler=lambda tau, rng, size: (rng.random(size) < np.atleast_1d(tau)[0]).astype(float),
        unit_costs=tuple(unit_costs),
        theta_jacobian=lambda tau: np.array([[1.0 / (tau[0] * (1 - tau[0]))]]),
    )


def _gamma_shape(gap: float, max_iter: int = 100) -> float:
    """Solve ``log(k) - digamma(k) = gap`` for the shape ``k`` by damped Newton in log k."""
    if not gap > 0:
        raise DomainError(f"need log E[X] > E[log X] (got gap {gap})")
    # Minka's starting point.
    k = (3 - gap + np.sqrt((gap - 3) ** 2 + 24 * gap)) / (12 * gap)
    u = np.log(k)
    for _ in range(max_iter):
        k = np.exp(u)
        f = np.log(k) - special.digamma(k) - gap
        fprime = 1.0 - k * special.polygamma(1, k)  # d/du
        step = f / fprime
        # Damping: never move log k by more than 1 per iteration.
        step = float(np.clip(step, -1.0, 1.0))
        u -= step
        if abs(step) < 1e-13 or abs(f) <= 8 * np.finfo(float).eps * max(1.0, abs(u)):
            return float(np.exp(u))
    raise ConvergenceError(f"gamma shape inversion did not converge in {max_iter} iterations (gap={gap})")


def gamma_family(unit_costs=(1, 1)) -> FamilySpec:
    """Gamma(shape k, rate b): t(x) = (log x, x), theta = (k - 1, -b)."""

    def tau_of_theta(theta):
        t1, t2 = np.asarray(theta, dtype=float)
        k, b = t1 + 1, -t2
        if k <= 0 or b <= 0:
            raise DomainError("need theta_1 > -1 and theta_2 < 0")
        return np.array([special.digamma(k) - np.log(b), k / b])

    def shape_rate(tau):
        elog, mean = np.asarray(tau, dtype=float)
        if not mean > 0:
            raise DomainError("gamma mean must be positive")
        k = _gamma_shape(np.log(mean) - elog)
        return k, k / mean

    def theta_of_tau(tau):
        k, b = shape_rate(tau)
        return np.array([k - 1, -b])

    def cov(tau):
        k, b = shape_rate(tau)
        return np.array([[special.polygamma(1, k), 1 / b], [1 / b, k / b**2]])

    def sampler(tau, rng, size):
        k, b = shape_rate(tau)
        return rng.gamma(k, 1 / b, size)

    return FamilySpec(
        name="gamma",
        p=2,
        t=lambda x: np.column_stack([np.log(x), x]),
        tau_of_theta=tau_of_theta,
        theta_of_tau=theta_of_tau,
        fisher_info_inv_tau=cov,
        sampler=sampler,
        unit_costs=tuple(unit_costs),
    )


FAMILIES = {"normal": normal_family, "bernoulli": bernoulli_family, "gamma": gamma_family}


# -- targets ------------------------------------------------------------------


def identity_target(p: int, q_weights=None) -> TargetSpec:
    return TargetSpec("identity", lambda tau: np.asarray(tau, dtype=float), lambda tau: np.eye(p), q_weights)


def natural_target(family: FamilySpec, q_weights=None) -> TargetSpec:
    return TargetSpec("natural", family.theta_of_tau, family.theta_jacobian, q_weights)


def normal_moments_target(q_weights=None) -> TargetSpec:
    """(mu, sigma^2) = (tau_1, tau_2 - tau_1^2) for the normal family."""
    return TargetSpec(
        "normal_moments",
        lambda tau: np.array([tau[0], tau[1] - tau[0] ** 2]),
        lambda tau: np.array([[1.0, 0.0], [-2.0 * tau[0], 1.0]]),
        q_weights,
    )


# -- operations ---------------------------------------------------------------


def subset_statistics(
    sample, alloc: GeneralAllocation, family: FamilySpec, ledger: CostLedger | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(T_S, tau_hat_S)``; the ledger is charged ``sum_k c_k |S_k|`` looks."""
    if alloc.p != family.p:
        raise ValueError(f"allocation has p={alloc.p} but family {family.name} has p={family.p}")
    x = check_sample(sample, min_size=1)
    masks = alloc.masks(x.size)
    stats = family.stats(x[: alloc.used]) if alloc.used else np.zeros((0, family.p))
    used = masks[:, : alloc.used]
    totals = np.array([stats[used[k], k].sum() for k in range(family.p)])
    sizes = used.sum(axis=1)
    if ledger is not None:
        ledger.look(allocation_cost(alloc, family.unit_costs))
    return totals, totals / sizes


def theta_hat(tau_hat, family: FamilySpec) -> np.ndarray:
    return np.asarray(family.theta_of_tau(np.asarray(tau_hat, dtype=float)), dtype=float)


def sigma_matrix(family: FamilySpec, tau, alloc: GeneralAllocation) -> np.ndarray:
    """Covariance of ``tau_hat``: ``|S_k ∩ S_l| I^{-1}(tau)_{kl} / (|S_k| |S_l|)``.

    On the diagonal this gives ``I^{-1}_{kk} / |S_k|``, the variance of a mean
    of ``|S_k|`` iid terms.
    """
    alloc.check_feasible()
    if alloc.p != family.p:
        raise ValueError("allocation and family dimensions differ")
    cov = np.atleast_2d(family.fisher_info_inv_tau(np.asarray(tau, dtype=float)))
    overlaps = alloc.overlaps.astype(float)
    sizes = np.diag(overlaps)
    return overlaps * cov / np.outer(sizes, sizes)


def _weighted_trace(jac, sigma, q):
    m = jac @ sigma @ jac.T
    if q is None:
        return float(np.trace(m))
    q = np.asarray(q, dtype=float)
    if q.size != m.shape[0]:
        raise ValueError(f"q_weights has {q.size} entries, target has dimension {m.shape[0]}")
    return float(q @ np.diag(m))


def allocation_risk(family: FamilySpec, tau, alloc: GeneralAllocation, target: TargetSpec) -> float:
    """``tr(Q J Sigma J^T)`` with ``J`` the Jacobian of the target at ``tau``."""
    jac = target.jacobian(tau)
    if jac.shape[1] != family.p:
        raise ValueError(f"target Jacobian has {jac.shape[1]} columns, family has p={family.p}")
    return _weighted_trace(jac, sigma_matrix(family, tau, alloc), target.q_weights)


@dataclass(frozen=True)
class AllocationResult:
    allocation: GeneralAllocation
    cost: float
    risk: float

    def to_dict(self) -> dict:
        d = self.allocation.to_dict()
        d.update(cost=self.cost, risk=self.risk)
        return d


def _pair_search(family, tau, target, budget, n):
    """Exact search over all (n1, n2, n12) triples for p = 2.

    Near-ties (relative 1e-12) go to larger n12, then larger n1, then smaller n2.
    """
    c1, c2 = family.unit_costs
    jac = target.jacobian(tau)
    cov = np.atleast_2d(family.fisher_info_inv_tau(np.asarray(tau, dtype=float)))
    q = np.ones(jac.shape[0]) if target.q_weights is None else np.asarray(target.q_weights)
    # risk = sum_kl W_kl Sigma_kl with W = J^T Q J.
    w = jac.T @ (q[:, None] * jac)
    cands = []
    for n12 in range(0, n + 1):
        if (c1 + c2) * n12 > budget + 1e-9:
            break
        N1, N2 = np.meshgrid(np.arange(n - n12 + 1), np.arange(n - n12 + 1), indexing="ij")
        ok = (N1 + N2 + n12 <= n) & (c1 * (N1 + n12) + c2 * (N2 + n12) <= budget + 1e-9)
        ok &= (N1 + n12 >= 1) & (N2 + n12 >= 1)
        if not ok.any():
            continue
        n1s, n2s = N1[ok], N2[ok]
        a = (n1s + n12).astype(float)
        b = (n2s + n12).astype(float)
        risk = w[0, 0] * cov[0, 0] / a + w[1, 1] * cov[1, 1] / b + 2 * w[0, 1] * n12 * cov[0, 1] / (a * b)
        near = np.flatnonzero(risk <= risk.min() * (1 + 1e-12))
        j = near[np.lexsort((n2s[near], -n1s[near]))[0]]
        cands.append((float(risk[j]), int(n1s[j]), int(n2s[j]), n12))
    if not cands:
        raise ValueError(f"budget {budget} admits no allocation")
    best = min(c[0] for c in cands)
    near = [c for c in cands if c[0] <= best * (1 + 1e-12)]
    _, n1, n2, n12 = max(near, key=lambda c: (c[3], c[1], -c[2]))
    return GeneralAllocation.from_pair(n1, n2, n12)


def _round_and_repair(x, patterns, family, tau, target, budget, n):
    """Floor the continuous block sizes, restore feasibility, then hill-climb on single-unit moves."""
    p = family.p
    costs = np.array(family.unit_costs)
    pat_cost = np.array([costs[list(m)].sum() for m in patterns])
    member = np.array([[k in m for m in patterns] for k in range(p)])
    nb = len(patterns)

    def feasible(z):
        return (
            np.all(z >= 0) and z.sum() <= n and pat_cost @ z <= budget + 1e-9 and np.all(member @ z >= 1)
        )

    def risk(z):
        return allocation_risk(family, tau, GeneralAllocation.from_block_sizes(p, z), target)

    z = np.floor(np.maximum(x, 0) + 1e-9).astype(int)
    for k in range(p):
        if member[k] @ z < 1:
            z[patterns.index((k,))] += 1
    while not feasible(z):
        trial = []
        for j in np.flatnonzero(z > 0):
            zz = z.copy()
            zz[j] -= 1
            if np.all(member @ zz >= 1):
                trial.append((risk(zz), j))
        if not trial:
            raise ValueError(f"budget {budget} admits no allocation")
        z[min(trial)[1]] -= 1

    steps = []
    for j in range(nb):
        for delta in (1, -1):
            e = np.zeros(nb, dtype=int)
            e[j] = delta
            steps.append(e)
        for k in range(nb):
            if k != j:
                e = np.zeros(nb, dtype=int)
                e[j], e[k] = -1, 1
                steps.append(e)
    current = risk(z)
    improved = True
    while improved:
        improved = False
        for e in steps:
            zz = z + e
            if not feasible(zz):
                continue
            r = risk(zz)
            if r < current * (1 - 1e-12):
                z, current, improved = zz, r, True
    return z


def _relaxed_search(family, tau, target, budget, n, starts=8, seed=0):
    p = family.p
    patterns = block_patterns(p)
    costs = np.array(family.unit_costs)
    pat_cost = np.array([costs[list(m)].sum() for m in patterns])
    member = np.array([[k in m for m in patterns] for k in range(p)], dtype=float)
    jac = target.jacobian(tau)
    cov = np.atleast_2d(family.fisher_info_inv_tau(np.asarray(tau, dtype=float)))
    q = np.ones(jac.shape[0]) if target.q_weights is None else np.asarray(target.q_weights)
    w = jac.T @ (q[:, None] * jac)
    coef = w * cov

    def objective(z):
        ov = member @ np.diag(z) @ member.T
        sizes = np.maximum(np.diag(ov), 1e-9)
        return float(np.sum(coef * ov / np.outer(sizes, sizes)))

    cons = [
        {"type": "ineq", "fun": lambda z: budget - pat_cost @ z},
        {"type": "ineq", "fun": lambda z: n - z.sum()},
        {"type": "ineq", "fun": lambda z: member @ z - 1.0},
    ]
    rng = np.random.default_rng(seed)
    best = None
    for s in range(starts):
        if s == 0:
            z0 = np.zeros(len(patterns))
            z0[-1] = min(budget / pat_cost[-1], n)
        else:
            z0 = rng.dirichlet(np.ones(len(patterns))) * min(budget / pat_cost.max(), n)
        res = optimize.minimize(
            objective, z0, method="SLSQP", bounds=[(0, n)] * len(patterns), constraints=cons,
            options={"maxiter": 500, "ftol": 1e-14},
        )
        if not np.all(np.isfinite(res.x)):
            continue
        if best is None or res.fun < best[0] - 1e-15 or (
            abs(res.fun - best[0]) <= 1e-15 and tuple(res.x) < tuple(best[1])
        ):
            best = (res.fun, res.x)
    if best is None:
        raise ValueError("continuous relaxation failed from every start")
    z = _round_and_repair(best[1], patterns, family, tau, target, budget, n)
    return GeneralAllocation.from_block_sizes(p, z)


def optimize_allocation(
    family: FamilySpec,
    tau,
    target: TargetSpec,
    budget: float,
    n: int,
    method: str = "auto",
    starts: int = 8,
    seed: int = 0,
) -> AllocationResult:
    """Minimise :func:`allocation_risk` subject to ``sum_k c_k |S_k| <= budget``.

    ``method="auto"`` is exact for p <= 2 and uses the continuous relaxation
    (multi-start SLSQP over block sizes, then integer rounding and local
    repair) for p > 2.
    """
    costs = np.array(family.unit_costs)
    if budget < costs.sum():
        raise ValueError(f"budget {budget} cannot give every statistic one sample (needs >= {costs.sum()})")
    if method == "auto":
        method = "exhaustive" if family.p <= 2 else "relaxed"
    if method == "exhaustive":
        if family.p == 1:
            size = int(min(n, np.floor(budget / costs[0] + 1e-9)))
            alloc = GeneralAllocation.disjoint([size])
        elif family.p == 2:
            alloc = _pair_search(family, tau, target, budget, n)
        else:
            raise ValueError("exhaustive search is only implemented for p <= 2")
    elif method == "relaxed":
        alloc = _relaxed_search(family, tau, target, budget, n, starts=starts, seed=seed)
    else:
        raise ValueError(f"unknown method {method!r}")
    alloc.check_feasible(n)
    return AllocationResult(alloc, allocation_cost(alloc, family.unit_costs), allocation_risk(family, tau, alloc, target))


def sweep(family, tau, target, budgets, n, method="auto") -> list[AllocationResult]:
    return [optimize_allocation(family, tau, target, b, n, method=method) for b in budgets]
