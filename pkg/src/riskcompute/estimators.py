"""Scikit-learn style wrappers around the functional estimators.

Each estimator keeps the compute it spent in ``cost_`` (a ``CostLedger``),
so the budget can be inspected after ``fit`` like any other fitted attribute.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, validate_data

from . import expfam, matinv, normal, robust
from .cost import Allocation, CostLedger, GeneralAllocation
from .validation import check_sample

__all__ = [
    "NormalMomentEstimator",
    "SubsetStatisticEstimator",
    "HodgesLehmannEstimator",
    "AnytimeLinearRegression",
]


class NormalMomentEstimator(BaseEstimator):
    """Estimate ``(mu, sigma^2)`` of a normal sample under a look budget.

    Parameters
    ----------
    method : {"mle", "streaming", "streaming_mle", "mixed"}
        ``streaming`` splits the sample at ``s`` and is unbiased;
        ``mixed`` uses ``allocation`` = ``(n1, n2, n12)``.
    s : int, optional
        Split point for the streaming methods.
    allocation : tuple of int, optional
        Allocation for the mixed method.
    """

    def __init__(self, method="mle", s=None, allocation=None):
        self.method = method
        self.s = s
        self.allocation = allocation

    def fit(self, X, y=None):
        x = check_sample(X, min_size=2)
        ledger = CostLedger()
        if self.method == "mle":
            est = normal.mle_estimate(x, ledger)
        elif self.method == "streaming":
            est = normal.streaming_estimate(x, self._split(x.size), ledger)
        elif self.method == "streaming_mle":
            est = normal.streaming_mle_estimate(x, self._split(x.size), ledger)
        elif self.method == "mixed":
            if self.allocation is None:
                raise ValueError("the mixed method needs allocation=(n1, n2, n12)")
            est = normal.mixed_estimate(x, Allocation(*self.allocation), ledger)
        else:
            raise ValueError(f"unknown method {self.method!r}")
        self.mean_, self.variance_ = est
        self.cost_ = ledger
        return self

    def _split(self, n):
        return n // 2 if self.s is None else self.s

    def transform(self, X=None):
        check_is_fitted(self, "mean_")
        return np.array([self.mean_, self.variance_])


class SubsetStatisticEstimator(BaseEstimator):
    """Exponential-family parameters from statistics averaged over subsets.

    ``family`` is a key of ``expfam.FAMILIES`` or a ``FamilySpec``; ``blocks``
    is the block layout of a ``GeneralAllocation``.  Without ``blocks`` each
    statistic uses the whole sample.
    """

    def __init__(self, family="normal", blocks=None):
        self.family = family
        self.blocks = blocks

    def _family(self):
        if isinstance(self.family, expfam.FamilySpec):
            return self.family
        try:
            return expfam.FAMILIES[self.family]()
        except KeyError:
            raise ValueError(f"unknown family {self.family!r}; choose from {sorted(expfam.FAMILIES)}") from None

    def fit(self, X, y=None):
        x = check_sample(X, min_size=1)
        fam = self._family()
        if self.blocks is None:
            alloc = GeneralAllocation.full(fam.p, x.size)
        else:
            alloc = GeneralAllocation(fam.p, tuple((tuple(m), int(k)) for m, k in self.blocks))
        alloc.check_feasible(x.size)
        ledger = CostLedger()
        self.totals_, self.tau_ = expfam.subset_statistics(x, alloc, fam, ledger)
        self.theta_ = expfam.theta_hat(self.tau_, fam)
        self.allocation_ = alloc
        self.cost_ = ledger
        return self

    def transform(self, X=None):
        check_is_fitted(self, "theta_")
        return self.theta_


class HodgesLehmannEstimator(BaseEstimator):
    """Hodges-Lehmann location with a look budget.

    ``variant`` is one of ``full``, ``subset``, ``sample``, ``sequential`` or
    ``mean``; ``budget`` is the number of looks ``c`` (ignored by ``full``).
    """

    def __init__(self, variant="sequential", budget=None, subset_size=None, random_state=0):
        self.variant = variant
        self.budget = budget
        self.subset_size = subset_size
        self.random_state = random_state

    def fit(self, X, y=None):
        x = check_sample(X, min_size=2)
        kind = robust.HlKind(self.variant)
        budget = self.budget
        if budget is None and kind is not robust.HlKind.FULL:
            budget = x.size - x.size % 2
        m = None
        if kind is robust.HlKind.SUBSET:
            m = robust.default_subset_size(x.size) if self.subset_size is None else self.subset_size
        variant = robust.HlVariant(kind, budget, m)
        variant.check(x.size)
        res = variant.run(x, np.random.default_rng(self.random_state))
        self.location_ = res.estimate
        self.cost_ = res.ledger
        return self

    def transform(self, X=None):
        check_is_fitted(self, "location_")
        return np.array([self.location_])


class AnytimeLinearRegression(RegressorMixin, BaseEstimator):
    """Least squares with an iterative inverse of ``X^T X``.

    Parameters
    ----------
    solver : {"newton_schulz", "power", "exact"}
    init : {"safe", "naive"}
        Newton-Schulz starting point.
    max_iter : int
        Newton-Schulz steps, or ``k`` of the power schedule.
    schedule : {"constant", "decreasing"}
        Power-iteration schedule.
    """

    def __init__(self, solver="newton_schulz", init="safe", max_iter=20, schedule="constant", random_state=0):
        self.solver = solver
        self.init = init
        self.max_iter = max_iter
        self.schedule = schedule
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        validate_data(self, X, reset=True, skip_check_array=True)
        s = X.T @ X
        s = 0.5 * (s + s.T)
        ledger = CostLedger()
        if self.solver == "newton_schulz":
            inv = matinv.newton_schulz(s, self.init, self.max_iter, ledger).final
        elif self.solver == "power":
            sched = matinv.Schedule(self.schedule, self.max_iter)
            eigs = matinv.deflated_eigs(s, sched, np.random.default_rng(self.random_state), ledger)
            inv = matinv.inverse_from_eigs(eigs)
        elif self.solver == "exact":
            inv = np.linalg.inv(s)
        else:
            raise ValueError(f"unknown solver {self.solver!r}")
        self.inverse_ = inv
        self.coef_ = inv @ (X.T @ y)
        self.cost_ = ledger
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = validate_data(self, X, reset=False)
        return X @ self.coef_
