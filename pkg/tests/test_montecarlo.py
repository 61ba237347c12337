import numpy as np
import pytest

from riskcompute.cost import CostLedger
from riskcompute.montecarlo import (
    LossKind,
    ReplicateError,
    contaminated_variance,
    derive_stream,
    run_replicates,
    sample_contaminated,
    simulate,
)


def test_same_stream_same_draws():
    a = derive_stream(7, 0).generator().random(100)
    b = derive_stream(7, 0).generator().random(100)
    np.testing.assert_array_equal(a, b)


def test_distinct_streams_differ():
    a = derive_stream(7, 0).generator().random(100)
    b = derive_stream(7, 1).generator().random(100)
    assert not np.array_equal(a, b)


def test_streams_pairwise_uncorrelated():
    draws = np.array([derive_stream(7, k).generator().random(1000) for k in range(1001)])
    r = np.corrcoef(draws)
    off = r[np.triu_indices(len(r), k=1)]
    # Independent streams give r ~ N(0, 1/1000): |r| < 0.1 for all but ~0.16% of pairs.
    assert np.mean(np.abs(off) >= 0.1) < 0.003
    assert abs(off.std() * np.sqrt(1000) - 1.0) < 0.02
    assert abs(off.mean()) < 1e-3


def test_subkeys_give_independent_children():
    s = derive_stream(3, 5)
    assert not np.array_equal(s.generator(0).random(10), s.generator(1).random(10))


def test_negative_seed_rejected():
    with pytest.raises(ValueError):
        derive_stream(-1, 0)


def test_contaminated_alpha_zero_is_standard_normal():
    x = sample_contaminated(derive_stream(1, 0), 10**6, 0.0)
    assert abs(x.var() - 1.0) < 0.01


def test_contaminated_alpha_one_variance_48():
    # t3 has no fourth moment, so one sample variance is noisy; take the median of five.
    variances = [sample_contaminated(derive_stream(2, k), 10**6, 1.0).var() for k in range(5)]
    assert abs(np.median(variances) / 48.0 - 1.0) < 0.05
    assert contaminated_variance(1.0) == 48.0


def test_contaminated_mean_zero():
    x = sample_contaminated(derive_stream(3, 0), 10**6, 0.1)
    se = np.sqrt(contaminated_variance(0.1) / x.size)
    assert abs(x.mean()) < 3 * se


@pytest.mark.parametrize("alpha", [-0.1, 1.5])
def test_contaminated_rejects_bad_alpha(alpha):
    with pytest.raises(ValueError):
        sample_contaminated(0, 10, alpha)


def test_identity_estimator_zero_risk():
    est = run_replicates(lambda x, rng, led: np.array([0.5, 2.0]), [0.5, 2.0], lambda rng: rng.random(3), 10, 0)
    assert est.mean_loss == 0.0 and est.std_error == 0.0
    assert est.loss_kind is LossKind.VECTOR
    assert est.mean_cost is None


def test_sample_mean_risk_matches_variance():
    def estimator(x, rng, ledger):
        ledger.look(x.size)
        return x.mean()

    est = run_replicates(estimator, 0.0, lambda rng: rng.standard_normal(100), 10**5, 11)
    assert est.within(0.01, 3.0), est
    assert est.loss_kind is LossKind.SCALAR
    assert est.mean_cost.grand_total == pytest.approx(100)


def test_run_is_deterministic_and_independent_of_jobs():
    kw = dict(estimator=lambda x, rng, led: x.mean() + rng.normal(), truth=0.0,
              sampler=lambda rng: rng.standard_normal(20), replicates=3000, master_seed=4)
    a = run_replicates(**kw)
    b = run_replicates(**kw)
    c = run_replicates(**kw, n_jobs=3)
    assert a == b
    assert (a.mean_loss, a.std_error) == (c.mean_loss, c.std_error)


def test_weighted_loss():
    est = run_replicates(lambda x, rng, led: np.array([1.0, 3.0]), [0.0, 0.0], lambda rng: rng.random(2), 4, 0,
                         weights=[1.0, 0.0])
    assert est.mean_loss == 1.0


def test_failing_replicate_reports_index():
    def estimator(x, rng, ledger):
        if x[0] > 0.9:
            raise RuntimeError("boom")
        return 0.0

    with pytest.raises(ReplicateError) as info:
        simulate(estimator, lambda rng: rng.random(1), 200, 0)
    assert isinstance(info.value.index, int)


def test_requires_two_replicates():
    with pytest.raises(ValueError):
        run_replicates(lambda x, r, l: 0.0, 0.0, lambda rng: rng.random(1), 1, 0)


def test_simulate_merges_ledgers():
    est, ledger = simulate(lambda x, rng, led: led.look(2) and 0.0, lambda rng: rng.random(1), 2500, 0, n_jobs=2)
    assert est.shape == (2500, 1)
    assert ledger == CostLedger().look(5000)
