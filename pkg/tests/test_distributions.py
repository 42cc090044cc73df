"""Laws: moments, samplers, parsing, and the mixed-Poisson pmf against oracles."""

import math

import numpy as np
import pytest

from cmpplab.distributions import (
    CLAIM_LAW_TYPES,
    Degenerate,
    DiscreteFinite,
    Exponential,
    Gamma,
    LogNormal,
    claim_law_from_dict,
    claim_mean,
    law_to_dict,
    mixed_poisson_pmf,
    mixing_law_from_dict,
    mixing_mean,
    sample_claim,
    sample_mixing,
)

# Oracle values computed by adaptive quadrature of the gamma mixture over
# log(theta); frozen here so the unit test does not depend on the integrator.
QUAD_ORACLE = {
    (0.5, 2.0, 1.5, 3): 0.01859519090971053,
    (3.7, 2.5, 3.0, 10): 0.02383762663224892,
}


def _rng(seed=0):
    return np.random.Generator(np.random.Philox(key=np.array([seed, 0], dtype=np.uint64)))


@pytest.mark.parametrize(
    "law,mean,var",
    [
        (Degenerate(2.5), 2.5, 0.0),
        (Gamma(2.0, 1.0), 2.0, 2.0),
        (Gamma(0.5, 2.0), 0.25, 0.125),
        (Exponential(2.0), 0.5, 0.25),
        (LogNormal(0.0, 0.5), math.exp(0.125), (math.exp(0.25) - 1.0) * math.exp(0.25)),
        (DiscreteFinite((1.0, 3.0), (0.5, 0.5)), 2.0, 1.0),
    ],
)
def test_exact_moments(law, mean, var):
    assert law.mean() == pytest.approx(mean, rel=1e-14)
    assert law.var() == pytest.approx(var, rel=1e-14, abs=1e-14)


@pytest.mark.parametrize(
    "bad",
    [
        lambda: Degenerate(0.0),
        lambda: Degenerate(-1.0),
        lambda: Degenerate(math.inf),
        lambda: Gamma(0.0, 1.0),
        lambda: Gamma(1.0, -2.0),
        lambda: Exponential(0.0),
        lambda: LogNormal(math.nan, 1.0),
        lambda: LogNormal(0.0, 0.0),
        lambda: DiscreteFinite((), ()),
        lambda: DiscreteFinite((1.0, 2.0), (0.5,)),
        lambda: DiscreteFinite((1.0, -2.0), (0.5, 0.5)),
        lambda: DiscreteFinite((1.0, 1.0), (0.5, 0.5)),
        lambda: DiscreteFinite((1.0, 2.0), (0.5, 0.6)),
        lambda: DiscreteFinite((1.0, 2.0), (1.5, -0.5)),
    ],
)
def test_invalid_law_parameters_raise(bad):
    with pytest.raises(ValueError):
        bad()


def test_weight_sum_tolerance_boundary():
    # 1e-13 off is inside the tolerance, 1e-11 off is outside.
    DiscreteFinite((1.0, 2.0), (0.5, 0.5 + 1e-13))
    with pytest.raises(ValueError):
        DiscreteFinite((1.0, 2.0), (0.5, 0.5 + 1e-11))


@pytest.mark.parametrize(
    "law",
    [
        Gamma(2.0, 1.0),
        Exponential(2.0),
        LogNormal(0.1, 0.4),
        DiscreteFinite((1.0, 3.0, 7.0), (0.2, 0.5, 0.3)),
    ],
)
def test_sampler_matches_moments(law):
    """Large-sample mean and variance land near the exact values."""
    x = law.sample(_rng(7), size=200_000)
    assert x.min() > 0
    se = math.sqrt(law.var() / x.size)
    assert abs(float(x.mean()) - law.mean()) < 6 * se
    assert float(x.var()) == pytest.approx(law.var(), rel=0.05)


def test_degenerate_sampling_consumes_no_randomness():
    g1 = _rng(3)
    Degenerate(2.0).sample(g1)
    Degenerate(2.0).sample(g1, size=5)
    g2 = _rng(3)
    assert g1.random() == g2.random()


def test_discrete_sampler_hits_weights():
    law = DiscreteFinite((1.0, 3.0), (0.25, 0.75))
    x = law.sample(_rng(11), size=100_000)
    assert set(np.unique(x)) == {1.0, 3.0}
    frac = float(np.mean(x == 3.0))
    assert abs(frac - 0.75) < 6 * math.sqrt(0.25 * 0.75 / x.size)


def test_scalar_sampling_types():
    assert isinstance(sample_mixing(Gamma(2.0, 1.0), _rng(0)), float)
    assert isinstance(sample_claim(Exponential(1.0), _rng(0)), float)
    arr = sample_claim(Exponential(1.0), _rng(0), size=4)
    assert arr.shape == (4,)


def test_mean_helpers_reject_wrong_family():
    with pytest.raises(TypeError):
        mixing_mean(Exponential(1.0))
    with pytest.raises(TypeError):
        claim_mean("not a law")
    with pytest.raises(TypeError):
        sample_mixing(LogNormal(0.0, 1.0), _rng(0))
    assert LogNormal in CLAIM_LAW_TYPES


def test_pmf_gamma_closed_form_values():
    """Gamma(2,1) at t=1 is the two-trial negative binomial with p=1/2."""
    law = Gamma(2.0, 1.0)
    assert mixed_poisson_pmf(law, 1.0, 0) == pytest.approx(0.25, abs=1e-14)
    assert mixed_poisson_pmf(law, 1.0, 1) == pytest.approx(0.25, abs=1e-14)
    assert mixed_poisson_pmf(law, 1.0, 2) == pytest.approx(0.1875, abs=1e-14)
    assert mixed_poisson_pmf(law, 1.0, 3) == pytest.approx(0.125, abs=1e-14)


def test_pmf_gamma_matches_frozen_quadrature_oracle():
    for (a, b, t, n), oracle in QUAD_ORACLE.items():
        assert mixed_poisson_pmf(Gamma(a, b), t, n) == pytest.approx(oracle, abs=1e-12)


def test_pmf_degenerate_is_poisson():
    law = Degenerate(2.0)
    assert mixed_poisson_pmf(law, 1.0, 0) == pytest.approx(math.exp(-2.0), rel=1e-14)
    assert mixed_poisson_pmf(law, 1.0, 3) == pytest.approx(
        math.exp(-2.0) * 8.0 / 6.0, rel=1e-13
    )


def test_pmf_discrete_is_finite_mixture():
    law = DiscreteFinite((1.0, 3.0), (0.5, 0.5))
    expected = 0.5 * math.exp(-1.0) + 0.5 * math.exp(-3.0)
    assert mixed_poisson_pmf(law, 1.0, 0) == pytest.approx(expected, rel=1e-14)


def test_pmf_at_time_zero_is_point_mass_at_zero():
    for law in (Gamma(2.0, 1.0), Degenerate(3.0), DiscreteFinite((1.0,), (1.0,))):
        assert mixed_poisson_pmf(law, 0.0, 0) == 1.0
        assert mixed_poisson_pmf(law, 0.0, 5) == 0.0


def test_pmf_sums_to_one():
    law = Gamma(2.0, 1.0)
    total = sum(mixed_poisson_pmf(law, 2.0, n) for n in range(400))
    assert total == pytest.approx(1.0, abs=1e-12)


def test_pmf_deep_tail_stays_accurate():
    """Log-space evaluation keeps relative accuracy where naive sums underflow."""
    p = mixed_poisson_pmf(Degenerate(1.0), 1.0, 150)
    # Poisson(1) pmf at 150 = exp(-1)/150!
    from scipy.special import gammaln

    expected = math.exp(-1.0 - float(gammaln(151)))
    assert p == pytest.approx(expected, rel=1e-10)
    assert p > 0.0


@pytest.mark.parametrize("t,n", [(-1.0, 0), (math.inf, 0), (1.0, -1), (1.0, 1.5)])
def test_pmf_domain_errors(t, n):
    with pytest.raises(ValueError):
        mixed_poisson_pmf(Gamma(2.0, 1.0), t, n)


def test_pmf_rejects_claim_only_laws():
    with pytest.raises(TypeError):
        mixed_poisson_pmf(Exponential(1.0), 1.0, 0)


@pytest.mark.parametrize(
    "law",
    [
        Gamma(2.0, 1.0),
        Degenerate(0.5),
        DiscreteFinite((1.0, 3.0), (0.5, 0.5)),
    ],
)
def test_mixing_law_dict_round_trip(law):
    assert mixing_law_from_dict(law_to_dict(law)) == law


@pytest.mark.parametrize(
    "law",
    [
        Exponential(2.0),
        LogNormal(0.0, 0.5),
        Degenerate(1.0),
        DiscreteFinite((2.0, 5.0), (0.3, 0.7)),
    ],
)
def test_claim_law_dict_round_trip(law):
    assert claim_law_from_dict(law_to_dict(law)) == law


@pytest.mark.parametrize(
    "spec,fragment",
    [
        ({"type": "nope"}, "type must be one of"),
        ({"type": "gamma", "shape": 2.0}, "missing"),
        ({"type": "gamma", "shape": 2.0, "rate": 1.0, "zzz": 1}, "unknown keys"),
        ({"type": "exponential", "rate": 1.0}, "type must be one of"),
        ("gamma", "must be an object"),
    ],
)
def test_mixing_law_parse_errors(spec, fragment):
    with pytest.raises(ValueError, match=fragment):
        mixing_law_from_dict(spec)


def test_claim_law_parser_accepts_exponential_and_lognormal():
    assert claim_law_from_dict({"type": "exponential", "rate": 2.0}) == Exponential(2.0)
    assert claim_law_from_dict({"type": "lognormal", "mu": 0.0, "sigma": 0.5}) == LogNormal(0.0, 0.5)
