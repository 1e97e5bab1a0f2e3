import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from statecal import linkfun
from statecal.linkfun import LinkDomainError, LinkKind

LINKS = list(LinkKind)


def probit_oracle(u):
    mpmath.mp.dps = 40
    return float(mpmath.sqrt(2) * mpmath.erfinv(2 * mpmath.mpf(u) - 1))


def test_link_kinds_are_exactly_four():
    assert {k.value for k in LinkKind} == {"logit", "probit", "cloglog", "identity"}
    with pytest.raises(ValueError):
        LinkKind("loglog")


def test_apply_examples():
    assert linkfun.apply("logit", 0.5) == 0.0
    assert linkfun.apply("identity", 0.37) == 0.37
    # frozen from a 40-digit inverse-normal evaluation
    assert linkfun.apply("probit", 0.975) == pytest.approx(1.959963984540054, abs=1e-12)


def test_invert_examples():
    assert linkfun.invert("cloglog", 0.0) == pytest.approx(np.exp(-1.0), rel=1e-15)
    assert linkfun.invert("logit", 0.0) == 0.5
    assert linkfun.invert("probit", 1.959963984540054) == pytest.approx(0.975, abs=1e-12)


def test_center():
    assert linkfun.center("logit") == 0.0
    assert linkfun.center("probit") == 0.0
    assert linkfun.center("identity") == 0.5
    assert linkfun.center("cloglog") == pytest.approx(-0.36651292058166435, abs=1e-14)
    for k in LINKS:
        assert linkfun.center(k) == pytest.approx(linkfun.apply(k, 0.5), abs=1e-15)


@pytest.mark.parametrize("link", LINKS)
def test_round_trip(link):
    u = np.random.default_rng(0).uniform(0.001, 0.999, 1000)
    assert np.max(np.abs(linkfun.invert(link, linkfun.apply(link, u)) - u)) < 1e-12


@pytest.mark.parametrize("link", LINKS)
def test_apply_invert_relative(link):
    w = linkfun.apply(link, np.linspace(0.01, 0.99, 99))
    back = linkfun.apply(link, linkfun.invert(link, w))
    np.testing.assert_allclose(back, w, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("link", LINKS)
def test_monotone(link):
    u = np.linspace(0.001, 0.999, 500)
    d = np.diff(linkfun.apply(link, u))
    if link is LinkKind.CLOGLOG:
        assert np.all(d < 0)
    else:
        assert np.all(d > 0)


def test_probit_accuracy_against_oracle():
    u = np.round(np.arange(1, 100) * 0.01, 2)
    got = linkfun.apply("probit", u)
    want = np.array([probit_oracle(v) for v in u])
    assert np.max(np.abs(got - want)) < 1e-9


def test_probit_tails():
    for u in (1e-10, 1 - 1e-10):
        assert linkfun.apply("probit", u) == pytest.approx(probit_oracle(u), abs=1e-9)


@pytest.mark.parametrize("link", ["logit", "probit", "cloglog"])
@pytest.mark.parametrize("u", [0.0, 1.0, -0.1, 1.5, np.nan])
def test_open_interval_domain(link, u):
    with pytest.raises(LinkDomainError):
        linkfun.apply(link, u)


def test_identity_domain():
    assert linkfun.apply("identity", 0.0) == 0.0
    assert linkfun.apply("identity", 1.0) == 1.0
    with pytest.raises(LinkDomainError):
        linkfun.apply("identity", 1.01)
    with pytest.raises(LinkDomainError):
        linkfun.invert("identity", -0.2)


def test_invert_rejects_nonfinite():
    with pytest.raises(LinkDomainError):
        linkfun.invert("logit", np.inf)


def test_unknown_link():
    with pytest.raises(ValueError, match="unknown link"):
        linkfun.apply("tanh", 0.3)


def test_array_and_scalar_outputs():
    assert isinstance(linkfun.apply("logit", 0.3), float)
    out = linkfun.apply("logit", [0.3, 0.4])
    assert isinstance(out, np.ndarray) and out.shape == (2,)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(["logit", "probit", "cloglog"]), st.floats(-6.0, 2.5))
def test_log_abs_dinvert_matches_finite_difference(link, w):
    h = 1e-6
    fd = (linkfun.invert(link, w + h) - linkfun.invert(link, w - h)) / (2 * h)
    assert linkfun.log_abs_dinvert(link, w) == pytest.approx(np.log(abs(fd)), abs=1e-5)


def test_log_abs_dinvert_identity():
    assert linkfun.log_abs_dinvert("identity", 0.4) == 0.0
    assert linkfun.log_abs_dinvert("identity", 1.4) == -np.inf


def test_logit_jacobian_stable_far_out():
    assert np.isfinite(linkfun.log_abs_dinvert("logit", 800.0))
    assert linkfun.log_abs_dinvert("logit", 800.0) == pytest.approx(-800.0)
