import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import psi_quadrature
from fluctuo.errors import ConfigurationError, DomainError
from fluctuo.nonlinearity import (EntropyFunction, NonlinearitySpec,
                                  check_assumptions)


@pytest.fixture
def pm2():
    return NonlinearitySpec.power_law(2.0, gamma=1.0)


def test_power_law_values(pm2):
    assert pm2.phi(np.float64(3.0)) == pytest.approx(9.0)
    assert pm2.phi(np.float64(0.0)) == 0.0
    m1 = NonlinearitySpec.power_law(1.0, gamma=1.0)
    assert m1.sigma(np.float64(4.0)) == pytest.approx(2.0)
    assert m1.phi_prime(np.float64(7.0)) == pytest.approx(1.0)


def test_negative_input_rejected(pm2):
    with pytest.raises(DomainError):
        pm2.phi(np.array([1.0, -0.5]))


def test_phi_monotone_on_samples(pm2):
    x = np.linspace(0, 5, 200)
    assert np.all(np.diff(pm2.phi(x)) > 0)


def test_phi_sqrt_squares_to_phi(pm2):
    x = np.linspace(0, 7, 100)
    assert np.allclose(pm2.phi_sqrt(x) ** 2, pm2.phi(x), rtol=1e-14, atol=1e-14)


def test_nu_default_scaling():
    spec = NonlinearitySpec.power_law(2.0, gamma=1.0, c_nu=0.5)
    assert spec.nu(np.float64(2.0)) == pytest.approx(0.5 * 4.0)


def test_custom_table_matches_power_law():
    xi = np.linspace(0, 4, 257)
    spec = NonlinearitySpec.from_table(xi, xi**2, gamma=1.0)
    x = np.linspace(0.1, 3.9, 50)
    # monotone-cubic interpolation is 3rd-order, not exact
    assert np.allclose(spec.phi(x), x**2, rtol=2e-3)
    assert np.allclose(spec.phi_prime(x), 2 * x, rtol=2e-2)
    with pytest.raises(DomainError):
        spec.phi(np.float64(5.0))


def test_custom_table_rejects_decreasing():
    xi = np.linspace(0, 4, 32)
    phi = xi.copy()
    phi[10] = phi[9] - 0.1
    with pytest.raises(ConfigurationError):
        NonlinearitySpec.from_table(xi, phi, gamma=1.0)


def test_custom_table_csv_roundtrip(tmp_path):
    path = tmp_path / "phi.csv"
    xi = np.linspace(0, 3, 61)
    with open(path, "w") as fh:
        fh.write("xi,phi\n")
        for a, b in zip(xi, xi**1.5):
            fh.write(f"{float(a)!r},{float(b)!r}\n")
    spec = NonlinearitySpec.from_csv(path, gamma=1.0)
    assert spec.phi(np.float64(2.0)) == pytest.approx(2.0**1.5, rel=1e-6)


# -- entropy -------------------------------------------------------------------


def test_psi_vanishes_at_gamma():
    ent = EntropyFunction(NonlinearitySpec.power_law(1.0, gamma=1.0))
    assert ent.psi(np.float64(1.0)) == 0.0


def test_psi_closed_form_at_e():
    # oracle 1: closed form 2 (x log x - x + 1) at x = e equals 2
    # oracle 2: quadrature of psi'(x) = 2 log x over [1, e]
    ent = EntropyFunction(NonlinearitySpec.power_law(2.0, gamma=1.0))
    x = np.e
    by_quad = psi_quadrature(lambda u: u**2, 1.0, x)
    assert by_quad == pytest.approx(2.0, rel=1e-10)
    assert float(ent.psi(np.float64(x))) == pytest.approx(2.0, rel=1e-12)


def test_psi_zero_limit():
    ent = EntropyFunction(NonlinearitySpec.power_law(1.0, gamma=1.0))
    assert float(ent.psi(np.float64(0.0))) == pytest.approx(1.0)


def test_psi_against_quadrature_m3():
    spec = NonlinearitySpec.power_law(3.0, gamma=0.7)
    ent = EntropyFunction(spec)
    for x in (0.2, 0.9, 2.4):
        expected = psi_quadrature(lambda u: u**3, 0.7, x)
        assert float(ent.psi(np.float64(x))) == pytest.approx(expected, rel=1e-9)


def test_psi_delta_regularized_quadrature():
    spec = NonlinearitySpec.power_law(2.0, gamma=1.0)
    ent = EntropyFunction(spec, delta=0.1)
    for x in (0.0, 0.5, 2.0):
        expected = psi_quadrature(lambda u: u**2, 1.0, x, delta=0.1)
        assert float(ent.psi(np.float64(x))) == pytest.approx(expected, rel=1e-8, abs=1e-12)
    # normalization at gamma survives regularization
    assert float(ent.psi(np.float64(1.0))) == pytest.approx(0.0, abs=1e-12)


def test_psi_interpolated_path_matches_quadrature():
    xi = np.linspace(0, 6, 513)
    spec = NonlinearitySpec.from_table(xi, xi**2, gamma=1.0)
    ent = EntropyFunction(spec)
    xs = np.linspace(0.05, 4.0, 64)  # array-sized call takes the table path
    vals = ent.psi(xs)
    exact = 2.0 * (xs * np.log(xs) - (xs - 1.0))
    assert np.allclose(vals, exact, atol=5e-5)


@given(st.floats(0.0, 8.0), st.floats(0.0, 8.0), st.floats(0.0, 1.0))
@settings(max_examples=200, deadline=None)
def test_psi_convex_nonnegative(x1, x2, lam):
    ent = EntropyFunction(NonlinearitySpec.power_law(2.0, gamma=1.3))
    mid = lam * x1 + (1 - lam) * x2
    p1, p2 = float(ent.psi(np.float64(x1))), float(ent.psi(np.float64(x2)))
    pm = float(ent.psi(np.float64(mid)))
    assert p1 >= 0 and p2 >= 0
    assert pm <= lam * p1 + (1 - lam) * p2 + 1e-12


@given(st.floats(0.2, 6.0))
@settings(max_examples=100, deadline=None)
def test_psi_prime_matches_finite_differences(x):
    ent = EntropyFunction(NonlinearitySpec.power_law(2.0, gamma=1.0))
    eps = 1e-6 * max(1.0, x)
    fd = (float(ent.psi(np.float64(x + eps))) - float(ent.psi(np.float64(x - eps)))) / (2 * eps)
    exact = float(ent.psi_prime(np.float64(x)))
    assert fd == pytest.approx(exact, rel=1e-6, abs=1e-8)


# -- assumption checks ----------------------------------------------------------


def grid_01():
    return np.concatenate([np.geomspace(1e-6, 0.1, 40), np.linspace(0.11, 8.0, 160)])


def test_check_assumptions_power_law_m2():
    report = check_assumptions(NonlinearitySpec.power_law(2.0, gamma=1.0), grid_01())
    c = report["phi_over_xi_phi_prime"]
    assert c.constant == pytest.approx(0.5, rel=1e-12)
    assert c.passed
    assert report.passed


def test_check_assumptions_power_law_m1_sigma_ratio():
    report = check_assumptions(NonlinearitySpec.power_law(1.0, gamma=1.0), grid_01())
    c = report["sigma_sq_over_xi_near_zero"]
    assert c.constant == pytest.approx(1.0, rel=1e-12)
    assert c.passed


def test_check_assumptions_flat_table_fails():
    xi = np.linspace(0, 4, 65)
    phi = xi.copy()
    phi[32:40] = phi[32]  # flat stretch: Phi' = 0 inside
    spec = NonlinearitySpec.from_table(xi, phi, gamma=1.0)
    report = check_assumptions(spec, np.linspace(0.05, 3.9, 120))
    assert not report["phi_strictly_increasing"].passed
    assert not report.passed


def test_check_assumptions_grid_validation():
    spec = NonlinearitySpec.power_law(2.0, gamma=1.0)
    with pytest.raises(ConfigurationError):
        check_assumptions(spec, np.array([0.0, 1.0, 2.0]))


def test_report_dict_shape():
    report = check_assumptions(NonlinearitySpec.power_law(1.5, gamma=1.0), grid_01())
    d = report.as_dict()
    assert {"threshold", "passed", "checks"} <= set(d)
    assert all({"name", "constant", "passed"} <= set(c) for c in d["checks"])
