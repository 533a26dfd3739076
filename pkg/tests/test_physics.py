import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from pfreact import physics as ph
from pfreact.mesh import GridSpec


def test_default_parameters_are_admissible():
    p = ph.PhysParams()
    assert p.lipschitz == pytest.approx(3 * 1.2 ** 2 - 1)
    assert p.s_stab >= 0.5 * p.lipschitz


@pytest.mark.parametrize("kw", [
    dict(eps=0.0), dict(mobility=-1.0), dict(a3=3.0), dict(s_stab=1.0), dict(q_mode="exp"),
    dict(q0=0.0), dict(f_trunc=0.9), dict(d1_minus=0.0), dict(re=0.0),
])
def test_invalid_parameters(kw):
    with pytest.raises(ValueError):
        ph.PhysParams(**kw)


def test_lambda_affine():
    p = ph.PhysParams(lambda0=0.5)
    assert ph.lambda_of(2.0, p) == pytest.approx(2.0)
    assert ph.lambda_quotient(np.array([2.0]), np.array([0.0]), p)[0] == pytest.approx(0.5)
    assert ph.lambda_quotient(np.array([1.0]), np.array([1.0]), p)[0] == 0.5


@settings(max_examples=50, deadline=None)
@given(a=st.floats(-0.9, 5.0), b=st.floats(-0.9, 5.0), lam=st.floats(0.0, 2.0))
def test_lambda_quotient_is_divided_difference(a, b, lam):
    assume(abs(a - b) > 1e-3)
    p = ph.PhysParams(lambda0=lam)
    dd = (ph.lambda_of(a, p) - ph.lambda_of(b, p)) / (a - b)
    assert ph.lambda_quotient(np.array([a]), np.array([b]), p)[0] == pytest.approx(dd, rel=1e-9, abs=1e-12)


def test_truncated_potential_matches_inside_and_is_c2():
    phi = np.linspace(-1.2, 1.2, 25)
    f = ph.f_trunc(phi, 1.2)
    assert np.allclose(f.value, 0.25 * (phi ** 2 - 1) ** 2)
    assert np.allclose(f.d1, phi ** 3 - phi)
    r = 1.2
    for side in (1.0, -1.0):
        a = ph.f_trunc(np.array([side * (r - 1e-9), side * (r + 1e-9)]), r)
        assert abs(a.value[1] - a.value[0]) < 1e-8
        assert abs(a.d1[1] - a.d1[0]) < 1e-7
        assert abs(a.d2[1] - a.d2[0]) < 1e-7


@settings(max_examples=60, deadline=None)
@given(x=st.floats(-5, 5), y=st.floats(-5, 5))
def test_truncated_second_derivative_bounded(x, y):
    """F' is Lipschitz with constant L = 3 r^2 - 1 (needed for S >= L/2)."""
    p = ph.PhysParams()
    f = ph.f_trunc(np.array([x, y]), p.f_trunc)
    assert np.all(f.d2 <= p.lipschitz + 1e-12)
    assert abs(f.d1[0] - f.d1[1]) <= p.lipschitz * abs(x - y) + 1e-9


def test_proliferation_vanishes_in_bulk():
    p = ph.PhysParams(k_rate=2.0)
    phi = np.array([-1.5, -1.0, 0.0, 0.5, 1.0, 1.3])
    assert np.allclose(ph.proliferation(phi, p), [0.0, 0.0, 2.0, 2 * 0.5625, 0.0, 0.0])


def test_permeability_modes():
    c3 = np.array([0.0, 1.0, -0.7])
    assert np.allclose(ph.permeability(c3, ph.PhysParams(q0=3.0)), 3.0)
    aff = ph.PhysParams(q_mode="affine")
    assert np.allclose(ph.permeability(c3, aff), [1.0, 3.0, aff.q_min])


def test_d1_limits():
    p = ph.PhysParams(d1_plus=1.0, d1_minus=0.5, eps=0.04)
    q = np.ones(3)
    d = ph.d1_of(np.array([1.0, -1.0, 0.0]), q, p)
    assert d[0] == pytest.approx(1.0)
    assert d[1] == pytest.approx(0.5)
    # at the interface centre the membrane resistance 1/(q eps) dominates
    assert d[2] == pytest.approx(1.0 / (1.0 / 0.04 + 1.0 + 0.5))
    with pytest.raises(ValueError):
        ph.d1_of(np.zeros(1), np.zeros(1), p)


def test_log_shifted_domain():
    assert ph.log_shifted(np.array([0.0]))[0] == 0.0
    assert ph.log_shifted(np.array([math.e - 1]))[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        ph.log_shifted(np.array([-1.0]))


def test_entropy_density_minimum_at_zero():
    c = np.linspace(-0.9, 3.0, 40)
    e = ph.entropy_density(c)
    assert np.all(e >= -1.0 - 1e-15)
    assert ph.entropy_density(0.0) == pytest.approx(-1.0)


def test_reaction_sources_conserve_mass():
    p = ph.PhysParams()
    r = np.array([0.3, -1.2])
    s1, s2, s3 = ph.reaction_sources(r, p)
    assert np.allclose(s1 + s2 + s3, 0.0)


def test_affinity_zero_at_chemical_equilibrium():
    p = ph.PhysParams()
    mu1, mu2 = np.array([0.4]), np.array([0.2])
    mu3 = (mu1 + mu2) / 2.0
    assert ph.affinity(mu1, mu2, mu3, p)[0] == pytest.approx(0.0)


def test_mu_phi_uniform_bulk():
    """Uniform phi = 1 with uniform species: only the penalty term survives."""
    g = GridSpec(6, 6)
    p = ph.PhysParams()
    one = np.ones((6, 6))
    c = 0.3 * one
    mu = ph.mu_phi_scheme(one, one, c, c, c, c, p, g)
    assert np.allclose(mu, 2.0 * p.m_pen * (0.3 + 0.3 + 2.0))


def test_mu_phi_is_energy_derivative_at_equal_levels():
    """At phi_new = phi_old the scheme potential is the derivative of the (untruncated inside r) free energy."""
    g = GridSpec(8, 8)
    p = ph.PhysParams()
    rng = np.random.default_rng(3)
    phi = 0.5 * rng.standard_normal((8, 8))
    c2, c3 = 0.2 * rng.random((2, 8, 8))

    def energy(f):
        lam = ph.lambda_of(c3, p)
        mix = lam * ph.mixing_density(f, p, g)
        s = c2 + c3 + 2.0
        return g.cell_area * np.sum(mix + p.m_pen * f ** 2 * s - p.n_adh * ph.double_well(f) * s)

    mu = ph.mu_phi_scheme(phi, phi, c2, c3, c2, c3, p, g)
    v = rng.standard_normal((8, 8))
    h = 1e-6
    dE = (energy(phi + h * v) - energy(phi - h * v)) / (2 * h)
    assert dE == pytest.approx(g.cell_area * np.sum(mu * v), rel=1e-6)


def test_mu3_uses_mixing_density_quotient():
    g = GridSpec(6, 6)
    p = ph.PhysParams(lambda0=0.5, m_pen=0.0, n_adh=0.0)
    phi = np.zeros((6, 6))
    c3n, c3o = np.full((6, 6), 0.4), np.full((6, 6), 0.1)
    mu3 = ph.mu3_scheme(c3n, c3o, phi, phi, p, g)
    assert np.allclose(mu3, 0.5 * 0.25 + np.log1p(0.4))
