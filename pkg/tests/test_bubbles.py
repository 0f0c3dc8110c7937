"""Bubbles, Green's functions, boundary integrals, tensor splitting."""

import math

import numpy as np
import pytest

from qflowlab.bubbles import (Bubble, ExactSphereGreens, SphereChartGreens,
                              SyntheticChartGreens, assemble_test_bubble,
                              boundary_integrals, bubble_constant,
                              bubble_constant_tilde, bubble_eval,
                              bubble_on_sphere, bubble_volume_integral,
                              corrector_kernel_residual, corrector_w,
                              cutoff_chi, cutoff_chi_derivs,
                              greens_sphere_radial, mci_integral,
                              mci_telescoping, ps_quotient, q_mass,
                              split_tensor, weyl_poly_tensor, y4_constant)
from qflowlab.charts import sphere_area
from qflowlab.flow import zonal_operator


# -- constants and the standard bubble ---------------------------------------

def test_bubble_constants_closed_forms():
    # c(n) = (n-4)(n-2)n(n+2), ct(n) = (n+4)/(n-4) c(n)
    assert bubble_constant(5) == pytest.approx(1.0 * 3 * 5 * 7)
    assert bubble_constant(6) == pytest.approx(2.0 * 4 * 6 * 8)
    assert bubble_constant_tilde(5) == pytest.approx(9.0 * 105)


def test_bubble_volume_integral_closed_form():
    # int u_eps^{2n/(n-4)} = 2^{-n} omega_n, independent of eps
    for n in (5, 6, 8):
        omega_n = sphere_area(n)
        expect = 2.0 ** -n * omega_n
        assert bubble_volume_integral(n) == pytest.approx(expect, rel=1e-10)
        assert bubble_volume_integral(n, eps=0.3) == pytest.approx(
            expect, rel=1e-10)


def test_y4_closed_form():
    # Y4(n) = c(n) (2^{-n} omega_n)^{4/n}; at n=5 this is (105/16) pi^{12/5}
    assert y4_constant(5) == pytest.approx(
        105.0 / 16.0 * math.pi ** 2.4, rel=1e-12)
    for n in (5, 6, 8):
        expect = bubble_constant(n) * (2.0 ** -n * sphere_area(n)) ** (4.0 / n)
        assert y4_constant(n) == pytest.approx(expect, rel=1e-12)


def test_bubble_validation():
    with pytest.raises(ValueError):
        Bubble(4, 1.0)
    with pytest.raises(ValueError):
        Bubble(5, -1.0)


def test_bubble_radial_derivative_consistent():
    b = Bubble(5, 0.7)
    r = np.linspace(0.1, 3.0, 50)
    h = 1e-6
    fd = (b.radial(r + h) - b.radial(r - h)) / (2 * h)
    assert np.max(np.abs(fd - b.radial_d1(r))) < 1e-8


def test_bubble_rational_matches_radial():
    b = Bubble(6, 1.0)
    f = b.rational()
    pts = np.random.default_rng(0).normal(size=(20, 6))
    r = np.sqrt(np.sum(pts ** 2, axis=1))
    assert np.max(np.abs(f.values(pts) - b.radial(r))) < 1e-12


def test_bubble_pde_residual_coarse():
    rep = bubble_eval(Bubble(5, 1.0), h=0.02, rmax=6.0)
    assert rep["residual"] < 1e-5


def test_corrector_kernels_quick():
    b = Bubble(5, 1.0)
    assert corrector_kernel_residual(b, "dilation", h=5e-3) < 1e-5
    with pytest.raises(ValueError):
        corrector_kernel_residual(b, "rotation")


# -- cutoff -------------------------------------------------------------------

def test_cutoff_plateaus_and_smoothness():
    s = np.array([0.0, 1.0, 4.0 / 3.0, 1.5, 5.0 / 3.0, 2.0])
    chi = cutoff_chi(s)
    assert chi[0] == 1.0 and chi[1] == 1.0 and chi[2] == 1.0
    assert 0.0 < chi[3] < 1.0
    assert chi[4] == 0.0 and chi[5] == 0.0
    # C^2 matching at the junctions
    ders = cutoff_chi_derivs(np.array([4.0 / 3.0, 5.0 / 3.0]), order=2)
    for k in (1, 2):
        assert np.max(np.abs(ders[k])) < 1e-12


def test_cutoff_derivatives_match_fd():
    s = np.linspace(1.35, 1.65, 7)
    ders = cutoff_chi_derivs(s, order=2)
    h = 1e-5
    fd1 = (cutoff_chi(s + h) - cutoff_chi(s - h)) / (2 * h)
    assert np.max(np.abs(fd1 - ders[1])) < 1e-8


# -- polynomial Weyl-type tensors and splitting -------------------------------

@pytest.mark.parametrize("degree", [2, 3])
def test_weyl_poly_tensor_constraints(degree):
    H = weyl_poly_tensor(5, degree=degree, seed=0)
    rng = np.random.default_rng(7)
    pts = rng.normal(size=(40, 5))
    vals = H.value(pts)
    # trace-free and tangential (H_ij x_j = 0)
    tr = np.einsum("pii->p", vals)
    tang = np.einsum("pij,pj->pi", vals, pts)
    scale = np.max(np.abs(vals))
    assert np.max(np.abs(tr)) < 1e-12 * scale
    assert np.max(np.abs(tang)) < 1e-12 * scale


def test_even_degree_weyl_tensor_is_divergence_free():
    H = weyl_poly_tensor(5, degree=2, seed=0)
    assert H.divergence_coeffs() == {}
    pts = np.random.default_rng(1).normal(size=(10, 5))
    assert np.max(np.abs(H.divergence(pts))) == 0.0


def test_odd_degree_weyl_tensor_has_divergence():
    H = weyl_poly_tensor(5, degree=3, seed=0)
    assert len(H.divergence_coeffs()) > 0
    pts = np.random.default_rng(1).normal(size=(10, 5))
    assert np.max(np.abs(H.divergence(pts))) > 0.0


def test_split_divergence_free_short_circuit():
    H = weyl_poly_tensor(5, degree=2, seed=0)
    split = split_tensor(H, delta=0.2, eps=0.05)
    assert split.residuals["ls_residual"] == 0.0
    pts = np.random.default_rng(2).normal(size=(10, 5))
    assert max(np.max(np.abs(x.eval(pts))) for x in split.X) == 0.0


def test_split_generic_tensor_small_residual():
    H = weyl_poly_tensor(5, degree=3, seed=0)
    split = split_tensor(H, delta=0.2, eps=0.05, nr=4, deg=2)
    rep = split.residuals
    assert rep["ls_residual"] < 1e-3
    assert rep["trace_T"] < 1e-12
    assert rep["growth_ratio"] < 1.0


def test_corrector_from_split():
    H = weyl_poly_tensor(5, degree=3, seed=0)
    split = split_tensor(H, delta=0.2, eps=0.05, nr=4, deg=2)
    w, rep = corrector_w(split, Bubble(5, 0.05), nr=4, deg=2)
    assert rep["residual"] < 1e-8


# -- Green's functions ---------------------------------------------------------

@pytest.fixture(scope="module")
def greens5():
    return greens_sphere_radial(5)


def test_exact_sphere_greens_derivatives():
    ex = ExactSphereGreens(5)
    d = np.linspace(0.3, 2.8, 9)
    h = 1e-5
    ders = ex.derivs(d, order=2)
    fd1 = (ex.value(d + h) - ex.value(d - h)) / (2 * h)
    fd2 = (ex.value(d + h) - 2 * ex.value(d) + ex.value(d - h)) / h ** 2
    assert np.max(np.abs(fd1 - ders[1]) / np.abs(ders[1])) < 1e-8
    assert np.max(np.abs(fd2 - ders[2]) / np.abs(ders[2])) < 1e-4


def test_greens_matches_exact_on_s5(greens5):
    ex = ExactSphereGreens(5)
    d = np.linspace(0.1, 3.0, 300)
    rel = np.max(np.abs(greens5.value(d) - ex.value(d)) / ex.value(d))
    assert rel < 1e-6
    assert abs(greens5.A_p) < 1e-6
    assert greens5.ladder_residual < 1e-5


@pytest.mark.parametrize("n,a_exact", [(6, 1.0 / 12.0), (8, 11.0 / 720.0)])
def test_greens_even_dimension_constant(n, a_exact):
    # in even dimensions the pole expansion is resonant and the smooth
    # remainder carries the constant Taylor coefficient of (2 sin(d/2))^{4-n}
    g = greens_sphere_radial(n)
    assert abs(g.A_p - a_exact) < 1e-5 * max(a_exact, 1.0)


def test_sphere_chart_greens_is_flat_profile(greens5):
    # exact sphere data transplants to U(rho) = rho^{4-n} exactly
    cg = SphereChartGreens(ExactSphereGreens(5), 5)
    rho = np.array([0.5, 1.0, 2.0, 5.0])
    assert np.max(np.abs(cg.value(rho) - rho ** -1.0)) < 1e-12


def test_mci_vanishes_for_pure_singularity():
    cg = SyntheticChartGreens(5, 0.0)
    assert abs(mci_integral(cg, 5, 0.2)) < 1e-10


def test_mci_synthetic_closed_form():
    # U = rho^{4-n} + A gives I = 2 (n-4)(n-2) omega_4 A
    A = 0.3
    cg = SyntheticChartGreens(5, A)
    expect = 2.0 * (5 - 4) * (5 - 2) * sphere_area(4) * A
    assert mci_integral(cg, 5, 0.2) == pytest.approx(expect, rel=1e-10)


def test_mass_to_mci_ratio_synthetic():
    out = boundary_integrals(SyntheticChartGreens(5, 0.3), 5, 0.2)
    assert out["ratio"] == pytest.approx(out["ratio_expected"], rel=1e-3)


def test_mci_telescoping_synthetic():
    out = mci_telescoping(SyntheticChartGreens(5, 0.3), 5, 0.2, 0.1)
    assert out["relative"] < 1e-8


def test_q_mass_exact_chart_is_zero():
    cg = SphereChartGreens(ExactSphereGreens(5), 5)
    out = q_mass(cg, 5)
    assert abs(out["mass"]) < 1e-9


# -- assembled test bubbles and quotients --------------------------------------

def test_assemble_validates_parameters(greens5):
    cg = SphereChartGreens(greens5, 5)
    with pytest.raises(ValueError):
        assemble_test_bubble(5, 0.2, 0.2, cg)   # needs 2 eps <= delta
    with pytest.raises(ValueError):
        assemble_test_bubble(5, 0.05, 0.5, cg)  # delta too large


def test_test_bubble_matches_bubble_in_core(greens5):
    cg = SphereChartGreens(greens5, 5)
    tb = assemble_test_bubble(5, 0.02, 0.2, cg)
    r = np.linspace(0.01, 0.1, 20)
    b = Bubble(5, 0.02)
    rel = np.abs(tb.eval_radial(r) - b.radial(r)) / b.radial(r)
    assert np.max(rel) < 1e-10


def test_test_bubble_gluing_deviation_shrinks(greens5):
    cg = SphereChartGreens(greens5, 5)
    devs = []
    for eps in (0.04, 0.02, 0.01):
        tb = assemble_test_bubble(5, eps, 0.2, cg)
        r = np.linspace(1e-3, 0.4 / eps, 400) * eps
        b = Bubble(5, eps)
        dev = np.max(np.abs(tb.eval_radial(r / eps * eps) - b.radial(r))
                     / np.max(b.radial(r)))
        devs.append(dev)
    assert devs[0] > devs[1] > devs[2]
    assert devs[2] < 1e-3


def test_ps_quotient_constant_is_y4():
    op = zonal_operator(5, 32)
    out = ps_quotient(op, np.ones(op.K))
    assert out["quotient"] == pytest.approx(y4_constant(5), rel=1e-12)


def test_bubble_on_sphere_quotient_invariant():
    op = zonal_operator(5, 128)
    for eps in (0.5, 0.1):
        v = bubble_on_sphere(5, eps)(op.theta)
        out = ps_quotient(op, v)
        assert out["quotient"] == pytest.approx(y4_constant(5), rel=1e-7)
