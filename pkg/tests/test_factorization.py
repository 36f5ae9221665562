from fractions import Fraction

import numpy as np
import pytest

from mmrisk import (
    DriftError,
    ErlangMixture,
    ImproperRationalError,
    MultiplicityError,
    StateJumpLaw,
    UnsupportedError,
    dual_spec,
    make_model,
)
from mmrisk import _poly as P
from mmrisk.factorization import (
    PolynomialMatrix,
    RationalMatrixPF,
    build_G_rational,
    factorize,
    find_poles,
    gminus_at_zero,
    infimum_distribution,
    ladder_exit_matrix,
    partial_fractions,
    project_minus,
    ruin_probability,
)
from mmrisk.montecarlo import SimConfig, estimate_ruin
from mmrisk.transforms import cumulant_domain, cumulant_matrix
from conftest import SHARED_PATHS, within_se

REF_ROOTS = [-3.25672, -1.59682, -0.794382, -0.133485, 0.30224]
REF_PSI = {0: [-0.04, 0.001, 0.079, 0.75], 1: [-0.01, -0.016, 0.004, 0.85]}
REF_RATES = [3.26, 1.6, 0.79, 0.13]


def scalar_model(lp=1.0, beta=2.0, lm=2.0, c=1.0):
    return make_model([[0.0]], [StateJumpLaw(lp, ErlangMixture.exponential(beta), lm, c)])


def pm(num, den):
    return PolynomialMatrix([[num]], den, True)


# build_G_rational ---------------------------------------------------------------------


def test_example_denominator_exact(example):
    G = build_G_rational(dual_spec(example))
    assert G.exact
    assert all(isinstance(x, Fraction) and x.denominator == 1 for x in G.den)
    assert [int(x) for x in G.den] == [-8, -51, 114, 387, 263, 48]


def test_example_numerators(example):
    G = build_G_rational(dual_spec(example))
    r2 = P.power([2, 1], 2)
    r1 = P.power([1, 1], 2)
    g11 = P.scale(P.mul(r2, [-1, 0, 10, 6]), 3)
    g12 = P.scale(P.mul(P.mul(r1, r2), [-1, 3]), 2)
    g21 = P.scale(P.mul(P.mul(r1, r2), [-1, 2]), 3)
    g22 = P.scale(P.mul(r1, [-4, 16, 34, 9]), 2)
    assert G.num == [[g11, g12], [g21, g22]]


def test_G_matches_definition(example, random_models):
    rng = np.random.default_rng(3)
    for m in [example, *random_models]:
        d = dual_spec(m)
        G = build_G_rational(d)
        dom = cumulant_domain(d)
        for r in rng.uniform(0.9 * dom.r_lo, 0.9 * dom.r_hi, 4):
            if abs(r) < 1e-3:
                continue
            ref = r * np.linalg.inv(cumulant_matrix(d, r)) @ np.linalg.inv(np.diag(m.c) - r * np.eye(m.m))
            assert np.allclose(G(r), ref, rtol=1e-8, atol=1e-10)


def test_scalar_reduction():
    m = scalar_model(1.0, 2.0, 2.0, 1.0)
    G = build_G_rational(dual_spec(m))
    for r in [-0.7, -0.2, 0.4, 0.8]:
        k = cumulant_matrix(dual_spec(m), r)[0, 0]
        assert G(r)[0, 0] == pytest.approx(r / (k * (1.0 - r)), rel=1e-12)


def test_numerator_degree_bounded(random_models):
    for m in random_models:
        dn, dd = build_G_rational(dual_spec(m)).degrees()
        assert dn <= dd


# find_poles -----------------------------------------------------------------------------


def test_example_roots(example):
    poles = find_poles(build_G_rational(dual_spec(example)).den)
    assert not poles.has_complex
    assert np.allclose(poles.real_roots, REF_ROOTS, atol=1e-4)


def test_factored_input():
    poles = find_poles([Fraction(-2), Fraction(1), Fraction(1)])
    assert np.allclose(poles.real_roots, [-2, 1], atol=1e-14)


def test_random_degree_eight():
    rng = np.random.default_rng(8)
    roots = np.sort(rng.uniform(-5, 5, 8))
    coeffs = np.poly(roots)[::-1].tolist()
    found = find_poles(coeffs).real_roots
    assert np.allclose(found, roots, atol=1e-9)


def test_complex_roots_paired():
    # (r^2 + 2r + 5)(r - 1) has roots -1 +- 2i and 1
    D = P.mul([5, 2, 1], [-1, 1])
    poles = find_poles([Fraction(x) for x in D])
    assert poles.has_complex
    cplx = poles.roots[poles.roots.imag != 0]
    assert np.allclose(sorted(cplx.imag), [-2, 2]) and np.allclose(cplx.real, -1)


def test_repeated_root_rejected():
    with pytest.raises(MultiplicityError):
        find_poles([Fraction(x) for x in P.mul(P.power([-1, 1], 2), [2, 1])])
    with pytest.raises(MultiplicityError):
        find_poles(P.mul(P.power([-1.0, 1.0], 2), [2.0, 1.0]))


def test_root_residuals(example, random_models):
    for m in [example, *random_models]:
        D = build_G_rational(dual_spec(m)).den
        Df = [float(x) for x in D]
        scale = max(abs(x) for x in Df)
        for z in find_poles(D).roots:
            assert abs(P.evaluate(Df, z)) <= 1e-9 * scale


# partial fractions ---------------------------------------------------------------------------


def reassemble(pf: RationalMatrixPF, r):
    out = pf.const.astype(complex).copy()
    for p, R in zip(pf.poles, pf.residues):
        out = out + R / (r - p)
    return out


def test_reassembly(example, random_models):
    rng = np.random.default_rng(5)
    for m in [example, *random_models]:
        f = factorize(m)
        for r in rng.uniform(-4, 4, 20):
            ref = f.G(r)
            got = reassemble(f.pf, r)
            assert np.allclose(got.imag, 0, atol=1e-8 * (1 + np.abs(ref).max()))
            assert np.allclose(got.real, ref, rtol=1e-8, atol=1e-10 * (1 + np.abs(ref).max()))


def test_textbook_partial_fraction():
    G = pm([Fraction(1)], [Fraction(-1), Fraction(0), Fraction(1)])
    pf = partial_fractions(G, find_poles(G.den))
    got = dict(zip(np.round(pf.poles, 12), pf.residues[:, 0, 0]))
    assert got[-1.0] == pytest.approx(-0.5) and got[1.0] == pytest.approx(0.5)
    assert pf.const[0, 0] == 0


def test_complex_partial_fraction():
    # r / (r^2 + 1) = 1/2 (1/(r - i) + 1/(r + i))
    G = pm([Fraction(0), Fraction(1)], [Fraction(1), Fraction(0), Fraction(1)])
    pf = partial_fractions(G, find_poles(G.den))
    assert np.allclose(pf.residues[:, 0, 0], [0.5, 0.5])
    for r in [0.3, -2.0, 5.0]:
        assert reassemble(pf, r)[0, 0] == pytest.approx(r / (r * r + 1))


def test_improper_rational_rejected():
    G = pm([Fraction(0), Fraction(0), Fraction(1)], [Fraction(1), Fraction(1)])
    with pytest.raises(ImproperRationalError):
        partial_fractions(G, np.array([-1.0]))


# projection --------------------------------------------------------------------------------


def test_example_projection_keeps_negative_poles(example):
    f = factorize(example)
    assert np.allclose(np.sort(f.gminus.poles), REF_ROOTS[:4], atol=1e-4)
    assert np.all(f.gminus.const == 0)


def test_projection_of_positive_poles_is_zero():
    pf = RationalMatrixPF(np.ones((1, 1)), np.array([1.0, 2.0]), np.ones((2, 1, 1)))
    gm = project_minus(pf)
    assert len(gm.poles) == 0 and np.all(gm.const == 0)
    assert np.all(gminus_at_zero(gm) == 0)


def test_projection_idempotent(example, random_models):
    for m in [example, *random_models]:
        gm = factorize(m).gminus
        again = project_minus(gm)
        assert np.array_equal(again.poles, gm.poles)
        assert np.array_equal(again.residues, gm.residues)
        assert np.array_equal(again.const, gm.const)


# ladder exit matrix ----------------------------------------------------------------------------


def test_example_R_plus(example):
    assert np.allclose(factorize(example).R_plus, [[0.22, 0.22], [0.17, 0.17]], atol=0.005)


def test_R_plus_columns_follow_pi(example, random_models):
    for m in [example, *random_models]:
        R = factorize(m).R_plus
        assert np.allclose(R, np.outer(R[:, 0] / m.pi[0], m.pi), rtol=1e-10, atol=1e-14)


def test_scalar_R_plus_matches_simulated_ladder_probability():
    # for m = 1, R+ = lam * P{sup xi = 0}
    m = scalar_model(1.0, 2.0, 2.0, 1.0)
    R = ladder_exit_matrix(m, factorize(m).gminus)[0, 0]
    assert R > 0
    est = estimate_ruin(m, 0, 0.0, SimConfig(seed=5, n_paths=200_000))
    lam = 3.0
    assert abs(R - lam * (1 - est.point)) < 3 * lam * est.stderr


# infimum / ruin ------------------------------------------------------------------------------


def test_example_psi_coefficients(example):
    f = factorize(example)
    assert np.allclose(f.rho, REF_RATES, atol=0.01)
    for i, coefs in REF_PSI.items():
        assert np.allclose(f.psi.coefs[i], coefs, atol=0.01)


def test_example_psi_at_zero(example):
    assert ruin_probability(example, 0, 0.0) == pytest.approx(sum(REF_PSI[0]), abs=0.01)


def test_infimum_cdf_tail(example):
    law = infimum_distribution(example)
    assert law.cdf(0, -200.0) < 1e-10
    assert np.allclose(law.atom, 1 - np.array([law.cdf(i, 0.0) for i in range(2)]))


def test_infimum_matches_simulation(example, example_runs):
    law = infimum_distribution(example)
    for i, run in enumerate(example_runs):
        for x in (-0.5, -1.0, -2.0, -5.0):
            est = float(np.mean(run.sup > -x))
            assert within_se(est, float(law.cdf(i, x)), SHARED_PATHS), (i, x, est)


def test_psi_monotone_and_bounded(example, random_models):
    us = np.linspace(0, 30, 200)
    for m in [example, *random_models]:
        for i in range(m.m):
            v = ruin_probability(m, i, us)
            assert np.all(v >= -1e-12) and np.all(v <= 1 + 1e-12)
            assert np.all(np.diff(v) <= 1e-12)


def test_term_count_and_positive_rates(example, random_models):
    for m in [example, *random_models]:
        f = factorize(m)
        assert len(f.rho) == len(f.poles.negative)
        assert np.all(np.real(f.rho) > 0)
    assert len(factorize(example).rho) == 4


def test_positive_drift_rejected():
    with pytest.raises(DriftError):
        factorize(scalar_model(2.0, 1.0, 1.0, 1.0))


def test_switching_rejected():
    sw = [[None, ErlangMixture.exponential(1.0)], [None, None]]
    law = StateJumpLaw(1.0, ErlangMixture.exponential(2.0), 3.0, 1.0)
    m = make_model([[-1, 1], [1, -1]], [law, law], switching=sw)
    with pytest.raises(UnsupportedError):
        factorize(m)
