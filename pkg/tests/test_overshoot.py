import numpy as np
import pytest
from scipy.integrate import quad
from scipy.linalg import expm

from mmrisk import DriftError, ErlangMixture, StateJumpLaw, make_model
from mmrisk.factorization import ruin_probability
from mmrisk.montecarlo import SimConfig, estimate_descending_phase
from mmrisk.overshoot import (
    KINDS,
    MatrixExpMixture,
    descending_ladder,
    ladder_measure,
    overshoot_tail_mixture,
    overshoot_tail_zero,
    pk_series,
    xi_bar_limit,
)
from conftest import SHARED_PATHS, within_se

E = np.exp


def ref_gamma_plus(z):
    return np.array([
        [E(-2 * z) * (0.48 + 0.86 * z), E(-z) * (0.31 + 0.22 * z)],
        [E(-2 * z) * (0.21 + 0.34 * z), E(-z) * (0.61 + 0.49 * z)],
    ])


def ref_gamma_under(z):
    first = np.array([
        [0.1 * E(-2 * z) * (1 + z), E(-z) * (0.2 + 0.1 * z)],
        [0.09 * E(-2 * z) * (1 + z), E(-z) * (0.18 + 0.09 * z)],
    ])
    second = np.array([
        [E(-2.3 * z) * (0.0016 + 0.002 * z), -E(-1.3 * z) * (0.02 + 0.013 * z)],
        [-E(-2.3 * z) * (0.004 + 0.004 * z), E(-1.3 * z) * (0.05 + 0.03 * z)],
    ])
    return first + second


def close(a, b):
    return np.all(np.abs(a - b) <= np.maximum(0.01, 0.05 * np.abs(b)))


def no_up_jumps():
    law = StateJumpLaw(0.0, None, 1.0, 1.0)
    return make_model([[-1, 1], [1, -1]], [law, StateJumpLaw(0.0, None, 2.0, 0.5)])


# MatrixExpMixture ------------------------------------------------------------------


def test_mixture_constant_and_term():
    M = np.array([[1.0, 2.0], [3.0, 4.0]])
    f = MatrixExpMixture.constant(M)
    f.add_term(1.5, 2, np.eye(2))
    z = 0.7
    assert np.allclose(f(z), M + z**2 * np.exp(-1.5 * z) * np.eye(2))


def test_mixture_derivative_and_integral():
    f = MatrixExpMixture(1)
    f.add_term(2.0, 1, np.array([[3.0]]))
    f.add_term(0.5 + 1j, 0, np.array([[1.0]]))
    f.add_term(0.5 - 1j, 0, np.array([[1.0]]))
    h = 1e-6
    for z in (0.0, 0.4, 2.0):
        fd = (f(z + h) - f(z - h)) / (2 * h)
        assert f.derivative()(z)[0, 0] == pytest.approx(fd[0, 0], abs=1e-7)
        ref = quad(lambda y: f(y)[0, 0], z, np.inf)[0]
        assert f.integral_from(z)[0, 0] == pytest.approx(ref, abs=1e-9)


def test_mixture_product_and_simplify():
    a = MatrixExpMixture(1)
    a.add_term(1.0, 0, np.array([[2.0]]))
    b = MatrixExpMixture(1)
    b.add_term(0.5, 1, np.array([[1.0]]))
    for z in (0.0, 1.3):
        assert (a @ b)(z)[0, 0] == pytest.approx(2 * z * np.exp(-1.5 * z))
    s = (a + a).simplify()
    assert len(s.terms) == 1 and s(0.0)[0, 0] == pytest.approx(4.0)


# xi-bar limit ----------------------------------------------------------------------


def test_example_R_c0_spectrum(example):
    ev = np.sort(xi_bar_limit(example).eigenvalues.real)
    assert ev[0] == pytest.approx(0.0, abs=1e-10)
    assert ev[1] == pytest.approx(0.30224, abs=1e-5)


def test_R_c0_spectrum_closed_right_half_plane(example, random_models):
    for m in [example, *random_models]:
        ev = xi_bar_limit(m).eigenvalues
        assert np.all(ev.real > -1e-9)
        assert np.sum(np.abs(ev) < 1e-8) == 1  # the limit keeps exactly one zero mode


def test_descending_ladder_is_stochastic(example, random_models):
    for m in [example, *random_models]:
        B = descending_ladder(m)
        assert np.all(B >= 0)
        assert np.allclose(B.sum(axis=1), 1.0, atol=1e-10)


@pytest.mark.parametrize("depth", [0.0, 1.0, 3.0])
def test_descending_phase_matches_simulation(example, depth):
    B = descending_ladder(example)
    F = B @ expm(example.C @ (B - np.eye(2)) * depth)
    cfg = SimConfig(seed=13, n_paths=200_000)
    for i in range(2):
        for j, est in enumerate(estimate_descending_phase(example, i, depth, cfg)):
            assert abs(est.point - F[i, j]) < 3 * est.stderr, (i, j, est, F[i, j])


# ladder measure ----------------------------------------------------------------------


def test_ladder_measure_at_zero(example):
    assert np.all(ladder_measure(example).cdf(0.0) == 0)


def test_ladder_mass_equals_ruin_at_zero(example, random_models):
    for m in [example, *random_models]:
        G = ladder_measure(m).total
        psi0 = np.array([ruin_probability(m, k, 0.0) for k in range(m.m)])
        assert np.allclose(G.sum(axis=1), psi0, atol=1e-6)


def test_example_ladder_mass(example):
    G = ladder_measure(example).total
    assert np.allclose(G.sum(axis=1), [0.79, 0.82], atol=0.01)


def test_ladder_mass_substochastic(example, random_models):
    for m in [example, *random_models]:
        G = ladder_measure(m).total
        assert np.all(G >= -1e-12)
        assert np.all(G.sum(axis=1) < 1)


def test_ladder_cdf_increases_to_total(example):
    lm = ladder_measure(example)
    us, vals = lm.tabulate(0.1, 400)
    assert np.all(np.diff(vals, axis=0) >= -1e-12)
    assert np.allclose(vals[-1], lm.total, atol=1e-6)


# renewal series ----------------------------------------------------------------------


def test_pk_series_at_zero(example):
    G = ladder_measure(example).total
    for i in range(2):
        assert pk_series(example, i, 0.0) == pytest.approx(1 - ((np.eye(2) - G) @ np.ones(2))[i], abs=1e-15)


def test_pk_series_matches_closed_form(example):
    us = np.linspace(0.5, 10.0, 20)
    for i in range(2):
        ref = ruin_probability(example, i, us)
        got = np.array([pk_series(example, i, u, tol=1e-6) for u in us])
        assert np.abs(got - ref).max() <= 1e-3


def test_pk_series_random_models(random_models):
    for m in random_models[::5]:
        for u in (0.5, 3.0):
            assert pk_series(m, 0, u) == pytest.approx(ruin_probability(m, 0, u), abs=1e-3)


def test_pk_series_without_up_jumps():
    m = no_up_jumps()
    assert np.all(ladder_measure(m).total == 0)
    for u in (0.0, 1.0, 5.0):
        assert pk_series(m, 0, u) == 0.0


def test_pk_series_positive_drift():
    law = StateJumpLaw(2.0, ErlangMixture.exponential(1.0), 1.0, 1.0)
    m = make_model([[0.0]], [law])
    with pytest.raises(DriftError):
        pk_series(m, 0, 1.0)


# overshoot tails at level zero ---------------------------------------------------------


@pytest.mark.parametrize("z", [0.0, 0.5, 1.0, 2.0])
def test_ref_gamma_plus_form(example, z):
    assert close(overshoot_tail_zero(example, "gamma_plus", z), ref_gamma_plus(z))


@pytest.mark.parametrize("z", [0.0, 0.5, 1.0, 2.0])
def test_ref_gamma_under_form(example, z):
    assert close(overshoot_tail_zero(example, "gamma_under", z), ref_gamma_under(z))


def test_example_overshoot_rates(example):
    rates = sorted({round(r.real, 4) for r, _ in overshoot_tail_mixture(example, "gamma_total").terms})
    assert rates == pytest.approx([1.0, 1.30224, 2.0, 2.30224], abs=1e-4)


def test_tails_vanish(example, random_models):
    for m in [example, *random_models]:
        for kind in KINDS:
            assert np.abs(overshoot_tail_zero(m, kind, 200.0)).max() < 1e-8


def test_z_zero_consistency(example, random_models):
    for m in [example, *random_models]:
        plus = overshoot_tail_zero(m, "gamma_plus", 0.0)
        total = overshoot_tail_zero(m, "gamma_total", 0.0)
        psi0 = np.array([ruin_probability(m, k, 0.0) for k in range(m.m)])
        assert np.allclose(plus.sum(axis=1), psi0, atol=1e-6)
        assert np.allclose(total, plus, atol=1e-6)


def test_negative_z_rejected(example):
    with pytest.raises(ValueError):
        overshoot_tail_zero(example, "gamma_plus", -0.1)


def test_monotone_bounded_and_dominated(example, random_models):
    zs = np.linspace(0, 10, 100)
    for m in [example, *random_models]:
        vals = {k: overshoot_tail_mixture(m, k).evaluate(zs) for k in KINDS}
        for k, v in vals.items():
            assert np.all(v >= -1e-10) and np.all(v <= 1 + 1e-10), k
            assert np.all(np.diff(v, axis=0) <= 1e-10), k
        assert np.all(vals["gamma_total"] >= vals["gamma_plus"] - 1e-10)
        assert np.all(vals["gamma_total"] >= vals["gamma_under"] - 1e-10)


def test_tails_match_simulation(example, example_runs):
    # level index 0 of the shared run is level 0
    for i, run in enumerate(example_runs):
        st = run.state_at_tau[:, 0]
        samples = {"gamma_plus": run.gamma_plus[:, 0], "gamma_under": run.gamma_under[:, 0],
                   "gamma_total": run.gamma_total[:, 0]}
        for kind, vals in samples.items():
            for z in (0.25, 0.5, 1.0, 2.0):
                exact = overshoot_tail_zero(example, kind, z)[i]
                for j in range(2):
                    est = float(np.mean((st == j) & (vals > z)))
                    assert within_se(est, exact[j], SHARED_PATHS), (i, kind, z, j, est, exact[j])
