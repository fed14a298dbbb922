import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectral_rates import engine as E
from spectral_rates import oracle, spectrum as S
from spectral_rates.errors import DataError, ParameterError
from spectral_rates.specfun import JacobiParams, jacobi_residual_eval

ALL_SCHEDULES = [
    E.Constant(1.0),
    E.Constant(1.0, 0.9),
    E.JacobiHB(1.0, 0.0),
    E.ScheduledGD(1.0),
    E.SteepestDescent(),
    E.ConjugateGradients(),
    E.StableConjugateGradients(),
]


def _random_measure(seed, K):
    rng = np.random.default_rng(seed)
    lam = np.sort(rng.uniform(1e-3, 1, K))[::-1]
    lam[0] = 1.0
    return S.DiscreteMeasure(lam, rng.uniform(0.1, 1, K))


def test_single_atom_gd():
    m = S.DiscreteMeasure([1.0], [1.0])
    tr = E.run(m, E.Constant(1.0), 3)
    np.testing.assert_array_equal(tr.loss, [0.5, 0, 0, 0])
    np.testing.assert_array_equal(tr.alpha[:2], [1, 1])


def test_sd_two_atom_rate():
    m = S.DiscreteMeasure([1.0, 0.5], [0.5, 0.5])
    tr = E.run(m, E.SteepestDescent(), 1)
    assert tr.alpha[0] == pytest.approx(1.2, rel=1e-15)
    state = E.SpectralState(np.sqrt(m.masses), np.sqrt(m.masses), 0)
    assert E.sd_rate(state, m) == pytest.approx(1.2, rel=1e-15)


def test_sd_single_atom_rate():
    m = S.DiscreteMeasure([0.25], [2.0])
    tr = E.run(m, E.SteepestDescent(), 1)
    assert tr.alpha[0] == pytest.approx(4.0)


@pytest.mark.parametrize("K", [5, 17, 30])
def test_cg_exact_termination(K):
    m = _random_measure(K, K)
    tr = E.run(m, E.ConjugateGradients(), K)
    assert tr.loss[K] <= 1e-20 * tr.loss[0]


def test_cg_matches_power_law_oracle():
    m = S.equal_mass_discretization(S.PowerLawSpec(1.0), 10**4)
    tr = E.run(m, E.ConjugateGradients(), 25)
    ref = oracle.cg_exact_powerlaw_loss(np.arange(26), 1.0)
    assert np.max(np.abs(tr.loss / ref - 1)) < 0.01


def test_jacobi_schedule_examples():
    assert E.jacobi_schedule(0, 1, 0) == (0.75, 0.0)
    a, b = E.jacobi_schedule(10**6, 1.0, 0.0)
    assert abs(a - 2) < 1e-4 and abs(b - (1 - 3e-6)) < 1e-4
    with pytest.raises(ParameterError):
        E.jacobi_schedule(-1, 1, 0)


def test_scheduled_gd_rates():
    np.testing.assert_allclose(E.scheduled_gd_rates(1, 1.0, 0.0), [0.75])
    r = E.scheduled_gd_rates(7, 1.0, 0.0)
    assert r.shape == (7,) and np.all(r > 0)


def test_three_term_equivalence():
    m = S.DiscreteMeasure([0.9, 0.4, 0.05], [1.0, 1.0, 1.0])
    tr = E.run(m, E.JacobiHB(1.0, 0.0), 3, probes=m.atoms)
    ref = jacobi_residual_eval(3, JacobiParams(1.0, 0.0), m.atoms)
    np.testing.assert_allclose(tr.probes[3], ref, rtol=1e-12)


@pytest.mark.parametrize("sch", ALL_SCHEDULES, ids=lambda s: s.kind + str(getattr(s, "beta", "")))
def test_probe_at_zero_is_one(sch):
    m = _random_measure(1, 20)
    tr = E.run(m, sch, 20, probes=[0.0])
    np.testing.assert_allclose(tr.probes[:, 0], 1.0, atol=1e-15)


@pytest.mark.parametrize("sch", ALL_SCHEDULES, ids=lambda s: s.kind + str(getattr(s, "beta", "")))
def test_dense_matches_spectral(sch):
    m = _random_measure(3, 50)
    steps = 9 if sch.kind == "cg" else 100
    a = E.run(m, sch, steps)
    b = E.dense_run(S.OperatorProblem.from_measure(m), sch, steps)
    floor = 1e-16 * a.loss[0]
    rel = np.abs(a.loss - b.loss) / np.maximum(np.maximum(a.loss, b.loss), floor)
    assert rel.max() <= 1e-8


def test_dense_initial_loss():
    p = S.cg_lowerbound_operator(0.5, 1.0, 20)
    tr = E.dense_run(p, E.StableConjugateGradients(), 5)
    assert tr.loss[0] == pytest.approx(0.5 * np.sum(p.target**2))


def test_stable_cg_chain_oracle():
    p = S.cg_lowerbound_operator(0.5, 1.0, 200)
    tr = E.dense_run(p, E.StableConjugateGradients(), 50)
    ref = oracle.cg_chain_loss(np.arange(51), 0.5, 1.0)
    assert np.max(np.abs(tr.loss / ref - 1)) <= 1e-6


def _literal_orthogonal_steps(m, n_steps):
    """Dense oracle: gradient made Euclidean-orthogonal to all past steps, then exact line search."""
    J, f = np.diag(np.sqrt(m.atoms)), np.sqrt(m.masses)
    w, steps, out = np.zeros(len(m)), [], [0.5 * f @ f]
    for _ in range(n_steps):
        d = J.T @ (J @ w - f)
        for _ in range(2):
            for s in steps:
                d = d - (s @ d) / (s @ s) * s
        Jd, r = J @ d, J @ w - f
        t = -(r @ Jd) / (Jd @ Jd)
        w = w + t * d
        steps.append(t * d)
        out.append(0.5 * np.sum((J @ w - f) ** 2))
    return np.array(out)


def test_stable_cg_parameter_mode_is_literal_procedure():
    m = _random_measure(5, 40)
    b = E.run(m, E.StableConjugateGradients("parameter"), 20)
    np.testing.assert_allclose(b.loss, _literal_orthogonal_steps(m, 20), rtol=1e-10)
    assert b.diagnostics["max_step_cosine"] <= 1e-8
    # orthogonal (rather than conjugate) steps coincide with CG only for the first two steps
    a = E.run(m, E.StableConjugateGradients("target"), 20)
    np.testing.assert_allclose(a.loss[:2], b.loss[:2], rtol=1e-12)
    assert a.loss[-1] < b.loss[-1]


@pytest.mark.parametrize("K", [3, 8, 12])
def test_stable_cg_equals_basic_cg_on_small_problems(K):
    m = _random_measure(K + 100, K)
    a = E.run(m, E.StableConjugateGradients(), K - 1)
    b = E.run(m, E.ConjugateGradients(), K - 1)
    np.testing.assert_allclose(a.loss, b.loss, rtol=1e-10)


def test_stable_cg_target_mode_steps_are_conjugate():
    m = S.synthetic_diagonal(2000, 1.5, 1.0)
    tr = E.run(m, E.StableConjugateGradients(), 150)
    assert tr.diagnostics["max_step_cosine"] <= 1e-8


def test_cg_two_atoms_after_gd_step_terminates():
    m = S.DiscreteMeasure([1.0, 0.3], [0.7, 0.2])
    tr = E.run(m, E.ConjugateGradients(), 2)
    assert tr.loss[2] <= 1e-20 * tr.loss[0]


def test_cg_implied_polynomial_is_jacobi():
    m = S.equal_mass_discretization(S.PowerLawSpec(1.0), 10**5)
    probe = np.array([0.9, 0.5, 0.1, 0.01])
    tr = E.run(m, E.ConjugateGradients(), 10, probes=probe)
    for n in range(11):
        # CG on rho = lam^zeta on [0, 1] gives q_n^{(zeta, 0)} in the argument 2 lam
        ref = jacobi_residual_eval(n, JacobiParams(1.0, 0.0), 2 * probe)
        np.testing.assert_allclose(tr.probes[n], ref, atol=1e-6 * max(1.0, np.abs(ref).max()))


def test_stable_cg_history_cap_records_event():
    m = _random_measure(9, 30)
    with pytest.warns(RuntimeWarning):
        tr = E.run(m, E.StableConjugateGradients(history_cap=3), 10)
    assert any("history" in ev for ev in tr.events)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6), K=st.integers(2, 25))
def test_adaptive_losses_monotone_and_cg_dominates(seed, K):
    m = _random_measure(seed, K)
    cg = E.run(m, E.ConjugateGradients(), K)
    for sch in ALL_SCHEDULES:
        tr = E.run(m, sch, K)
        if sch.kind in ("sd", "cg", "stable-cg"):
            assert np.all(np.diff(tr.loss) <= 1e-15 * tr.loss[0])
        assert np.all(cg.loss <= tr.loss + 1e-12 * tr.loss[0])


def test_stability_region():
    with pytest.raises(ParameterError):
        E.Constant(1.0, 1.0)
    with pytest.raises(ParameterError):
        E.Constant(-1.0)
    m = S.DiscreteMeasure([1.0, 0.1], [1.0, 1.0])
    with pytest.raises(ParameterError):
        E.run(m, E.Constant(2.5), 10)


def test_divergence_truncates():
    m = S.DiscreteMeasure([1.0, 0.1], [1.0, 1.0])
    tr = E.run(m, E.Constant(2.5, allow_unstable=True), 200)
    assert tr.diverged
    assert len(tr) < 201 and np.all(np.isfinite(tr.loss))
    assert any("diverged" in ev for ev in tr.events)


def test_closed_form_matches_loop():
    m = S.synthetic_diagonal(200, 1.5, 1.0)
    for sch in (E.Constant(1.0), E.Constant(0.8, 0.7)):
        loop = E.run(m, sch, 500)
        cf = E.run(m, sch, 500, closed_form=True)
        np.testing.assert_allclose(cf.loss, loop.loss[cf.steps], rtol=1e-9)
        np.testing.assert_allclose(cf.slope0, loop.slope0[cf.steps], rtol=1e-12)


def test_record_subset():
    m = _random_measure(2, 10)
    full = E.run(m, E.SteepestDescent(), 50)
    part = E.run(m, E.SteepestDescent(), 50, record=[0, 10, 50])
    np.testing.assert_array_equal(part.steps, [0, 10, 50])
    np.testing.assert_array_equal(part.loss, full.loss[[0, 10, 50]])


def test_polynomial_probe():
    m = _random_measure(4, 10)
    vals = E.polynomial_probe(m, E.JacobiHB(2.0, 0.5), 15, [0.0, 0.3])
    np.testing.assert_allclose(vals[:, 0], 1.0)
    ref = [jacobi_residual_eval(n, JacobiParams(2.0, 0.5), 0.3) for n in range(16)]
    np.testing.assert_allclose(vals[:, 1], ref, rtol=1e-10, atol=1e-14)


def test_run_is_deterministic():
    m = _random_measure(6, 30)
    for sch in ALL_SCHEDULES:
        assert E.run(m, sch, 40).equals(E.run(m, sch, 40))


def test_make_schedule():
    assert isinstance(E.make_schedule("gd", alpha=0.5), E.Constant)
    assert E.make_schedule("hb", alpha=1, beta=0.9).beta == 0.9
    assert isinstance(E.make_schedule("stable-cg"), E.StableConjugateGradients)
    with pytest.raises(ParameterError):
        E.make_schedule("adam")


def test_bad_inputs():
    m = _random_measure(0, 5)
    with pytest.raises(ParameterError):
        E.run(m, E.SteepestDescent(), -1)
    with pytest.raises(DataError):
        E.run(np.ones(3), E.SteepestDescent(), 1)
    with pytest.raises(ParameterError):
        E.run(m, E.SteepestDescent(), 5, closed_form=True)
