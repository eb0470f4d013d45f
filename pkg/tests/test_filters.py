import numpy as np
import pytest
import scipy.linalg

from clockens.clock_models import ClockSpec
from clockens.decomposition import build_transform
from clockens.ensemble import EnsembleSpec, assemble_system, simulate
from clockens.filters import (SolverError, SteadyGains, _doubling, _innovation_solve,
                              ckf_init, ckf_step, closed_loop_matrix, cross_covariance_residual,
                              joseph_posterior, noise_blocks, observable_gain, riccati_map,
                              riccati_residual, run_tkf, solve_cross_covariance, solve_riccati,
                              sstkf_step, steady_gains, tkf_covariance_after, tkf_from_ckf,
                              tkf_init, tkf_step)

from conftest import rel


@pytest.fixture(scope="module")
def trace(sysm, spec):
    return simulate(sysm, spec, None, 3000, 1)


def small_setup():
    clocks = [ClockSpec("Cs", 1e-10, 1e-12), ClockSpec("Cs", 2e-10, 1e-12),
              ClockSpec("Hm", 3e-11, 1e-13, 1e-16)]
    spec = EnsembleSpec(clocks, 1.0, 1e-22)
    return spec, assemble_system(spec), build_transform(spec, [0.3, 0.3, 0.4])


def test_scalar_riccati_golden_ratio():
    one = np.ones((1, 1))
    P, _ = _doubling(one, one, one, 1.0)
    assert P[0, 0] == pytest.approx((1 + np.sqrt(5)) / 2, rel=1e-14)
    x = np.zeros((1, 1))
    for _ in range(60):
        x = riccati_map(x, one, one, one, 1.0)
    assert x[0, 0] == pytest.approx((1 + np.sqrt(5)) / 2, rel=1e-12)


def test_doubling_gives_power_of_two_iterates():
    spec, sysm, b = small_setup()
    Q_oo, _ = noise_blocks(b, sysm.Q)
    P = np.zeros_like(b.A_oo)
    for _ in range(2 ** 6):
        P = riccati_map(P, b.A_oo, b.C_o, Q_oo, spec.r)
    D, _ = _doubling(b.A_oo, b.C_o, Q_oo, spec.r, log2_steps=6)
    assert rel(D, P) < 1e-10


def test_riccati_methods_agree_small():
    spec, sysm, b = small_setup()
    P_it = solve_riccati(b, sysm.Q, spec.r, method="iterate", rtol=1e-14)
    P_db = solve_riccati(b, sysm.Q, spec.r)
    assert rel(P_db, P_it) < 1e-8
    assert riccati_residual(P_it, b, sysm.Q, spec.r) < 1e-8


def test_riccati_iteration_cap_raises():
    spec, sysm, b = small_setup()
    with pytest.raises(SolverError, match="relative change"):
        solve_riccati(b, sysm.Q, spec.r, method="iterate", max_iter=5)


def test_riccati_reference_against_scipy(bundle, sysm, spec):
    P = solve_riccati(bundle, sysm.Q, spec.r)
    assert riccati_residual(P, bundle, sysm.Q, spec.r) <= 1e-8
    assert np.allclose(P, P.T)
    assert np.linalg.eigvalsh(P).min() > -1e-12 * np.abs(P).max()
    Q_oo, _ = noise_blocks(bundle, sysm.Q)
    r = spec.r
    ref = scipy.linalg.solve_discrete_are(bundle.A_oo.T, bundle.C_o.T, Q_oo / r,
                                          np.eye(bundle.C_o.shape[0])) * r
    assert rel(P, ref) < 1e-8


def test_cross_covariance(gains, bundle, sysm, spec):
    X = gains.P_obar_o_star
    assert cross_covariance_residual(X, bundle, sysm.Q, gains.P_oo_star, gains.L_o_star) <= 1e-8
    Mcl = closed_loop_matrix(bundle, gains.L_o_star)
    rho = np.abs(np.linalg.eigvals(Mcl)).max()
    assert rho < 1 and gains.closed_loop_spectral_radius == pytest.approx(rho)
    big = np.abs(np.linalg.eigvals(np.kron(Mcl, bundle.A_obar))).max()
    assert big == pytest.approx(rho, rel=1e-6)


def test_cross_covariance_needs_stable_loop(bundle, sysm, spec, gains):
    with pytest.raises(SolverError, match="spectral radius"):
        solve_cross_covariance(bundle, sysm.Q, spec.r, gains.P_oo_star,
                               np.zeros_like(gains.L_o_star))


def test_steady_state_matches_filter_limit(gains, bundle, sysm, spec):
    # 2**30 filter steps from a zero covariance
    P_oo, P_bo = tkf_covariance_after(bundle, sysm.Q, spec.r, 30)
    assert rel(gains.P_oo_star, P_oo) < 1e-6
    assert rel(gains.P_obar_o_star, P_bo) < 1e-6
    C = bundle.C_o
    S = C @ P_oo @ C.T + spec.r * np.eye(C.shape[0])
    assert rel(gains.L_o_star, observable_gain(P_oo, bundle, spec.r)) < 1e-8
    assert rel(gains.L_obar_star, _innovation_solve(S, P_bo @ C.T)) < 1e-8


def test_covariance_doubling_matches_explicit_filter(bundle, sysm, spec, trace):
    st = tkf_init(bundle, 0.0)
    for k in range(2 ** 8):
        st = tkf_step(st, trace.y[k], np.zeros(spec.N), bundle, sysm.Q, spec.r)
    # the prior formed at step k equals k applications of the Riccati map from zero
    P_oo, P_bo = tkf_covariance_after(bundle, sysm.Q, spec.r, 8)
    assert rel(st.P_oo_prior, P_oo) < 1e-9
    assert rel(st.P_obar_o_prior, P_bo) < 1e-8


def test_gain_sanity(gains):
    for M in (gains.L_o_star, gains.L_obar_star, gains.P_obar_o_star):
        assert np.all(np.isfinite(M))
    assert np.abs(gains.L_o_star).max() <= 1e3
    assert np.abs(gains.L_obar_star).max() <= 1e3


def test_gains_shrink_with_measurement_noise(bundle, sysm):
    norms = [steady_gains(bundle, sysm.Q, r) for r in (1e-27, 1e-24, 1e-21)]
    lo = [np.linalg.norm(g.L_o_star) for g in norms]
    lb = [np.linalg.norm(g.L_obar_star) for g in norms]
    assert lo[0] > lo[1] > lo[2]
    assert lb[0] > lb[1] > lb[2]


def test_gains_roundtrip(gains, tmp_path):
    path = tmp_path / "g.npz"
    gains.save(path)
    back = SteadyGains.load(path)
    for name in ("P_oo_star", "L_o_star", "P_obar_o_star", "L_obar_star", "q"):
        assert np.array_equal(getattr(back, name), getattr(gains, name))
    assert back.closed_loop_spectral_radius == gains.closed_loop_spectral_radius
    assert gains.to_bytes() == back.to_bytes()


def test_gains_version_check(gains, tmp_path):
    path = tmp_path / "g.npz"
    np.savez(path, version=99)
    with pytest.raises(ValueError, match="version"):
        SteadyGains.load(path)


def test_ckf_zero_innovation_keeps_prior():
    spec, sysm, b = small_setup()
    x = np.random.default_rng(0).standard_normal(spec.n_state)
    st = ckf_init(spec.n_state, 1e-20)
    st.xhat = x.copy()
    u = np.ones(spec.N)
    x_prior = sysm.Acal @ x + sysm.Bcal @ u
    out = ckf_step(st, sysm.Ccal @ x_prior, u, sysm, spec.r)
    assert np.allclose(out.xhat, x_prior, rtol=1e-14, atol=0)


def test_ckf_printed_form_applies_transition_twice():
    spec, sysm, b = small_setup()
    x = np.random.default_rng(1).standard_normal(spec.n_state)
    st = ckf_init(spec.n_state, 1e-20)
    st.xhat = x
    y = np.random.default_rng(2).standard_normal(spec.N - 1)
    std = ckf_step(st, y, np.zeros(spec.N), sysm, spec.r)
    pr = ckf_step(st, y, np.zeros(spec.N), sysm, spec.r, form="as_printed")
    x_prior = sysm.Acal @ x
    assert np.allclose(pr.xhat - std.xhat, sysm.Acal @ x_prior - x_prior)
    with pytest.raises(ValueError):
        ckf_step(st, y, np.zeros(spec.N), sysm, spec.r, form="other")


def test_ckf_unobservable_variance_grows(sysm, spec, trace):
    N = spec.N
    d = np.zeros(spec.n_state)
    d[:N] = 1 / np.sqrt(N)
    st = ckf_init(spec.n_state)
    var = []
    for k in range(300):
        st = ckf_step(st, trace.y[k], np.zeros(N), sysm, spec.r)
        var.append(d @ st.P @ d)
    assert np.all(np.diff(var) >= spec.tau * spec.sigma_diag(1).min() / N)


@pytest.mark.xfail(strict=True, reason="slow maser-drift modes: the gain still changes "
                   "by ~6e-4 per step at k=1000 on the ten-clock ensemble")
def test_ckf_gain_settles_by_one_thousand_steps(sysm, spec, trace):
    st = ckf_init(spec.n_state)
    prev = None
    for k in range(1001):
        st = ckf_step(st, trace.y[k], np.zeros(spec.N), sysm, spec.r)
        if k == 999:
            prev = st.L
    assert np.linalg.norm(st.L - prev) < 1e-10


def test_tkf_matches_ckf(sysm, spec, bundle, trace):
    ckf = ckf_init(spec.n_state, 1e-18)
    tkf = tkf_from_ckf(ckf, bundle)
    for k in range(200):
        u = np.zeros(spec.N)
        ckf = ckf_step(ckf, trace.y[k], u, sysm, spec.r)
        tkf = tkf_step(tkf, trace.y[k], u, bundle, sysm.Q, spec.r)
        assert rel(tkf.eta, bundle.T @ ckf.xhat) < 1e-8
        TL = bundle.T @ ckf.L
        assert rel(np.vstack([tkf.L_o, tkf.L_obar]), TL) < 1e-8


def test_tkf_covariance_psd_and_joseph(sysm, spec, bundle, trace):
    st = tkf_init(bundle)
    for k in range(300):
        st = tkf_step(st, trace.y[k], np.zeros(spec.N), bundle, sysm.Q, spec.r)
        assert np.array_equal(st.P_oo, st.P_oo.T)
        w = np.linalg.eigvalsh(st.P_oo)
        assert w.min() >= -1e-12 * w.max()
    jos = joseph_posterior(st.P_oo_prior, st.L_o, bundle.C_o, spec.r)
    assert rel(st.P_oo, jos) < 1e-6


def test_tkf_zero_innovation_is_prediction(bundle, sysm, spec, gains):
    rng = np.random.default_rng(4)
    st = tkf_init(bundle)
    st.eta_o_hat = rng.standard_normal(bundle.n_o) * 1e-9
    st.eta_obar_hat = rng.standard_normal(2) * 1e-9
    u = rng.standard_normal(spec.N) * 1e-12
    eo = bundle.A_oo @ st.eta_o_hat + bundle.B_o @ u
    eb = bundle.A_obar_o @ st.eta_o_hat + bundle.A_obar @ st.eta_obar_hat + bundle.B_obar @ u
    y = bundle.C_o @ eo
    for out in (tkf_step(st, y, u, bundle, sysm.Q, spec.r), sstkf_step(st, y, u, bundle, gains)):
        assert np.allclose(out.eta_o_hat, eo, rtol=1e-12, atol=0)
        assert np.allclose(out.eta_obar_hat, eb, rtol=1e-12, atol=0)


def test_tkf_covariance_steps_become_tiny(bundle, sysm, spec, trace):
    st = tkf_init(bundle)
    changes = []
    for k in range(2000):
        nxt = tkf_step(st, trace.y[k], np.zeros(spec.N), bundle, sysm.Q, spec.r)
        changes.append(np.linalg.norm(nxt.P_oo - st.P_oo))
        st = nxt
    assert max(changes[-100:]) <= 1e-12


def test_sstkf_tracks_tkf(bundle, sysm, spec, gains, trace):
    a, b = tkf_init(bundle), tkf_init(bundle)
    gap = 0.0
    for k in range(3001):
        a = tkf_step(a, trace.y[k], np.zeros(spec.N), bundle, sysm.Q, spec.r)
        b = sstkf_step(b, trace.y[k], np.zeros(spec.N), bundle, gains)
        if k >= 2000:
            gap = max(gap, np.abs(a.eta_o_hat - b.eta_o_hat).max())
    assert gap <= 1e-6


def test_sstkf_deterministic(bundle, gains, trace, spec):
    def run():
        st = tkf_init(bundle)
        for k in range(50):
            st = sstkf_step(st, trace.y[k], np.zeros(spec.N), bundle, gains)
        return st.eta
    assert np.array_equal(run(), run())


def test_run_tkf_helper(bundle, sysm, spec, trace):
    final, states = run_tkf(bundle, sysm.Q, spec.r, trace.y[:20], trace.u[:20], keep=True)
    assert len(states) == 20 and np.array_equal(final.eta, states[-1].eta)
