import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from clockens.clock_models import ClockSpec
from clockens.decomposition import (DecompositionError, build_W, build_transform,
                                    generalized_inverse)
from clockens.ensemble import EnsembleSpec, assemble_system, selector


def weight_vectors(n):
    # any real vector on the plane q^T 1 = 1, negative entries allowed
    return arrays(float, n, elements=st.floats(-3, 3)).map(lambda a: np.append(a, 1 - a.sum()))


def test_build_W_examples():
    assert np.allclose(build_W([0.5, 0.5]), [[0.5], [-0.5]])
    W = build_W([1.0, 0.0, 0.0, 0.0])
    assert np.array_equal(W[:, 0], [0, -1, -1, -1])
    assert np.array_equal(W[:, 1:], np.eye(4)[:, 1:3])


@given(weight_vectors(5))
def test_build_W_properties(q):
    W = build_W(q)
    assert W.shape == (6, 5)
    assert np.abs(q @ W).max() <= 1e-12 * max(1, np.abs(q).max() ** 2)
    assert np.linalg.matrix_rank(W) == 5


def test_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        build_W([0.5, 0.6])
    with pytest.raises(ValueError):
        build_W([np.nan, 1.0])


def test_generalized_inverse_examples():
    assert np.allclose(generalized_inverse([[1.0, -1.0]], [0.5, 0.5]), [[0.5], [-0.5]])


@settings(max_examples=50)
@given(weight_vectors(6))
def test_generalized_inverse_properties(q):
    N = 7
    V = np.hstack([np.eye(N - 1), -np.ones((N - 1, 1))])
    Vp = generalized_inverse(V, q)
    scale = max(1.0, np.abs(Vp).max())
    assert np.abs(V @ Vp - np.eye(N - 1)).max() <= 1e-10 * scale
    assert np.abs(q @ Vp).max() <= 1e-12 * scale * max(1.0, np.abs(q).max()) * N


def test_generalized_inverse_singular_reports_condition():
    # a V whose kernel is not span(1): V W loses rank for q = e_1
    V = np.array([[0.0, 1.0, -1.0], [0.0, 1.0, -1.0]])
    with pytest.raises(DecompositionError, match="condition number"):
        generalized_inverse(V, [1.0, 0.0, 0.0])


def test_reference_dimensions(bundle):
    assert bundle.A_oo.shape == (21, 21)
    assert bundle.A_obar_o.shape == (2, 21)
    assert bundle.C_o.shape == (9, 21)
    assert bundle.B_o.shape == (21, 10)
    assert bundle.T_o.shape == (21, 23) and bundle.T_obar.shape == (2, 23)


def test_inverse_pair(bundle):
    n = bundle.T.shape[0]
    assert np.abs(bundle.T @ bundle.Tinv - np.eye(n)).max() <= 1e-10
    s = np.random.default_rng(0).standard_normal((n, 20))
    assert np.linalg.norm(bundle.Tinv @ (bundle.T @ s) - s) <= 1e-10 * np.linalg.norm(s)


def test_common_mode_maps_to_mean(bundle, spec):
    N, M = spec.N, spec.M
    s = np.concatenate([3.0 * np.ones(N), -2.0 * np.ones(N), np.zeros(M)])
    eta_o, eta_obar = bundle.split(s)
    assert np.abs(eta_o).max() < 1e-14
    assert np.allclose(eta_obar, [3.0, -2.0])


def test_mean_coordinates_are_weighted_average(bundle, spec):
    s = np.random.default_rng(1).standard_normal(spec.n_state)
    N = spec.N
    _, eta_obar = bundle.split(s)
    assert np.allclose(eta_obar, [bundle.q @ s[:N], bundle.q @ s[N:2 * N]])


def check_blocks(spec, b):
    sysm = assemble_system(spec)
    n, n_o = spec.n_state, b.n_o
    At = b.T @ sysm.Acal @ b.Tinv
    scale = np.abs(At).max()
    assert np.abs(At[:n_o, :n_o] - b.A_oo).max() <= 1e-10 * scale
    assert np.abs(At[:n_o, n_o:]).max() <= 1e-10 * scale
    assert np.abs(At[n_o:, :n_o] - b.A_obar_o).max() <= 1e-10 * scale
    assert np.abs(At[n_o:, n_o:] - b.A_obar).max() <= 1e-10 * scale
    assert np.allclose(b.T @ sysm.Bcal, b.B_full, atol=1e-12)
    Ct = sysm.Ccal @ b.Tinv
    assert np.allclose(Ct[:, :n_o], b.C_o, atol=1e-12)
    assert np.abs(Ct[:, n_o:]).max() <= 1e-12
    assert n == n_o + 2


def test_block_identities_reference(spec, bundle):
    check_blocks(spec, bundle)


def test_block_forms(spec, bundle):
    N, M, tau = spec.N, spec.M, spec.tau
    J = selector(N, M)
    A = np.array([[1, tau], [0, 1]])
    beta = np.array([[tau ** 2 / 2], [tau]])
    assert np.allclose(bundle.A_oo[: 2 * (N - 1), : 2 * (N - 1)], np.kron(A, np.eye(N - 1)))
    assert np.allclose(bundle.A_oo[: 2 * (N - 1), 2 * (N - 1):], np.kron(beta, spec.V @ J))
    assert np.allclose(bundle.A_obar_o[:, 2 * (N - 1):], np.kron(beta, bundle.q @ J))
    assert np.allclose(bundle.B_obar, np.kron(np.array([[tau], [1]]), bundle.q))
    assert np.allclose(bundle.C_o, np.hstack([np.eye(N - 1), np.zeros((N - 1, N - 1 + M))]))


@settings(max_examples=30, deadline=None)
@given(n_cs=st.integers(1, 4), n_hm=st.integers(1, 3), tau=st.floats(0.1, 10), data=st.data())
def test_block_identities_random(n_cs, n_hm, tau, data):
    clocks = [ClockSpec("Cs", 1e-10, 1e-13)] * n_cs + [ClockSpec("Hm", 1e-11, 1e-13, 1e-19)] * n_hm
    spec = EnsembleSpec(clocks, tau, 1e-27)
    N = spec.N
    raw = data.draw(arrays(float, N, elements=st.floats(0.05, 1.0)))
    check_blocks(spec, build_transform(spec, raw / raw.sum()))


def test_length_mismatch(spec):
    with pytest.raises(ValueError):
        build_transform(spec, [0.5, 0.5])
