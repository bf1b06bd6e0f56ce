import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.base import clone

from amttrack.check import numeric_grad, reference_attention, rel_error
from amttrack.exceptions import ParameterError, ShapeError
from amttrack.hopfield import (
    HopfieldLayer,
    HopfieldLookup,
    HopfieldRetriever,
    ProjectionSet,
    energy,
    hopfield_assoc,
    hopfield_assoc_vjp,
    hopfield_lookup,
    hopfield_pooling,
    retrieve,
    retrieve_step,
    separation_weights,
)


def unit_rows(rng, n, d):
    Y = rng.standard_normal((n, d))
    return Y / np.linalg.norm(Y, axis=1, keepdims=True)


def brute_energy(Y, r, beta):
    return -np.log(sum(np.exp(beta * (y @ r)) for y in Y)) / beta + 0.5 * r @ r


def test_energy_matches_direct_sum(rng):
    Y = rng.standard_normal((7, 5))
    r = rng.standard_normal(5)
    for beta in (0.1, 1.0, 3.0):
        assert energy(Y, r, beta) == pytest.approx(brute_energy(Y, r, beta), rel=1e-12)


def test_update_is_convex_combination(rng):
    Y = rng.standard_normal((6, 4))
    r = rng.standard_normal(4)
    w = separation_weights(Y, r, 2.0)
    assert np.all(w >= 0) and w.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(retrieve_step(Y, r, 2.0), w @ Y, rtol=1e-13)


def test_update_is_gradient_step_of_energy(rng):
    # r' = r - grad E(r) since grad E = r - Y^T softmax(beta Y r)
    Y = rng.standard_normal((5, 3))
    r = rng.standard_normal(3)
    g = numeric_grad(lambda: energy(Y, r, 1.5), r, 1e-6)
    np.testing.assert_allclose(retrieve_step(Y, r, 1.5), r - g, atol=1e-8)


@given(st.integers(0, 10_000), st.integers(2, 20), st.integers(2, 16), st.sampled_from([0.1, 1.0, 4.0, 20.0]))
def test_energy_never_increases(seed, n, d, beta):
    rng = np.random.default_rng(seed)
    _, _, energies = retrieve(rng.standard_normal((n, d)), rng.standard_normal(d), beta, max_iters=12)
    assert np.all(np.diff(energies) <= 1e-9)


def test_retrieve_reports_iterations_and_converges(rng):
    Y = unit_rows(rng, 8, 32)
    r, iters, energies = retrieve(Y, Y[3] + 0.05 * rng.standard_normal(32), 20.0)
    assert 1 <= iters <= 16 and len(energies) == iters + 1
    assert r @ Y[3] / np.linalg.norm(r) > 0.999


def test_single_pattern_is_fixed_point_after_one_step(rng):
    y = rng.standard_normal((1, 5))
    np.testing.assert_allclose(retrieve_step(y, rng.standard_normal(5), 0.3), y[0])


def test_tiny_beta_gives_pattern_mean(rng):
    Y = rng.standard_normal((10, 6))
    np.testing.assert_allclose(retrieve_step(Y, rng.standard_normal(6), 1e-8), Y.mean(axis=0), atol=1e-6)


def test_assoc_matches_reference_attention(rng):
    for _ in range(20):
        M, N, dr, dy, dk, dv = rng.integers(1, 9, size=6)
        R, Y = rng.standard_normal((M, dr)), rng.standard_normal((N, dy))
        W = [rng.standard_normal(s) for s in ((dr, dk), (dy, dk), (dy, dv))]
        got = hopfield_assoc(R, Y, ProjectionSet(*W), 1 / np.sqrt(dk))
        assert np.max(np.abs(got - reference_attention(R, Y, *W))) < 1e-12


def test_assoc_without_projection_equals_identity_projection(rng):
    R, Y = rng.standard_normal((4, 6)), rng.standard_normal((9, 6))
    np.testing.assert_allclose(hopfield_assoc(R, Y, None, 0.5),
                               hopfield_assoc(R, Y, ProjectionSet.identity(6), 0.5), rtol=1e-14)


def test_assoc_returns_attention_rows(rng):
    R, Y = rng.standard_normal((3, 4)), rng.standard_normal((5, 4))
    Z, A = hopfield_assoc(R, Y, ProjectionSet.identity(4), 1.0, return_attention=True)
    assert A.shape == (3, 5)
    np.testing.assert_allclose(A.sum(axis=1), 1.0)
    np.testing.assert_allclose(Z, A @ Y)


def test_projected_assoc_reduces_to_update_rule(rng):
    # identity projections, one state: same as one retrieval step
    Y = rng.standard_normal((6, 4))
    r = rng.standard_normal(4)
    got = hopfield_assoc(r[None, :], Y, ProjectionSet.identity(4), 2.0)[0]
    np.testing.assert_allclose(got, retrieve_step(Y, r, 2.0), rtol=1e-13)


def test_assoc_shape_errors(rng):
    R, Y = rng.standard_normal((3, 4)), rng.standard_normal((5, 6))
    with pytest.raises(ShapeError):
        hopfield_assoc(R, Y, ProjectionSet.identity(4), 1.0)
    with pytest.raises(ShapeError):
        hopfield_assoc(R, Y, None, 1.0)
    with pytest.raises(ShapeError):
        hopfield_assoc(R, np.zeros((0, 4)), None, 1.0)
    with pytest.raises(ParameterError):
        hopfield_assoc(R, R, None, 0.0)


@given(st.integers(0, 10_000))
def test_vjp_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    M, N, dr, dy, dk, dv = rng.integers(1, 5, size=6)
    R, Y = rng.standard_normal((M, dr)), rng.standard_normal((N, dy))
    proj = ProjectionSet(rng.standard_normal((dr, dk)), rng.standard_normal((dy, dk)), rng.standard_normal((dy, dv)))
    G = rng.standard_normal((M, dv))
    grads = hopfield_assoc_vjp(R, Y, proj, 0.7, G).as_dict()
    ops = {"R": R, "Y": Y, "W_Q": proj.W_Q, "W_K": proj.W_K, "W_V": proj.W_V}
    for name, x in ops.items():
        fd = numeric_grad(lambda: float(np.sum(G * hopfield_assoc(R, Y, proj, 0.7))), x, 1e-5)
        assert rel_error(grads[name], fd) < 1e-6, name


def test_vjp_rejects_bad_upstream(rng):
    R = rng.standard_normal((2, 3))
    with pytest.raises(ShapeError):
        hopfield_assoc_vjp(R, R, ProjectionSet.identity(3), 1.0, np.ones((3, 3)))


def test_pooling_is_single_query_association(rng):
    Y = rng.standard_normal((7, 5))
    q = rng.standard_normal((1, 3))
    W_K, W_V = rng.standard_normal((5, 3)), rng.standard_normal((5, 4))
    got = hopfield_pooling(Y, q, W_K, W_V, 1.3)
    a = np.exp(1.3 * (Y @ W_K) @ q[0])
    np.testing.assert_allclose(got[0], (a / a.sum()) @ (Y @ W_V), rtol=1e-12)
    with pytest.raises(ShapeError):
        hopfield_pooling(Y, np.ones((2, 3)), W_K, W_V, 1.0)


def test_lookup_self_retrieval_at_large_beta(rng):
    P = unit_rows(rng, 6, 16)
    np.testing.assert_allclose(hopfield_lookup(P, P, P, 200.0), P, atol=1e-10)


def test_lookup_picks_nearest_prototype(rng):
    P = unit_rows(rng, 5, 8)
    R = P[[4, 1]] + 0.01 * rng.standard_normal((2, 8))
    out = hopfield_lookup(R, P, np.eye(5), 100.0)
    assert list(out.argmax(axis=1)) == [4, 1]


def test_lookup_shape_errors(rng):
    with pytest.raises(ShapeError):
        hopfield_lookup(np.ones((2, 3)), np.ones((4, 2)), np.ones((4, 3)), 1.0)
    with pytest.raises(ShapeError):
        hopfield_lookup(np.ones((2, 3)), np.ones((4, 3)), np.ones((5, 3)), 1.0)


def test_estimators_follow_sklearn_conventions(rng):
    Y = unit_rows(rng, 10, 12)
    for est in (HopfieldRetriever(beta=20.0), HopfieldLayer(beta=20.0), HopfieldLookup(beta=50.0)):
        twin = clone(est)
        assert twin.get_params() == est.get_params()
        out = est.fit(Y).transform(Y[:3] + 0.01)
        assert out.shape == (3, 12)
        assert est.n_features_in_ == 12
        np.testing.assert_allclose(out, Y[:3], atol=0.05)


def test_retriever_energy_and_iterations(rng):
    Y = unit_rows(rng, 5, 6)
    est = HopfieldRetriever(beta=2.0).fit(Y)
    X = rng.standard_normal((3, 6))
    np.testing.assert_allclose(est.energy(X), [energy(Y, x, 2.0) for x in X])
    est.transform(X)
    assert est.n_iter_.shape == (3,)


def test_layer_with_explicit_projections(rng):
    Y = rng.standard_normal((6, 4))
    W = [rng.standard_normal((4, 3)), rng.standard_normal((4, 3)), rng.standard_normal((4, 2))]
    est = HopfieldLayer(beta=0.5, W_Q=W[0], W_K=W[1], W_V=W[2]).fit(Y)
    X = rng.standard_normal((2, 4))
    np.testing.assert_allclose(est.transform(X), hopfield_assoc(X, Y, ProjectionSet(*W), 0.5))


def test_lookup_estimator_needs_prototypes():
    with pytest.raises(ParameterError):
        HopfieldLookup().fit()
    with pytest.raises(ParameterError):
        HopfieldRetriever(beta=-1).fit(np.ones((2, 2)))
