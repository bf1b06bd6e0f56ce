"""Modern Hopfield layers.

Orientation convention used throughout: stored patterns ``Y`` are rows
(N x d), state patterns ``R`` are rows (M x d_r), and the softmax always runs
over the stored-pattern axis so every output has one row per state pattern.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ParameterError, ShapeError
from .linalg import logsumexp, row_softmax
from .validation import check_beta, check_matrix, check_positive_int, check_vector

DEFAULT_MAX_ITERS = 16
DEFAULT_TOL = 1e-6


@dataclass(frozen=True)
class ProjectionSet:
    """Query/key/value projections of one Hopfield layer."""

    W_Q: np.ndarray
    W_K: np.ndarray
    W_V: np.ndarray

    @classmethod
    def identity(cls, d):
        eye = np.eye(d)
        return cls(eye, eye.copy(), eye.copy())

    def check(self, d_r, d_y):
        if self.W_Q.shape[0] != d_r:
            raise ShapeError(f"W_Q {self.W_Q.shape} does not accept states of width {d_r}")
        if self.W_K.shape[0] != d_y or self.W_V.shape[0] != d_y:
            raise ShapeError(
                f"W_K {self.W_K.shape} / W_V {self.W_V.shape} do not accept patterns of width {d_y}"
            )
        if self.W_Q.shape[1] != self.W_K.shape[1]:
            raise ShapeError(f"W_Q {self.W_Q.shape} and W_K {self.W_K.shape} disagree on d_k")


def _bank(Y):
    Y = check_matrix(Y, "Y")
    if Y.shape[0] < 1:
        raise ShapeError("pattern bank must hold at least one pattern")
    return Y


def _state(Y, r):
    r = check_vector(r, "r")
    if r.shape[0] != Y.shape[1]:
        raise ShapeError(f"state of length {r.shape[0]} vs patterns of width {Y.shape[1]}")
    return r


def energy(Y, r, beta):
    """Hopfield energy ``-lse(beta, Y r) + 0.5 |r|^2`` (additive constant taken as 0)."""
    Y = _bank(Y)
    r = _state(Y, r)
    return -logsumexp(Y @ r, beta) + 0.5 * float(r @ r)


def separation_weights(Y, r, beta):
    """Softmax weights over stored patterns for one state."""
    Y = _bank(Y)
    r = _state(Y, r)
    return row_softmax((Y @ r)[None, :], beta)[0]


def retrieve_step(Y, r, beta):
    """One update ``r' = Y^T softmax(beta Y r)``: a convex combination of stored rows."""
    Y = _bank(Y)
    return Y.T @ separation_weights(Y, r, beta)


def retrieve(Y, r0, beta, max_iters=DEFAULT_MAX_ITERS, tol=DEFAULT_TOL):
    """Iterate :func:`retrieve_step` to a fixed point.

    Returns:
        (state, iters, energies) where ``energies[0]`` is the energy of ``r0``
        and ``energies[k]`` the energy after ``k`` updates.
    """
    max_iters = check_positive_int(max_iters, "max_iters")
    if not tol > 0:
        raise ParameterError(f"tol must be > 0, got {tol}")
    Y = _bank(Y)
    r = _state(Y, r0)
    beta = check_beta(beta)
    energies = [energy(Y, r, beta)]
    iters = 0
    for iters in range(1, max_iters + 1):
        r_next = retrieve_step(Y, r, beta)
        energies.append(energy(Y, r_next, beta))
        converged = np.max(np.abs(r_next - r)) < tol
        r = r_next
        if converged:
            break
    return r, iters, energies


def _assoc_shapes(R, Y, proj):
    R = check_matrix(R, "R")
    Y = _bank(Y)
    if R.shape[0] < 1:
        raise ShapeError("state batch must hold at least one pattern")
    proj = ProjectionSet(
        check_matrix(proj.W_Q, "W_Q"), check_matrix(proj.W_K, "W_K"), check_matrix(proj.W_V, "W_V")
    )
    proj.check(R.shape[1], Y.shape[1])
    return R, Y, proj


def hopfield_assoc(R, Y, proj, beta, return_attention=False):
    """Projected association: ``softmax(beta (R W_Q)(Y W_K)^T) (Y W_V)``.

    Args:
        R: state patterns, M x d_r.
        Y: stored patterns, N x d_y.
        proj: :class:`ProjectionSet` with W_Q (d_r x d_k), W_K (d_y x d_k),
            W_V (d_y x d_v), or ``None`` for unprojected retrieval
            ``softmax(beta R Y^T) Y``.
        beta: inverse temperature.
        return_attention: also return the M x N association matrix.
    """
    if proj is None:
        R = check_matrix(R, "R")
        Y = _bank(Y)
        if R.shape[1] != Y.shape[1]:
            raise ShapeError(f"unprojected retrieval needs equal widths, got {R.shape} and {Y.shape}")
        A = row_softmax(R @ Y.T, beta)
        return (A @ Y, A) if return_attention else A @ Y
    R, Y, proj = _assoc_shapes(R, Y, proj)
    Q = R @ proj.W_Q
    K = Y @ proj.W_K
    V = Y @ proj.W_V
    A = row_softmax(Q @ K.T, beta)
    Z = A @ V
    if return_attention:
        return Z, A
    return Z


@dataclass
class AssocGrads:
    R: np.ndarray
    Y: np.ndarray
    W_Q: np.ndarray
    W_K: np.ndarray
    W_V: np.ndarray

    def as_dict(self):
        return {"R": self.R, "Y": self.Y, "W_Q": self.W_Q, "W_K": self.W_K, "W_V": self.W_V}


def hopfield_assoc_vjp(R, Y, proj, beta, upstream):
    """Vector-Jacobian products of :func:`hopfield_assoc` for all five operands."""
    R, Y, proj = _assoc_shapes(R, Y, proj)
    beta = check_beta(beta)
    Q = R @ proj.W_Q
    K = Y @ proj.W_K
    V = Y @ proj.W_V
    A = row_softmax(Q @ K.T, beta)
    G = check_matrix(upstream, "upstream")
    if G.shape != (R.shape[0], V.shape[1]):
        raise ShapeError(f"upstream {G.shape} does not match output {(R.shape[0], V.shape[1])}")

    dA = G @ V.T
    dV = A.T @ G
    # row-wise softmax Jacobian (diag(a) - a a^T) applied to dA
    dL = A * (dA - np.sum(dA * A, axis=1, keepdims=True))
    dQ = beta * dL @ K
    dK = beta * dL.T @ Q
    return AssocGrads(
        R=dQ @ proj.W_Q.T,
        Y=dK @ proj.W_K.T + dV @ proj.W_V.T,
        W_Q=R.T @ dQ,
        W_K=Y.T @ dK,
        W_V=Y.T @ dV,
    )


def hopfield_pooling(Y, query, W_K, W_V, beta):
    """A single learnable query attends over the bank; returns 1 x d_v."""
    Y = _bank(Y)
    query = check_matrix(query, "query")
    if query.shape[0] != 1:
        raise ShapeError(f"pooling query must be 1 x d_k, got {query.shape}")
    W_K = check_matrix(W_K, "W_K")
    W_V = check_matrix(W_V, "W_V")
    if W_K.shape[0] != Y.shape[1] or W_V.shape[0] != Y.shape[1]:
        raise ShapeError(f"W_K {W_K.shape} / W_V {W_V.shape} vs patterns of width {Y.shape[1]}")
    if query.shape[1] != W_K.shape[1]:
        raise ShapeError(f"query {query.shape} vs W_K {W_K.shape}")
    A = row_softmax(query @ (Y @ W_K).T, beta)
    return A @ (Y @ W_V)


def hopfield_lookup(R, W_K, W_V, beta):
    """Lookup against learnable prototypes: ``softmax(beta R W_K^T) W_V``.

    The stored patterns are the prototype rows themselves; no external bank
    is involved.
    """
    R = check_matrix(R, "R")
    W_K = check_matrix(W_K, "W_K")
    W_V = check_matrix(W_V, "W_V")
    if R.shape[1] != W_K.shape[1]:
        raise ShapeError(f"states {R.shape} vs prototypes W_K {W_K.shape}")
    if W_K.shape[0] != W_V.shape[0]:
        raise ShapeError(f"W_K {W_K.shape} and W_V {W_V.shape} disagree on prototype count")
    return row_softmax(R @ W_K.T, beta) @ W_V


class HopfieldRetriever(TransformerMixin, BaseEstimator):
    """Associative memory over the rows passed to :meth:`fit`.

    ``transform`` completes each row of ``X`` against the stored patterns by
    iterating the Hopfield update.

    Parameters
    ----------
    beta : float, default=1.0
        Inverse temperature.
    max_iters : int, default=16
    tol : float, default=1e-6
        Sup-norm change below which iteration stops.
    """

    def __init__(self, beta=1.0, max_iters=DEFAULT_MAX_ITERS, tol=DEFAULT_TOL):
        self.beta = beta
        self.max_iters = max_iters
        self.tol = tol

    def fit(self, X, y=None):
        check_beta(self.beta)
        self.patterns_ = check_array(X, dtype=np.float64)
        self.n_features_in_ = self.patterns_.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "patterns_")
        X = check_array(X, dtype=np.float64)
        out = np.empty_like(X)
        self.n_iter_ = np.zeros(X.shape[0], dtype=int)
        for i, r in enumerate(X):
            out[i], self.n_iter_[i], _ = retrieve(self.patterns_, r, self.beta, self.max_iters, self.tol)
        return out

    def energy(self, X):
        """Energy of every row of ``X`` under the stored patterns."""
        check_is_fitted(self, "patterns_")
        X = check_array(X, dtype=np.float64)
        return np.array([energy(self.patterns_, r, self.beta) for r in X])


class HopfieldLayer(TransformerMixin, BaseEstimator):
    """Projected Hopfield association with the stored patterns given to ``fit``.

    With ``W_Q``, ``W_K`` and ``W_V`` left as ``None`` the projections are
    identities of the pattern width.
    """

    def __init__(self, beta=1.0, W_Q=None, W_K=None, W_V=None):
        self.beta = beta
        self.W_Q = W_Q
        self.W_K = W_K
        self.W_V = W_V

    def _projections(self, d):
        eye = np.eye(d)
        return ProjectionSet(
            eye if self.W_Q is None else np.asarray(self.W_Q, dtype=np.float64),
            eye if self.W_K is None else np.asarray(self.W_K, dtype=np.float64),
            eye if self.W_V is None else np.asarray(self.W_V, dtype=np.float64),
        )

    def fit(self, X, y=None):
        check_beta(self.beta)
        self.patterns_ = check_array(X, dtype=np.float64)
        self.projections_ = self._projections(self.patterns_.shape[1])
        self.n_features_in_ = self.projections_.W_Q.shape[0]
        return self

    def transform(self, X):
        check_is_fitted(self, "patterns_")
        X = check_array(X, dtype=np.float64)
        return hopfield_assoc(X, self.patterns_, self.projections_, self.beta)


class HopfieldLookup(TransformerMixin, BaseEstimator):
    """Prototype lookup layer.

    ``fit(X)`` stores ``X`` as both key and value prototypes unless explicit
    ``W_K``/``W_V`` were supplied, in which case ``X`` is ignored.
    """

    def __init__(self, beta=4.0, W_K=None, W_V=None):
        self.beta = beta
        self.W_K = W_K
        self.W_V = W_V

    def fit(self, X=None, y=None):
        check_beta(self.beta)
        if self.W_K is not None:
            self.keys_ = check_array(self.W_K, dtype=np.float64)
            self.values_ = check_array(self.W_K if self.W_V is None else self.W_V, dtype=np.float64)
        else:
            if X is None:
                raise ParameterError("HopfieldLookup.fit needs X or explicit W_K")
            self.keys_ = check_array(X, dtype=np.float64)
            self.values_ = self.keys_.copy()
        self.n_features_in_ = self.keys_.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "keys_")
        X = check_array(X, dtype=np.float64)
        return hopfield_lookup(X, self.keys_, self.values_, self.beta)
