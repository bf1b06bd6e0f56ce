"""Dense float64 kernels: matrix product, tempered softmax, log-sum-exp, cosine.

Everything here is a pure function over numpy arrays. Reductions run in a
fixed order so results are bit-stable on a given platform.
"""

import numpy as np

from .exceptions import DegenerateInputError, ParameterError, ShapeError
from .validation import check_beta, check_matrix, check_vector


def matmul(a, b):
    """Matrix product with an explicit shape check.

    Raises:
        ShapeError: if ``a.shape[1] != b.shape[0]``.
    """
    a = check_matrix(a, "a")
    b = check_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def row_softmax(m, beta=1.0):
    """Softmax of ``beta * m`` along each row, max-shifted for stability."""
    beta = check_beta(beta)
    m = check_matrix(m, "m")
    w = m * beta
    w -= w.max(axis=1, keepdims=True)
    np.exp(w, out=w)
    w /= w.sum(axis=1, keepdims=True)
    return w


def logsumexp(v, beta=1.0):
    """Tempered log-sum-exp ``(1/beta) * log(sum(exp(beta * v)))``."""
    beta = check_beta(beta)
    v = check_vector(v, "v")
    if v.size == 0:
        raise ParameterError("logsumexp of an empty vector")
    vmax = v.max()
    return float(vmax + np.log(np.exp(beta * (v - vmax)).sum()) / beta)


def cosine_sim(a, b):
    """Cosine similarity clamped to [-1, 1].

    Raises:
        DegenerateInputError: if either vector has zero norm.
    """
    a = check_vector(a, "a")
    b = check_vector(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"cosine_sim operands differ: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine similarity of a zero-norm vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))
