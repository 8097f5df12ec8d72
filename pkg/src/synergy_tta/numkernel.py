"""Dense linear-algebra primitives: SVD, rank, nuclear norm and ridge solves."""

import numpy as np

from .errors import InvalidMatrix, SingularGram

RANK_REL_TOL = 1e-3
COND_LIMIT = 1e10
RIDGE_SCALE = 1e-6
RIDGE_DOUBLINGS = 8


def as_matrix(m):
    """Return ``m`` as a finite 2-D float64 array or raise InvalidMatrix."""
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidMatrix(f"expected a 2-D matrix, got shape {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise InvalidMatrix("matrix has non-finite entries")
    return arr


def svd(m):
    """Thin SVD of ``m``.

    Returns:
      (s, u, vt) with ``s`` sorted descending and ``u @ diag(s) @ vt == m``.
    """
    arr = as_matrix(m)
    if min(arr.shape) < 1:
        raise InvalidMatrix("matrix must have at least one row and column")
    u, s, vt = np.linalg.svd(arr, full_matrices=False)
    return s, u, vt


def singular_values(m):
    arr = as_matrix(m)
    if arr.size == 0:
        return np.zeros(0)
    return np.linalg.svd(arr, compute_uv=False)


def effective_rank(m, rel_tol=RANK_REL_TOL):
    """Number of singular values above ``rel_tol * sigma_max``."""
    if not 0.0 < rel_tol < 1.0:
        raise ValueError("rel_tol must lie in (0, 1)")
    s = singular_values(m)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > rel_tol * s[0]))


def nuclear_norm(m):
    return float(np.sum(singular_values(m)))


def stable_rank(m):
    """Nuclear-norm rank proxy ``||m||_* / sigma_max`` (0 for the zero matrix)."""
    s = singular_values(m)
    if s.size == 0 or s[0] == 0.0:
        return 0.0
    return float(np.sum(s) / s[0])


def estimate_rank(m, method="svd", rel_tol=RANK_REL_TOL):
    """Rank estimate used by feature similarity.

    ``method="svd"`` counts singular values above the relative threshold;
    ``method="nuclear"`` returns the (real-valued) stable-rank proxy.
    """
    if method == "svd":
        return effective_rank(m, rel_tol)
    if method == "nuclear":
        return stable_rank(m)
    raise ValueError(f"unknown rank method {method!r}")


def regularized_solve_ones(g, ridge=0.0):
    """Solve ``(g + ridge*I) x = 1`` with ridge escalation on ill-conditioning.

    The first attempt uses the given ``ridge``. When the condition number
    exceeds ``COND_LIMIT`` the ridge restarts at ``1e-6 * trace(g) / K`` and
    doubles up to eight times before giving up with SingularGram.
    """
    g = as_matrix(g)
    k = g.shape[0]
    if g.shape != (k, k) or k == 0:
        raise InvalidMatrix(f"expected a non-empty square matrix, got {g.shape}")
    if not np.allclose(g, g.T, rtol=0.0, atol=1e-9):
        raise InvalidMatrix("matrix is not symmetric")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    ones = np.ones(k)
    eye = np.eye(k)

    base = RIDGE_SCALE * np.trace(g) / k
    if base <= 0.0:
        base = RIDGE_SCALE
    ridges = [ridge] + [max(ridge, base * 2.0**i) for i in range(RIDGE_DOUBLINGS + 1)]
    for r in ridges:
        a = g + r * eye
        if np.linalg.cond(a) > COND_LIMIT:
            continue
        diag = np.diag(a)
        off = a[~np.eye(k, dtype=bool)]
        if np.all(diag == diag[0]) and np.all(off == (off[0] if k > 1 else 0.0)):
            # exchangeable matrix: 1 is an eigenvector, so skip LU rounding
            return np.full(k, 1.0 / (diag[0] + (k - 1) * (off[0] if k > 1 else 0.0)))
        try:
            x = np.linalg.solve(a, ones)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(x)):
            return x
    raise SingularGram("Gram matrix stays singular after ridge escalation")
