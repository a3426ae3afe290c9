"""Numeric kernels shared by the serial and the epoch-parallel code paths.

Every kernel treats rows independently and sums coordinates in a fixed
left-to-right order, so evaluating one point on its own gives bit-for-bit
the same numbers as evaluating it inside a block. Serial equivalence checks
rely on that.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True, inline="always")
def _nearest_row(x, C, k0, k1):
    best = np.inf
    arg = -1
    dim = x.shape[0]
    for j in range(k0, k1):
        s = 0.0
        for d in range(dim):
            t = x[d] - C[j, d]
            s += t * t
        if s < best:
            best = s
            arg = j
    return best, arg


@njit(cache=True, nogil=True)
def nearest_t(X, CT, k):
    """:func:`nearest` against the first ``k`` columns of the transposed centers ``CT`` (D x cap).

    Looping over centers innermost lets the compiler vectorize across
    centers while each distance still sums its coordinates in order, so the
    values match :func:`nearest` exactly.
    """
    n, dim = X.shape
    best = np.empty(n)
    arg = np.empty(n, np.int64)
    s = np.empty(k)
    for i in range(n):
        s[:] = 0.0
        for d in range(dim):
            x = X[i, d]
            for j in range(k):
                t = x - CT[d, j]
                s[j] += t * t
        b = np.inf
        a = -1
        for j in range(k):
            if s[j] < b:
                b = s[j]
                a = j
        best[i] = b
        arg[i] = a
    return best, arg


@njit(cache=True, nogil=True)
def nearest(X, C):
    """Squared distance to, and index of, the nearest row of ``C`` for each row of ``X``.

    Empty ``C`` gives ``inf`` and ``-1``. Ties go to the lowest index.
    """
    return nearest_t(X, np.ascontiguousarray(C.T), C.shape[0])


@njit(cache=True, nogil=True)
def nearest_rowwise(X, C):
    """Same values as :func:`nearest`, one center at a time."""
    n = X.shape[0]
    best = np.empty(n)
    arg = np.empty(n, np.int64)
    for i in range(n):
        best[i], arg[i] = _nearest_row(X[i], C, 0, C.shape[0])
    return best, arg


@njit(cache=True, nogil=True)
def sq_norms(X):
    n, dim = X.shape
    out = np.empty(n)
    for i in range(n):
        s = 0.0
        for d in range(dim):
            s += X[i, d] * X[i, d]
        out[i] = s
    return out


@njit(cache=True, nogil=True)
def residuals(X, Z, F):
    """``X - Z @ F`` computed by subtracting active features in index order."""
    n, dim = X.shape
    k = F.shape[0]
    R = X.copy()
    for i in range(n):
        for j in range(k):
            if Z[i, j]:
                for d in range(dim):
                    R[i, d] -= F[j, d]
    return R


@njit(cache=True, nogil=True)
def coordinate_pass(R, Z, F, fsq, start, stop):
    """One in-place coordinate-descent sweep over features ``start..stop-1``.

    ``R`` holds the current residuals ``x - sum_j z_j f_j``. With
    ``r = x - sum_{j != k} z_j f_j`` the rule is ``z_k = 1`` iff
    ``2 r.f_k > |f_k|^2`` (ties resolve to 0). ``R`` is updated only when
    ``z_k`` flips.
    """
    n, dim = R.shape
    for i in range(n):
        for k in range(start, stop):
            on = Z[i, k] != 0
            dot = 0.0
            if on:
                for d in range(dim):
                    dot += (R[i, d] + F[k, d]) * F[k, d]
            else:
                for d in range(dim):
                    dot += R[i, d] * F[k, d]
            want = 2.0 * dot > fsq[k]
            if want and not on:
                for d in range(dim):
                    R[i, d] -= F[k, d]
                Z[i, k] = 1
            elif on and not want:
                for d in range(dim):
                    R[i, d] += F[k, d]
                Z[i, k] = 0


@njit(cache=True, nogil=True)
def dp_validate(P, C0, lam2):
    """Validate proposed centers ``P`` in row order against ``C0`` plus earlier acceptances.

    Returns ``(centers, refs, accepted)``; ``refs`` index ``centers``.
    """
    m, dim = P.shape
    k = C0.shape[0]
    C = np.empty((k + m, dim))
    C[:k] = C0
    refs = np.empty(m, np.int64)
    ok = np.zeros(m, np.bool_)
    for n in range(m):
        best, arg = _nearest_row(P[n], C, 0, k)
        if best <= lam2:
            refs[n] = arg
        else:
            C[k] = P[n]
            refs[n] = k
            ok[n] = True
            k += 1
    return C[:k].copy(), refs, ok


@njit(cache=True, nogil=True)
def ofl_validate(P, sq_prev, nearest_prev, u, C0, n_global, lam2, two_draw):
    """Master pass of OCC OFL over one epoch, proposals in row order.

    ``sq_prev``/``nearest_prev`` describe the nearest global facility seen at
    analysis time and ``C0`` holds facilities already opened this epoch.
    Returns ``(new_centers, accepted, labels)`` with ``new_centers`` starting
    with ``C0``; labels index global facilities followed by the new ones.
    """
    m, dim = P.shape
    k = C0.shape[0]
    C = np.empty((k + m, dim))
    C[:k] = C0
    ok = np.zeros(m, np.bool_)
    labels = np.empty(m, np.int64)
    for n in range(m):
        best, arg = _nearest_row(P[n], C, 0, k)
        if best < sq_prev[n]:
            d_star = best
            label = n_global + arg
        else:
            d_star = sq_prev[n]
            label = nearest_prev[n]
        p_star = min(d_star, lam2) / lam2
        if two_draw:
            accept = u[n] < p_star / (min(sq_prev[n], lam2) / lam2)
        else:
            accept = u[n] < p_star
        if accept:
            C[k] = P[n]
            label = n_global + k
            ok[n] = True
            k += 1
        labels[n] = label
    return C[:k].copy(), ok, labels


@njit(cache=True, nogil=True)
def bp_validate(P, lam2):
    """Validate proposed features in row order against the ones accepted before them.

    Returns ``(features, patches, accepted)``; row ``n`` of ``patches`` holds
    proposal ``n``'s weights over ``features``.
    """
    m, dim = P.shape
    F = np.empty((m, dim))
    fsq = np.empty(m)
    patches = np.zeros((m, m), np.uint8)
    ok = np.zeros(m, np.bool_)
    k = 0
    for n in range(m):
        r = P[n:n + 1].copy()
        z = np.zeros((1, k), np.uint8)
        coordinate_pass(r, z, F, fsq, 0, k)
        patches[n, :k] = z[0]
        norm = sq_norms(r)[0]
        if norm > lam2:
            F[k] = r[0]
            fsq[k] = sq_norms(r)[0]
            patches[n, k] = 1
            ok[n] = True
            k += 1
    return F[:k].copy(), patches[:, :k].copy(), ok
