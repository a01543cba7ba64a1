# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Metropolis walk kernel.

Runs steps ``start <= t < stop`` of a walk over size-u models, updating the
state arrays in place. Candidate evaluation and accepted swaps are done in
Gram space in O(u^2).

Arrays (all C-contiguous):
    gram (p, p), ztarget (p,)          -- cross products of z and the target
    members (u,), nonmembers (p-u,)    -- current model, working order
    ginv (u, u), coef (u,)             -- inverse Gram block and coefficients
    scal (2,)                          -- [rss, running sum of tt - rss]
    counters (2,)                      -- [accepts since refresh, total accepts]
    drop_pos, add_pos, unif            -- proposal randomness, indexed t - rand_offset
    coef_acc (p,), rss_trace           -- accumulators for kept steps t >= keep_from
    dropped, added                     -- swap log indexed by t (-1 when rejected)

Returns ``(t, status)``: status 0 means the range finished, 1 means step ``t``
was not executed because the conditioning guard tripped, 2 means a refresh is
due before step ``t``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def walk(double[:, ::1] gram, double[::1] ztarget, double tt,
         cnp.int64_t[::1] members, cnp.int64_t[::1] nonmembers,
         double[:, ::1] ginv, double[::1] coef, double[::1] scal,
         cnp.int64_t[::1] counters,
         cnp.int64_t[::1] drop_pos, cnp.int64_t[::1] add_pos, double[::1] unif,
         double inv_alpha, Py_ssize_t start, Py_ssize_t stop, Py_ssize_t rand_offset,
         Py_ssize_t keep_from, double[::1] coef_acc, double[::1] rss_trace,
         cnp.int64_t[::1] dropped, cnp.int64_t[::1] added,
         Py_ssize_t refresh_every, double guard):
    cdef Py_ssize_t u = members.shape[0]
    cdef double[::1] g = np.empty(u)
    cdef double[::1] mg = np.empty(u)
    cdef double[::1] h = np.empty(u)
    cdef double[::1] col = np.empty(u)
    cdef double[::1] coef_d = np.empty(u)
    cdef double rss = scal[0]
    cdef double fitsq = scal[1]
    cdef Py_ssize_t since = counters[0]
    cdef Py_ssize_t n_acc = counters[1]
    cdef Py_ssize_t t = start
    cdef int status = 0
    cdef Py_ssize_t i, a, k, j, l, slot
    cdef cnp.int64_t old
    cdef double mii, ci, gaa, schur, rss_drop, r, rss_new, delta, acc, s, ratio
    cdef bint accept

    with nogil:
        while t < stop:
            k = t - rand_offset
            i = drop_pos[k]
            slot = add_pos[k]
            a = nonmembers[slot]
            mii = ginv[i, i]
            ci = coef[i]
            for j in range(u):
                g[j] = gram[a, members[j]]
            g[i] = 0.0
            for j in range(u):
                acc = 0.0
                for l in range(u):
                    acc = acc + ginv[j, l] * g[l]
                mg[j] = acc
                col[j] = ginv[j, i]
            ratio = mg[i] / mii
            for j in range(u):
                h[j] = mg[j] - col[j] * ratio
            h[i] = 0.0
            gaa = gram[a, a]
            s = 0.0
            for j in range(u):
                s = s + g[j] * h[j]
            schur = gaa - s
            if gaa <= 0.0 or schur <= guard * gaa:
                status = 1
                break
            ratio = ci / mii
            for j in range(u):
                coef_d[j] = coef[j] - col[j] * ratio
            coef_d[i] = 0.0
            rss_drop = rss + ci * ci / mii
            s = 0.0
            for j in range(u):
                s = s + g[j] * coef_d[j]
            r = ztarget[a] - s
            rss_new = rss_drop - r * r / schur
            if rss_new < 0.0:
                status = 1
                break
            delta = rss_new - rss
            accept = delta <= 0.0 or unif[k] < exp(-delta * inv_alpha)
            if accept:
                for j in range(u):
                    for l in range(u):
                        ginv[j, l] = ginv[j, l] - col[j] * col[l] / mii + h[j] * h[l] / schur
                for j in range(u):
                    ginv[i, j] = -h[j] / schur
                    ginv[j, i] = -h[j] / schur
                ginv[i, i] = 1.0 / schur
                for j in range(u):
                    coef[j] = coef_d[j] - h[j] * (r / schur)
                coef[i] = r / schur
                old = members[i]
                members[i] = a
                nonmembers[slot] = old
                rss = rss_new
                since += 1
                n_acc += 1
                dropped[t] = old
                added[t] = a
            else:
                dropped[t] = -1
                added[t] = -1
            if t >= keep_from:
                for j in range(u):
                    coef_acc[members[j]] += coef[j]
                fitsq = fitsq + (tt - rss)
                rss_trace[t - keep_from] = rss
            t += 1
            if accept and since >= refresh_every:
                status = 2
                break

    scal[0] = rss
    scal[1] = fitsq
    counters[0] = since
    counters[1] = n_acc
    return t, status
