"""Pure-Python Metropolis walk kernel (fallback for ``ewinfer._walk``).

Same algorithm, argument layout and return codes as the Cython kernel; see
``_walk.pyx`` for the contract.
"""
import math

import numpy as np

DONE = 0
NEEDS_SLOW_STEP = 1
NEEDS_REFRESH = 2


def walk(gram, ztarget, tt, members, nonmembers, ginv, coef, scal, counters,
         drop_pos, add_pos, unif, inv_alpha, start, stop, rand_offset,
         keep_from, coef_acc, rss_trace, dropped, added,
         refresh_every, guard):
    u = members.shape[0]
    rss = scal[0]
    fitsq = scal[1]
    since = counters[0]
    n_acc = counters[1]
    t = start
    status = DONE
    while t < stop:
        k = t - rand_offset
        i = drop_pos[k]
        a = nonmembers[add_pos[k]]
        mii = ginv[i, i]
        ci = coef[i]
        g = gram[a, members]
        g[i] = 0.0
        mg = ginv @ g
        col = ginv[:, i]
        h = mg - col * (mg[i] / mii)
        h[i] = 0.0
        gaa = gram[a, a]
        schur = gaa - g @ h
        if gaa <= 0.0 or schur <= guard * gaa:
            status = NEEDS_SLOW_STEP
            break
        coef_d = coef - col * (ci / mii)
        coef_d[i] = 0.0
        rss_drop = rss + ci * ci / mii
        r = ztarget[a] - g @ coef_d
        rss_new = rss_drop - r * r / schur
        if rss_new < 0.0:
            status = NEEDS_SLOW_STEP
            break
        delta = rss_new - rss
        accept = delta <= 0.0 or unif[k] < math.exp(-delta * inv_alpha)
        if accept:
            col = col.copy()
            ginv -= np.outer(col, col) / mii
            ginv += np.outer(h, h) / schur
            ginv[i, :] = -h / schur
            ginv[:, i] = -h / schur
            ginv[i, i] = 1.0 / schur
            coef[:] = coef_d - h * (r / schur)
            coef[i] = r / schur
            old = members[i]
            members[i] = a
            nonmembers[add_pos[k]] = old
            rss = rss_new
            since += 1
            n_acc += 1
            dropped[t] = old
            added[t] = a
        else:
            dropped[t] = -1
            added[t] = -1
        if t >= keep_from:
            coef_acc[members] += coef
            fitsq += tt - rss
            rss_trace[t - keep_from] = rss
        t += 1
        if accept and since >= refresh_every:
            status = NEEDS_REFRESH
            break
    scal[0] = rss
    scal[1] = fitsq
    counters[0] = since
    counters[1] = n_acc
    return t, status
