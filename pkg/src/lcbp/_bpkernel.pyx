# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled sum-product sweeps over a flattened factor graph.

Layout (shared with ``_bpkernel_py``):
  fac_ptr[I]..fac_ptr[I+1]   edges of factor I; edge e joins factor I to var fac_var[e]
  val_ptr[I]                 offset of factor I's table in vals (first var fastest)
  msg_ptr[e]                 offset of the factor->variable message on edge e in msgs
  var_ptr[v]..var_ptr[v+1]   edges incident to variable v, listed in var_edges
  bel_ptr[v]                 offset of variable v's belief in a belief buffer
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, fabs, INFINITY

cnp.import_array()

ctypedef cnp.int64_t idx_t


cdef int _var_to_fac(idx_t e, idx_t v, const idx_t[::1] card, const idx_t[::1] msg_ptr,
                     const idx_t[::1] var_ptr, const idx_t[::1] var_edges,
                     const double[::1] msgs, double* out) noexcept nogil:
    # product of the messages into v from every factor except the one on edge e
    cdef idx_t c = card[v], k, a, e2
    cdef double s = 0.0
    for k in range(c):
        out[k] = 1.0
    for a in range(var_ptr[v], var_ptr[v + 1]):
        e2 = var_edges[a]
        if e2 == e:
            continue
        for k in range(c):
            out[k] *= msgs[msg_ptr[e2] + k]
    for k in range(c):
        s += out[k]
    if s <= 0.0:
        return 1
    for k in range(c):
        out[k] /= s
    return 0


cdef int _update_factor(idx_t I, const idx_t[::1] fac_ptr, const idx_t[::1] fac_var,
                        const idx_t[::1] card, const idx_t[::1] val_ptr, const double[::1] vals,
                        const idx_t[::1] msg_ptr, const idx_t[::1] var_ptr,
                        const idx_t[::1] var_edges, double[::1] msgs, double damping,
                        double* inbuf, idx_t* inoff, idx_t* state, double* newm) noexcept nogil:
    cdef idx_t e0 = fac_ptr[I], n = fac_ptr[I + 1] - fac_ptr[I]
    cdef idx_t p, q, k, off = 0, size = 1, lin, v, c
    cdef double prod, s, val
    for p in range(n):
        v = fac_var[e0 + p]
        inoff[p] = off
        if _var_to_fac(e0 + p, v, card, msg_ptr, var_ptr, var_edges, msgs, inbuf + off):
            return 1
        off += card[v]
        size *= card[v]
    for p in range(n):
        c = card[fac_var[e0 + p]]
        for k in range(c):
            newm[k] = 0.0
        for q in range(n):
            state[q] = 0
        for lin in range(size):
            val = vals[val_ptr[I] + lin]
            if val != 0.0:
                prod = val
                for q in range(n):
                    if q != p:
                        prod *= inbuf[inoff[q] + state[q]]
                newm[state[p]] += prod
            # odometer increment, first variable fastest
            for q in range(n):
                state[q] += 1
                if state[q] < card[fac_var[e0 + q]]:
                    break
                state[q] = 0
        s = 0.0
        for k in range(c):
            s += newm[k]
        if s <= 0.0:
            return 1
        if damping > 0.0:
            for k in range(c):
                newm[k] = (1.0 - damping) * newm[k] / s + damping * msgs[msg_ptr[e0 + p] + k]
            s = 0.0
            for k in range(c):
                s += newm[k]
        for k in range(c):
            msgs[msg_ptr[e0 + p] + k] = newm[k] / s
    return 0


cdef void _beliefs(idx_t nvar, const idx_t[::1] card, const idx_t[::1] msg_ptr,
                   const idx_t[::1] var_ptr, const idx_t[::1] var_edges,
                   const idx_t[::1] bel_ptr, const double[::1] msgs, double[::1] bel) noexcept nogil:
    cdef idx_t v, k, a, c, e
    cdef double s
    for v in range(nvar):
        c = card[v]
        for k in range(c):
            bel[bel_ptr[v] + k] = 1.0
        for a in range(var_ptr[v], var_ptr[v + 1]):
            e = var_edges[a]
            for k in range(c):
                bel[bel_ptr[v] + k] *= msgs[msg_ptr[e] + k]
        s = 0.0
        for k in range(c):
            s += bel[bel_ptr[v] + k]
        if s > 0.0:
            for k in range(c):
                bel[bel_ptr[v] + k] /= s


def run_bp(const idx_t[::1] fac_ptr, const idx_t[::1] fac_var, const idx_t[::1] card,
           const idx_t[::1] val_ptr, const double[::1] vals, const idx_t[::1] msg_ptr,
           const idx_t[::1] var_ptr, const idx_t[::1] var_edges, const idx_t[::1] bel_ptr,
           double[::1] msgs, double tol, long max_iter, double damping):
    """Sweep until the beliefs move less than ``tol``; returns (status, converged, iterations, delta).

    status is 1 if some message or incoming product lost all support.
    """
    cdef idx_t nfac = fac_ptr.shape[0] - 1, nvar = card.shape[0]
    cdef idx_t maxn = 0, maxoff = 0, maxc = 1, I, n, off, p, k
    cdef long it = 0
    cdef int status = 0, converged = 0
    cdef double delta = INFINITY, d
    for I in range(nfac):
        n = fac_ptr[I + 1] - fac_ptr[I]
        off = 0
        for p in range(n):
            off += card[fac_var[fac_ptr[I] + p]]
            if card[fac_var[fac_ptr[I] + p]] > maxc:
                maxc = card[fac_var[fac_ptr[I] + p]]
        if n > maxn:
            maxn = n
        if off > maxoff:
            maxoff = off
    cdef double[::1] inbuf = np.empty(maxoff + 1)
    cdef idx_t[::1] inoff = np.empty(maxn + 1, dtype=np.int64)
    cdef idx_t[::1] state = np.empty(maxn + 1, dtype=np.int64)
    cdef double[::1] newm = np.empty(maxc)
    cdef idx_t nbel = bel_ptr[nvar] if nvar > 0 else 0
    cdef double[::1] bel = np.empty(nbel + 1)
    cdef double[::1] old = np.empty(nbel + 1)
    with nogil:
        _beliefs(nvar, card, msg_ptr, var_ptr, var_edges, bel_ptr, msgs, old)
        while it < max_iter:
            for I in range(nfac):
                if _update_factor(I, fac_ptr, fac_var, card, val_ptr, vals, msg_ptr, var_ptr,
                                  var_edges, msgs, damping, &inbuf[0], &inoff[0], &state[0], &newm[0]):
                    status = 1
                    break
            if status:
                break
            it += 1
            _beliefs(nvar, card, msg_ptr, var_ptr, var_edges, bel_ptr, msgs, bel)
            delta = 0.0
            for k in range(nbel):
                d = fabs(bel[k] - old[k])
                if d > delta:
                    delta = d
                old[k] = bel[k]
            if delta < tol:
                converged = 1
                break
    return status, bool(converged), it, delta


def bethe_from_messages(const idx_t[::1] fac_ptr, const idx_t[::1] fac_var, const idx_t[::1] card,
                        const idx_t[::1] val_ptr, const double[::1] vals, const idx_t[::1] msg_ptr,
                        const idx_t[::1] var_ptr, const idx_t[::1] var_edges,
                        const idx_t[::1] bel_ptr, const double[::1] msgs):
    """Bethe free energy of the beliefs induced by a message set (+inf on empty support)."""
    cdef idx_t nfac = fac_ptr.shape[0] - 1, nvar = card.shape[0]
    cdef idx_t I, n, p, q, k, lin, size, off, e0, v, c, maxn = 0, maxoff = 0
    for I in range(nfac):
        n = fac_ptr[I + 1] - fac_ptr[I]
        off = 0
        for p in range(n):
            off += card[fac_var[fac_ptr[I] + p]]
        if n > maxn:
            maxn = n
        if off > maxoff:
            maxoff = off
    cdef double[::1] inbuf = np.empty(maxoff + 1)
    cdef idx_t[::1] inoff = np.empty(maxn + 1, dtype=np.int64)
    cdef idx_t[::1] state = np.empty(maxn + 1, dtype=np.int64)
    cdef idx_t nbel = bel_ptr[nvar] if nvar > 0 else 0
    cdef double[::1] bel = np.empty(nbel + 1)
    cdef double F = 0.0, z, b, val, prod, s
    with nogil:
        for I in range(nfac):
            e0 = fac_ptr[I]
            n = fac_ptr[I + 1] - e0
            off = 0
            size = 1
            for p in range(n):
                v = fac_var[e0 + p]
                inoff[p] = off
                if _var_to_fac(e0 + p, v, card, msg_ptr, var_ptr, var_edges, msgs, &inbuf[off]):
                    F = INFINITY
                    break
                off += card[v]
                size *= card[v]
            if F == INFINITY:
                break
            z = 0.0
            for q in range(n):
                state[q] = 0
            for lin in range(size):
                prod = vals[val_ptr[I] + lin]
                for q in range(n):
                    prod *= inbuf[inoff[q] + state[q]]
                z += prod
                for q in range(n):
                    state[q] += 1
                    if state[q] < card[fac_var[e0 + q]]:
                        break
                    state[q] = 0
            if z <= 0.0:
                F = INFINITY
                break
            s = 0.0
            for q in range(n):
                state[q] = 0
            for lin in range(size):
                val = vals[val_ptr[I] + lin]
                prod = val
                for q in range(n):
                    prod *= inbuf[inoff[q] + state[q]]
                b = prod / z
                if b > 0.0:
                    s += b * log(b / val)
                for q in range(n):
                    state[q] += 1
                    if state[q] < card[fac_var[e0 + q]]:
                        break
                    state[q] = 0
            F += s
        if F != INFINITY:
            _beliefs(nvar, card, msg_ptr, var_ptr, var_edges, bel_ptr, msgs, bel)
            for v in range(nvar):
                n = var_ptr[v + 1] - var_ptr[v]
                if n == 1:
                    continue
                c = card[v]
                s = 0.0
                if n == 0:
                    # no incoming messages: uniform belief
                    for k in range(c):
                        s += (1.0 / c) * log(1.0 / c)
                else:
                    for k in range(c):
                        b = bel[bel_ptr[v] + k]
                        if b > 0.0:
                            s += b * log(b)
                F += (1 - n) * s
    return F
