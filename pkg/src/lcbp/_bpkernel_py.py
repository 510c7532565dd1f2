"""Pure-Python/numpy twin of ``_bpkernel``; same layout, same update order."""

import math

import numpy as np


def _tables(fac_ptr, fac_var, card, val_ptr, vals):
    out = []
    for I in range(len(fac_ptr) - 1):
        vs = fac_var[fac_ptr[I]:fac_ptr[I + 1]]
        shape = tuple(int(card[v]) for v in vs)
        size = math.prod(shape)
        out.append(vals[val_ptr[I]:val_ptr[I] + size].reshape(shape, order="F"))
    return out


def _var_to_fac(e, v, card, msg_ptr, var_ptr, var_edges, msgs):
    c = card[v]
    out = np.ones(c)
    for e2 in var_edges[var_ptr[v]:var_ptr[v + 1]]:
        if e2 != e:
            out *= msgs[msg_ptr[e2]:msg_ptr[e2] + c]
    s = out.sum()
    if s <= 0.0:
        return None
    return out / s


def _incoming(I, fac_ptr, fac_var, card, msg_ptr, var_ptr, var_edges, msgs):
    n = fac_ptr[I + 1] - fac_ptr[I]
    ins = []
    for p in range(n):
        e = fac_ptr[I] + p
        m = _var_to_fac(e, fac_var[e], card, msg_ptr, var_ptr, var_edges, msgs)
        if m is None:
            return None
        shape = [1] * n
        shape[p] = len(m)
        ins.append(m.reshape(shape))
    return ins


def _beliefs(card, msg_ptr, var_ptr, var_edges, bel_ptr, msgs):
    bel = np.empty(bel_ptr[-1] if len(bel_ptr) else 0)
    for v in range(len(card)):
        c = card[v]
        b = np.ones(c)
        for e in var_edges[var_ptr[v]:var_ptr[v + 1]]:
            b *= msgs[msg_ptr[e]:msg_ptr[e] + c]
        s = b.sum()
        bel[bel_ptr[v]:bel_ptr[v] + c] = b / s if s > 0 else b
    return bel


def run_bp(fac_ptr, fac_var, card, val_ptr, vals, msg_ptr, var_ptr, var_edges, bel_ptr,
           msgs, tol, max_iter, damping):
    tables = _tables(fac_ptr, fac_var, card, val_ptr, vals)
    old = _beliefs(card, msg_ptr, var_ptr, var_edges, bel_ptr, msgs)
    delta = math.inf
    it = 0
    while it < max_iter:
        for I, psi in enumerate(tables):
            ins = _incoming(I, fac_ptr, fac_var, card, msg_ptr, var_ptr, var_edges, msgs)
            if ins is None:
                return 1, False, it, delta
            n = len(ins)
            for p in range(n):
                prod = psi
                for q in range(n):
                    if q != p:
                        prod = prod * ins[q]
                new = np.broadcast_to(prod, psi.shape).sum(axis=tuple(q for q in range(n) if q != p))
                s = new.sum()
                if s <= 0.0:
                    return 1, False, it, delta
                e = fac_ptr[I] + p
                sl = slice(msg_ptr[e], msg_ptr[e] + len(new))
                if damping > 0.0:
                    new = (1.0 - damping) * new / s + damping * msgs[sl]
                    s = new.sum()
                msgs[sl] = new / s
        it += 1
        bel = _beliefs(card, msg_ptr, var_ptr, var_edges, bel_ptr, msgs)
        delta = float(np.max(np.abs(bel - old))) if len(bel) else 0.0
        old = bel
        if delta < tol:
            return 0, True, it, delta
    return 0, False, it, delta


def bethe_from_messages(fac_ptr, fac_var, card, val_ptr, vals, msg_ptr, var_ptr, var_edges,
                        bel_ptr, msgs):
    tables = _tables(fac_ptr, fac_var, card, val_ptr, vals)
    F = 0.0
    for I, psi in enumerate(tables):
        ins = _incoming(I, fac_ptr, fac_var, card, msg_ptr, var_ptr, var_edges, msgs)
        if ins is None:
            return math.inf
        b = psi
        for m in ins:
            b = b * m
        z = b.sum()
        if z <= 0.0:
            return math.inf
        b = b / z
        pos = b > 0
        F += float(np.sum(b[pos] * np.log(b[pos] / np.broadcast_to(psi, b.shape)[pos])))
    bel = _beliefs(card, msg_ptr, var_ptr, var_edges, bel_ptr, msgs)
    for v in range(len(card)):
        n = var_ptr[v + 1] - var_ptr[v]
        if n == 1:
            continue
        b = bel[bel_ptr[v]:bel_ptr[v] + card[v]]
        if n == 0:
            b = np.full(card[v], 1.0 / card[v])
        b = b[b > 0]
        F += (1 - n) * float(np.sum(b * np.log(b)))
    return F
