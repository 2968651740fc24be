"""Pure-Python walk kernels. Mirrors ``_walkcore.pyx`` operation for operation
so both backends emit identical output for the same seed."""

import numpy as np

from .rng import GOLDEN, INV_2_53, MASK64, mix64, stream_state

BACKEND = "python"


def _neighbor_sets(nbr_indptr, nbrs):
    p = nbr_indptr.tolist()
    n = nbrs.tolist()
    return [frozenset(n[p[i]:p[i + 1]]) for i in range(len(p) - 1)]


def walk_corpus(indptr, rel, dst, nbr_indptr, nbrs, membership, starts,
                walks_per_entity, length, alpha, beta, seed):
    """Return ``(n_starts * walks_per_entity, 2 * length + 1)`` int64 array.

    Even columns hold entity ids, odd columns relation ids.
    """
    ip = indptr.tolist()
    rl = rel.tolist()
    ds = dst.tolist()
    mem = membership.tolist()
    near = _neighbor_sets(nbr_indptr, nbrs)
    width = 2 * length + 1
    out = np.empty((len(starts) * walks_per_entity, width), dtype=np.int64)
    row = 0
    a_far, a_near = alpha, 1.0 - alpha
    b_cross, b_same = beta, 1.0 - beta
    for start in starts.tolist():
        state = stream_state(seed, start)
        for _ in range(walks_per_entity):
            seq = [start]
            t = -1
            v = start
            for _ in range(length):
                lo, hi = ip[v], ip[v + 1]
                deg = hi - lo
                if deg == 0:
                    raise ValueError(f"dead end at entity {v}")
                state = (state + GOLDEN) & MASK64
                u = (mix64(state) >> 11) * INV_2_53
                if t < 0:
                    j = lo + int(u * deg)
                    if j >= hi:
                        j = hi - 1
                else:
                    nt = near[t]
                    mt = mem[t]
                    masses = []
                    z = 0.0
                    for k in range(lo, hi):
                        x = ds[k]
                        if x == t or x in nt:
                            m = a_near
                        else:
                            m = a_far
                        m = m * (b_cross if mem[x] != mt else b_same)
                        masses.append(m)
                        z += m
                    thr = u * z
                    acc = 0.0
                    j = hi - 1
                    for k in range(deg):
                        acc += masses[k]
                        if thr < acc:
                            j = lo + k
                            break
                x = ds[j]
                seq.append(rl[j])
                seq.append(x)
                t = v
                v = x
            out[row] = seq
            row += 1
    return out


def restart_walk_collect(nbr_indptr, nbrs, eligible, taken, members, quota,
                         damping, stall, max_steps, seed, key):
    """Random walk with restart to its start node. Starts are drawn
    uniformly from ``members``; a fresh start is drawn after ``stall``
    steps without a new entity. Visited nodes with ``eligible`` set and
    ``taken`` clear are collected (and marked in ``taken``, in place) until
    ``quota`` are found or ``max_steps`` is exhausted.

    Returns ``(collected int64 array, steps taken)``.
    """
    ip = nbr_indptr.tolist()
    nb = nbrs.tolist()
    ok = eligible.tolist()
    tk = bytearray(taken.tobytes())
    mem = members.tolist()
    n_mem = len(mem)
    got = []
    state = stream_state(seed, key)
    steps = 0
    since = stall
    start = v = -1
    while len(got) < quota and steps < max_steps:
        if since >= stall:
            state = (state + GOLDEN) & MASK64
            i = int(((mix64(state) >> 11) * INV_2_53) * n_mem)
            start = v = mem[i if i < n_mem else n_mem - 1]
        else:
            state = (state + GOLDEN) & MASK64
            u = (mix64(state) >> 11) * INV_2_53
            lo, hi = ip[v], ip[v + 1]
            if u >= damping or hi == lo:
                v = start
            else:
                k = lo + int(u / damping * (hi - lo))
                v = nb[k if k < hi else hi - 1]
        steps += 1
        if ok[v] and not tk[v]:
            tk[v] = 1
            got.append(v)
            since = 0
        else:
            since += 1
    taken[:] = np.frombuffer(bytes(tk), dtype=np.uint8)
    return np.array(got, dtype=np.int64), steps
