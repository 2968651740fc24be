# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled walk kernels. Same arithmetic, same order as ``_walk_py``."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t, int8_t, uint8_t, uint64_t
from libc.stdlib cimport malloc, free

cnp.import_array()

BACKEND = "cython"

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef double INV_2_53 = 1.0 / 9007199254740992.0


cdef inline uint64_t mix64(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline uint64_t stream_state(uint64_t seed, uint64_t key) nogil:
    return mix64(seed ^ mix64(key + GOLDEN))


cdef inline double next_uniform(uint64_t* state) nogil:
    state[0] = state[0] + GOLDEN
    return <double>(mix64(state[0]) >> 11) * INV_2_53


cdef inline bint is_neighbor(const int64_t[::1] nip, const int64_t[::1] nb,
                             int64_t t, int64_t x) nogil:
    cdef int64_t lo = nip[t], hi = nip[t + 1], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if nb[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo < nip[t + 1] and nb[lo] == x


def walk_corpus(const int64_t[::1] indptr, const int64_t[::1] rel, const int64_t[::1] dst,
                const int64_t[::1] nbr_indptr, const int64_t[::1] nbrs,
                const int8_t[::1] membership, const int64_t[::1] starts,
                int walks_per_entity, int length, double alpha, double beta,
                uint64_t seed):
    cdef Py_ssize_t n_rows = starts.shape[0] * walks_per_entity
    cdef int width = 2 * length + 1
    out_arr = np.empty((n_rows, width), dtype=np.int64)
    cdef int64_t[:, ::1] out = out_arr
    cdef int64_t max_deg = 0, d
    cdef Py_ssize_t i
    for i in range(indptr.shape[0] - 1):
        d = indptr[i + 1] - indptr[i]
        if d > max_deg:
            max_deg = d
    cdef double* masses = <double*>malloc((max_deg + 1) * sizeof(double))
    cdef double a_far = alpha, a_near = 1.0 - alpha
    cdef double b_cross = beta, b_same = 1.0 - beta
    cdef Py_ssize_t row = 0, s, w, step, k, col
    cdef int64_t start, v, t, lo, hi, deg, j, x
    cdef int8_t mt
    cdef uint64_t state
    cdef double u, z, m, thr, acc
    cdef int64_t dead = -1
    try:
        with nogil:
            for s in range(starts.shape[0]):
                start = starts[s]
                state = stream_state(seed, <uint64_t>start)
                for w in range(walks_per_entity):
                    out[row, 0] = start
                    t = -1
                    v = start
                    col = 1
                    for step in range(length):
                        lo = indptr[v]
                        hi = indptr[v + 1]
                        deg = hi - lo
                        if deg == 0:
                            dead = v
                            break
                        u = next_uniform(&state)
                        if t < 0:
                            j = lo + <int64_t>(u * deg)
                            if j >= hi:
                                j = hi - 1
                        else:
                            mt = membership[t]
                            z = 0.0
                            for k in range(deg):
                                x = dst[lo + k]
                                if x == t or is_neighbor(nbr_indptr, nbrs, t, x):
                                    m = a_near
                                else:
                                    m = a_far
                                if membership[x] != mt:
                                    m = m * b_cross
                                else:
                                    m = m * b_same
                                masses[k] = m
                                z += m
                            thr = u * z
                            acc = 0.0
                            j = hi - 1
                            for k in range(deg):
                                acc += masses[k]
                                if thr < acc:
                                    j = lo + k
                                    break
                        x = dst[j]
                        out[row, col] = rel[j]
                        out[row, col + 1] = x
                        col += 2
                        t = v
                        v = x
                    if dead >= 0:
                        break
                    row += 1
                if dead >= 0:
                    break
    finally:
        free(masses)
    if dead >= 0:
        raise ValueError(f"dead end at entity {dead}")
    return out_arr


def restart_walk_collect(const int64_t[::1] nbr_indptr, const int64_t[::1] nbrs,
                         const uint8_t[::1] eligible, uint8_t[::1] taken,
                         const int64_t[::1] members, int64_t quota, double damping,
                         int64_t stall, int64_t max_steps, uint64_t seed, uint64_t key):
    got_arr = np.empty(max(quota, 0), dtype=np.int64)
    cdef int64_t[::1] got = got_arr
    cdef int64_t n_got = 0, steps = 0, v = -1, start = -1, lo, hi, k, i
    cdef int64_t since = stall
    cdef int64_t n_mem = members.shape[0]
    cdef uint64_t state = stream_state(seed, key)
    cdef double u
    with nogil:
        while n_got < quota and steps < max_steps:
            if since >= stall:
                i = <int64_t>(next_uniform(&state) * n_mem)
                if i >= n_mem:
                    i = n_mem - 1
                start = members[i]
                v = start
            else:
                u = next_uniform(&state)
                lo = nbr_indptr[v]
                hi = nbr_indptr[v + 1]
                if u >= damping or hi == lo:
                    v = start
                else:
                    k = lo + <int64_t>(u / damping * (hi - lo))
                    if k >= hi:
                        k = hi - 1
                    v = nbrs[k]
            steps += 1
            if eligible[v] and not taken[v]:
                taken[v] = 1
                got[n_got] = v
                n_got += 1
                since = 0
            else:
                since += 1
    return got_arr[:n_got].copy(), steps
