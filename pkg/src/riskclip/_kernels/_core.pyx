# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the sequential hot loops.

Semantics match ``riskclip._kernels._pure`` exactly; both consume pre-drawn
uniforms so the two backends are interchangeable bit-for-bit.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "compiled"


cdef inline Py_ssize_t _upper_bound(const double[:] cdf, double u) noexcept nogil:
    # first index with cdf[i] > u (searchsorted side='right')
    cdef Py_ssize_t lo = 0, hi = cdf.shape[0], mid
    while lo < hi:
        mid = (lo + hi) // 2
        if cdf[mid] <= u:
            lo = mid + 1
        else:
            hi = mid
    return lo


def imh_chain_from_draws(log_ratio, proposal_indices, log_uniforms, start_index):
    """See ``riskclip._kernels._pure.imh_chain_from_draws``."""
    cdef const double[:] lr = np.ascontiguousarray(log_ratio, dtype=np.float64)
    cdef const long long[:] props = np.ascontiguousarray(proposal_indices, dtype=np.int64)
    cdef const double[:] lu = np.ascontiguousarray(log_uniforms, dtype=np.float64)
    cdef Py_ssize_t n = props.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] chain = np.empty(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] accepted = np.zeros(n, dtype=np.uint8)
    cdef long long[:] chain_v = chain
    cdef unsigned char[:] acc_v = accepted
    cdef Py_ssize_t t
    cdef long long current = start_index, cand
    cdef double cur_lr, cand_lr
    if not np.isfinite(log_ratio[start_index]):
        raise ValueError("start_index has zero target density")
    cur_lr = lr[current]
    with nogil:
        for t in range(n):
            cand = props[t]
            cand_lr = lr[cand]
            if cand_lr - cur_lr >= lu[t]:
                current = cand
                cur_lr = cand_lr
                acc_v[t] = 1
            chain_v[t] = current
    return chain, accepted


def markov_sample_from_uniforms(init_cdf, trans_cdf, uniforms):
    """See ``riskclip._kernels._pure.markov_sample_from_uniforms``."""
    cdef const double[:] icdf = np.ascontiguousarray(init_cdf, dtype=np.float64)
    cdef const double[:, :] tcdf = np.ascontiguousarray(trans_cdf, dtype=np.float64)
    cdef const double[:, :] u = np.ascontiguousarray(uniforms, dtype=np.float64)
    cdef Py_ssize_t n = u.shape[0], length = u.shape[1], vocab = icdf.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=2] out = np.empty((n, length), dtype=np.int64)
    cdef long long[:, :] out_v = out
    cdef Py_ssize_t i, step, tok
    with nogil:
        for i in range(n):
            tok = _upper_bound(icdf, u[i, 0])
            if tok >= vocab:
                tok = vocab - 1
            out_v[i, 0] = tok
            for step in range(1, length):
                tok = _upper_bound(tcdf[tok], u[i, step])
                if tok >= vocab:
                    tok = vocab - 1
                out_v[i, step] = tok
    return out


def markov_log_prob(init_logp, trans_logp, sequences):
    """See ``riskclip._kernels._pure.markov_log_prob``."""
    cdef const double[:] ilp = np.ascontiguousarray(init_logp, dtype=np.float64)
    cdef const double[:, :] tlp = np.ascontiguousarray(trans_logp, dtype=np.float64)
    cdef const long long[:, :] seqs = np.ascontiguousarray(sequences, dtype=np.int64)
    cdef Py_ssize_t n = seqs.shape[0], length = seqs.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double[:] out_v = out
    cdef Py_ssize_t i, step
    cdef double total
    with nogil:
        for i in range(n):
            total = ilp[seqs[i, 0]]
            for step in range(1, length):
                total = total + tlp[seqs[i, step - 1], seqs[i, step]]
            out_v[i] = total
    return out
