"""Pure-numpy implementations of the hot kernels.

These mirror ``riskclip._kernels._core`` (the Cython extension) exactly:
both consume pre-drawn uniforms, so for a given random stream the two
backends produce bitwise-identical output.
"""

import numpy as np

BACKEND = "pure"


def imh_chain_from_draws(log_ratio, proposal_indices, log_uniforms, start_index):
    """Evolve an independence Metropolis-Hastings chain on a finite support.

    Parameters
    ----------
    log_ratio : (V,) float array
        log(unnormalized target / proposal) at each support index. -inf marks
        points with zero target mass; such proposals are always rejected.
    proposal_indices : (T,) int array
        Pre-drawn proposal indices (i.i.d. from the proposal distribution).
    log_uniforms : (T,) float array
        log of pre-drawn Uniform(0,1) variates, one per step.
    start_index : int
        Initial state; must have finite log_ratio.

    Returns
    -------
    chain : (T,) int64 array of visited states (state after each step)
    accepted : (T,) uint8 array of accept flags
    """
    log_ratio = np.asarray(log_ratio, dtype=np.float64)
    proposal_indices = np.asarray(proposal_indices, dtype=np.int64)
    log_uniforms = np.asarray(log_uniforms, dtype=np.float64)
    if not np.isfinite(log_ratio[start_index]):
        raise ValueError("start_index has zero target density")
    n = proposal_indices.shape[0]
    chain = np.empty(n, dtype=np.int64)
    accepted = np.zeros(n, dtype=np.uint8)
    current = int(start_index)
    cur_lr = log_ratio[current]
    for t in range(n):
        cand = proposal_indices[t]
        cand_lr = log_ratio[cand]
        # accept iff log U <= log r(x') - log r(x); -inf candidate never accepted
        if cand_lr - cur_lr >= log_uniforms[t]:
            current = int(cand)
            cur_lr = cand_lr
            accepted[t] = 1
        chain[t] = current
    return chain, accepted


def markov_sample_from_uniforms(init_cdf, trans_cdf, uniforms):
    """Sample token sequences from a first-order Markov model by inverse CDF.

    Parameters
    ----------
    init_cdf : (V,) cumulative initial distribution
    trans_cdf : (V, V) row-wise cumulative transition matrix
    uniforms : (n, L) pre-drawn Uniform(0,1) variates

    Returns
    -------
    (n, L) int64 token array
    """
    init_cdf = np.asarray(init_cdf, dtype=np.float64)
    trans_cdf = np.asarray(trans_cdf, dtype=np.float64)
    uniforms = np.asarray(uniforms, dtype=np.float64)
    n, length = uniforms.shape
    vocab = init_cdf.shape[0]
    out = np.empty((n, length), dtype=np.int64)
    tok = np.minimum(np.searchsorted(init_cdf, uniforms[:, 0], side="right"), vocab - 1)
    out[:, 0] = tok
    for step in range(1, length):
        rows = trans_cdf[tok]  # (n, V)
        # upper bound per row: first index with cdf > u
        tok = np.minimum((rows <= uniforms[:, step, None]).sum(axis=1), vocab - 1)
        out[:, step] = tok
    return out


def markov_log_prob(init_logp, trans_logp, sequences):
    """Batch log-probability of token sequences under a Markov model.

    Accumulates left to right, matching the compiled kernel's summation
    order bit for bit.
    """
    init_logp = np.asarray(init_logp, dtype=np.float64)
    trans_logp = np.asarray(trans_logp, dtype=np.float64)
    sequences = np.asarray(sequences, dtype=np.int64)
    out = init_logp[sequences[:, 0]].copy()
    for step in range(1, sequences.shape[1]):
        out += trans_logp[sequences[:, step - 1], sequences[:, step]]
    return out
