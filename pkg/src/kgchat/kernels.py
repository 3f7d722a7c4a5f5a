"""Loop-heavy numeric kernels with optional numba acceleration.

Every kernel is written once as a plain Python/NumPy function and, when numba
is available, compiled with ``@njit``. The accelerated and fallback variants
iterate in the same order and therefore produce bitwise-identical results.

Selection is controlled by the ``KGCHAT_NUMBA`` environment variable:
``auto`` (default) uses numba when importable, ``0``/``false``/``off`` forces
the pure-Python fallbacks, ``1``/``true``/``on`` requires numba and raises if
it cannot be imported. See ``scripts/bench_kernels.py`` for a comparison of
the two paths.
"""

import logging
import os

import numpy as np

logger = logging.getLogger(__name__)

_FLAG = os.environ.get("KGCHAT_NUMBA", "auto").strip().lower()

if _FLAG in ("0", "false", "off", "no"):
    NUMBA_ENABLED = False
else:
    try:
        from numba import njit

        NUMBA_ENABLED = True
    except ImportError:
        if _FLAG in ("1", "true", "on", "yes"):
            raise
        NUMBA_ENABLED = False
        logger.warning("numba not importable; using pure NumPy kernel fallbacks")


def _jit(fn):
    if NUMBA_ENABLED:
        return njit(cache=True)(fn)
    return fn


def numba_enabled() -> bool:
    return NUMBA_ENABLED


# ---------------------------------------------------------------------------
# Scatter / gather primitives (autodiff backward passes)
# ---------------------------------------------------------------------------

def _scatter_add_rows_py(out, ids, grads):
    # out[ids[i]] += grads[i], duplicates accumulate sequentially.
    for i in range(ids.shape[0]):
        out[ids[i]] += grads[i]
    return out


def _scatter_add_cols_py(weights, ids, n_cols):
    # out[t, ids[s]] += weights[t, s]; copy-distribution over a vocabulary.
    n_rows = weights.shape[0]
    n_src = ids.shape[0]
    out = np.zeros((n_rows, n_cols))
    for t in range(n_rows):
        for s in range(n_src):
            out[t, ids[s]] += weights[t, s]
    return out


def _segment_sum_py(values, seg_ids, n_segments):
    out = np.zeros(n_segments)
    for i in range(values.shape[0]):
        out[seg_ids[i]] += values[i]
    return out


def _edge_aggregate_py(x, src, dst, coef, n_out):
    # out[dst[m]] += coef[m] * x[src[m]] -- one relation's normalized
    # message passing. The backward pass is the same kernel with src/dst
    # swapped, so no second implementation is needed.
    out = np.zeros((n_out, x.shape[1]))
    for m in range(src.shape[0]):
        s = src[m]
        d = dst[m]
        c = coef[m]
        for j in range(x.shape[1]):
            out[d, j] += c * x[s, j]
    return out


scatter_add_rows = _jit(_scatter_add_rows_py)
scatter_add_cols = _jit(_scatter_add_cols_py)
segment_sum = _jit(_segment_sum_py)
edge_aggregate = _jit(_edge_aggregate_py)


# ---------------------------------------------------------------------------
# Mutual information accumulation
# ---------------------------------------------------------------------------

def _mi_accumulate_py(e_ids, h_ids, pair_counts, entity_counts, unit_count):
    # Sequential accumulation in the order the pair table is given; callers
    # sort by (e, h) so the result is reproducible bit for bit.
    scores = np.zeros(entity_counts.shape[0])
    for k in range(e_ids.shape[0]):
        e = e_ids[k]
        h = h_ids[k]
        c = pair_counts[k]
        if c <= 0.0 or entity_counts[h] <= 0.0 or entity_counts[e] <= 0.0:
            continue
        p_cond = c / entity_counts[h]
        p_h = entity_counts[h] / unit_count
        p_e = entity_counts[e] / unit_count
        scores[e] += p_cond * p_h * np.log(p_cond / p_e)
    return scores


mi_accumulate = _jit(_mi_accumulate_py)


# ---------------------------------------------------------------------------
# Longest common subsequence (ROUGE-L)
# ---------------------------------------------------------------------------

def _lcs_length_py(a, b):
    n = a.shape[0]
    m = b.shape[0]
    if n == 0 or m == 0:
        return 0
    prev = np.zeros(m + 1, dtype=np.int64)
    curr = np.zeros(m + 1, dtype=np.int64)
    for i in range(n):
        for j in range(m):
            if a[i] == b[j]:
                curr[j + 1] = prev[j] + 1
            elif curr[j] >= prev[j + 1]:
                curr[j + 1] = curr[j]
            else:
                curr[j + 1] = prev[j + 1]
        prev, curr = curr, prev
    return int(prev[m])


lcs_length = _jit(_lcs_length_py)


_PY_VARIANTS = {
    "scatter_add_rows": _scatter_add_rows_py,
    "scatter_add_cols": _scatter_add_cols_py,
    "segment_sum": _segment_sum_py,
    "edge_aggregate": _edge_aggregate_py,
    "mi_accumulate": _mi_accumulate_py,
    "lcs_length": _lcs_length_py,
}


def python_variant(name):
    """Uncompiled reference implementation, used by parity tests and benchmarks."""
    return _PY_VARIANTS[name]
