"""Hot inner loops, each in a numba and a pure-numpy flavour.

The public names dispatch on :data:`BACKEND`, which is ``"numba"`` unless
numba is missing or ``POLYVOX_DISABLE_NUMBA`` is set. Both flavours are
importable directly (``*_numba`` / ``*_numpy``) for tests and benchmarks.
"""
import numpy as np

from ._accel import HAVE_NUMBA, USE_NUMBA, njit

BACKEND = "numba" if USE_NUMBA else "numpy"

kwd = {"cache": True, "nogil": True}


# ---------------------------------------------------------------- edit distance


@njit(**kwd)
def edit_distance_numba(a, b):
    n = a.shape[0]
    m = b.shape[0]
    if n == 0:
        return m
    if m == 0:
        return n
    prev = np.empty(m + 1, dtype=np.int64)
    cur = np.empty(m + 1, dtype=np.int64)
    for j in range(m + 1):
        prev[j] = j
    for i in range(1, n + 1):
        cur[0] = i
        ai = a[i - 1]
        for j in range(1, m + 1):
            cost = 0 if ai == b[j - 1] else 1
            best = prev[j - 1] + cost
            if prev[j] + 1 < best:
                best = prev[j] + 1
            if cur[j - 1] + 1 < best:
                best = cur[j - 1] + 1
            cur[j] = best
        prev, cur = cur, prev
    return prev[m]


def edit_distance_numpy(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    n, m = a.shape[0], b.shape[0]
    if n == 0:
        return m
    if m == 0:
        return n
    ramp = np.arange(m + 1, dtype=np.int64)
    prev = ramp.copy()
    cand = np.empty(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        cand[0] = i
        # substitution / match and deletion
        np.minimum(prev[:-1] + (b != a[i - 1]), prev[1:] + 1, out=cand[1:])
        # insertion chain: cur[j] = min_k<=j cand[k] + (j - k)
        prev = np.minimum.accumulate(cand - ramp) + ramp
    return int(prev[m])


# ---------------------------------------------------------- nearest codebook row


@njit(**kwd)
def nearest_codes_numba(latents, codebook, allowed):
    t_len, dim = latents.shape
    out = np.empty(t_len, dtype=np.int64)
    for t in range(t_len):
        best = np.inf
        best_k = -1
        for a in range(allowed.shape[0]):
            k = allowed[a]
            acc = 0.0
            for d in range(dim):
                diff = latents[t, d] - codebook[k, d]
                acc += diff * diff
            if acc < best:
                best = acc
                best_k = k
        out[t] = best_k
    return out


def nearest_codes_numpy(latents, codebook, allowed):
    sub = codebook[allowed]
    dist = ((latents[:, None, :] - sub[None, :, :]) ** 2).sum(-1)
    return allowed[np.argmin(dist, axis=1)].astype(np.int64)


# ------------------------------------------------------ linear row interpolation


@njit(**kwd)
def interp_rows_numba(x, out_len):
    t_len, dim = x.shape
    out = np.empty((out_len, dim), dtype=x.dtype)
    scale = t_len / out_len
    for i in range(out_len):
        src = (i + 0.5) * scale - 0.5
        if src < 0.0:
            src = 0.0
        lo = int(np.floor(src))
        if lo > t_len - 1:
            lo = t_len - 1
        hi = lo + 1 if lo < t_len - 1 else lo
        w = src - lo
        for d in range(dim):
            out[i, d] = x[lo, d] + w * (x[hi, d] - x[lo, d])
    return out


def interp_rows_numpy(x, out_len):
    t_len = x.shape[0]
    src = (np.arange(out_len) + 0.5) * (t_len / out_len) - 0.5
    src = np.maximum(src, 0.0)
    lo = np.minimum(np.floor(src).astype(np.int64), t_len - 1)
    hi = np.minimum(lo + 1, t_len - 1)
    w = (src - lo)[:, None].astype(x.dtype)
    return x[lo] + w * (x[hi] - x[lo])


# ------------------------------------------------------------------- dispatch


def _as_symbols(x) -> np.ndarray:
    if isinstance(x, str):
        return np.fromiter(map(ord, x), dtype=np.int64, count=len(x))
    return np.ascontiguousarray(x, dtype=np.int64)


def edit_distance(a, b):
    """Unit-cost Levenshtein distance between two strings or integer sequences."""
    a = _as_symbols(a)
    b = _as_symbols(b)
    if BACKEND == "numba":
        return int(edit_distance_numba(a, b))
    return edit_distance_numpy(a, b)


def nearest_codes(latents, codebook, allowed=None):
    """Index of the squared-Euclidean nearest codebook row for every latent row.

    Only rows listed in ``allowed`` are searched; ties go to the lower index.
    """
    latents = np.ascontiguousarray(latents, dtype=np.float64)
    codebook = np.ascontiguousarray(codebook, dtype=np.float64)
    if allowed is None:
        allowed = np.arange(codebook.shape[0], dtype=np.int64)
    else:
        allowed = np.sort(np.asarray(allowed, dtype=np.int64))
    if BACKEND == "numba":
        return nearest_codes_numba(latents, codebook, allowed)
    return nearest_codes_numpy(latents, codebook, allowed)


def interp_rows(x, out_len):
    """Linear interpolation along axis 0 (half-pixel centres, edge clamped)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if BACKEND == "numba":
        return interp_rows_numba(x, int(out_len))
    return interp_rows_numpy(x, int(out_len))
