"""Compiled kernels: counter-based random streams, resampling and UPGMA.

Every random number is a pure function of (seed, scale index, replicate
index, draw index), so results do not depend on the thread schedule.
"""

import numba as nb
import numpy as np

# skip probing an incompatible TBB install, which only emits a warning
nb.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@nb.njit(inline="always")
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@nb.njit(inline="always")
def stream_key(seed, scale, rep):
    k = mix64(np.uint64(seed) + _GOLDEN)
    k = mix64(k ^ (np.uint64(scale) * _GOLDEN + np.uint64(1)))
    return mix64(k ^ (np.uint64(rep) * _M1 + np.uint64(2)))


@nb.njit(inline="always")
def uniform(key, i):
    """Uniform on [0, 1) for draw ``i`` of the stream ``key``."""
    x = mix64(key + (np.uint64(i) + np.uint64(1)) * _GOLDEN)
    return np.float64(x >> _S11) * _INV53


@nb.njit(inline="always")
def below(key, i, n):
    """Integer uniform on {0, ..., n-1}."""
    j = np.int64(uniform(key, i) * n)
    return j if j < n else n - 1


@nb.njit(inline="always")
def normal(key, i):
    """Standard normal by Box-Muller on draws 2i and 2i+1."""
    u1 = 1.0 - uniform(key, 2 * i)
    u2 = uniform(key, 2 * i + 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


@nb.njit(parallel=True, cache=True)
def normal_block(seed, scale, rep0, nrep, dim):
    out = np.empty((nrep, dim))
    for b in nb.prange(nrep):
        key = stream_key(seed, scale, rep0 + b)
        for d in range(dim):
            out[b, d] = normal(key, d)
    return out


@nb.njit(cache=True)
def resample_indices(seed, scale, rep, n, nprime):
    key = stream_key(seed, scale, rep)
    idx = np.empty(nprime, dtype=np.int64)
    for i in range(nprime):
        idx[i] = below(key, i, n)
    return idx


@nb.njit(parallel=True, cache=True)
def dataset_normals(seed, rep, n, dim):
    """n x dim standard normals plus one fair coin per row, for simulated datasets."""
    z = np.empty((n, dim))
    coin = np.empty(n, dtype=np.bool_)
    for t in nb.prange(n):
        key = stream_key(seed, 0xDA7A, rep * 1000003 + t)
        for d in range(dim):
            z[t, d] = normal(key, d)
        coin[t] = uniform(key, 2 * dim + 7) < 0.5
    return z, coin


@nb.njit(cache=True)
def upgma(dvec, p):
    """Average linkage on a condensed distance vector.

    Clusters live in the slot of their smallest leaf label and pairs are
    scanned in lexicographic slot order, so exact ties go to the
    lexicographically smallest pair.

    Returns:
        merges: (p-1, 2) node ids (leaves 0..p-1, internal p+k), heights (p-1,),
        members: (p-1, p) boolean leaf membership of each internal node.
    """
    d = np.zeros((p, p))
    k = 0
    for i in range(p):
        for j in range(i + 1, p):
            d[i, j] = dvec[k]
            d[j, i] = dvec[k]
            k += 1
    size = np.ones(p)
    node = np.arange(p)
    active = np.ones(p, dtype=np.bool_)
    memb = np.zeros((p, p), dtype=np.bool_)
    for i in range(p):
        memb[i, i] = True
    merges = np.empty((p - 1, 2), dtype=np.int64)
    heights = np.empty(p - 1)
    members = np.zeros((p - 1, p), dtype=np.bool_)
    for step in range(p - 1):
        best = np.inf
        bi = -1
        bj = -1
        for i in range(p):
            if not active[i]:
                continue
            for j in range(i + 1, p):
                if active[j] and d[i, j] < best:
                    best = d[i, j]
                    bi = i
                    bj = j
        a, b = node[bi], node[bj]
        merges[step, 0] = min(a, b)
        merges[step, 1] = max(a, b)
        heights[step] = best
        for l in range(p):
            if active[l] and l != bi and l != bj:
                nd = (size[bi] * d[bi, l] + size[bj] * d[bj, l]) / (size[bi] + size[bj])
                d[bi, l] = nd
                d[l, bi] = nd
        size[bi] += size[bj]
        active[bj] = False
        for l in range(p):
            memb[bi, l] = memb[bi, l] or memb[bj, l]
            members[step, l] = memb[bi, l]
        node[bi] = p + step
    return merges, heights, members


@nb.njit(cache=True)
def euclid_from_weights(x, w, total):
    """Weighted mean squared column differences, condensed order."""
    n, p = x.shape
    out = np.zeros(p * (p - 1) // 2)
    for t in range(n):
        if w[t] == 0:
            continue
        k = 0
        for i in range(p):
            xi = x[t, i]
            for j in range(i + 1, p):
                diff = xi - x[t, j]
                out[k] += w[t] * diff * diff
                k += 1
    return out / total


@nb.njit(cache=True)
def correlation_from_weights(x, w, total):
    """One minus the weighted Pearson correlation between columns, condensed order."""
    n, p = x.shape
    mean = np.zeros(p)
    for t in range(n):
        if w[t] == 0:
            continue
        for i in range(p):
            mean[i] += w[t] * x[t, i]
    mean /= total
    cov = np.zeros((p, p))
    for t in range(n):
        if w[t] == 0:
            continue
        for i in range(p):
            ci = x[t, i] - mean[i]
            for j in range(i, p):
                cov[i, j] += w[t] * ci * (x[t, j] - mean[j])
    out = np.empty(p * (p - 1) // 2)
    k = 0
    for i in range(p):
        for j in range(i + 1, p):
            den = np.sqrt(cov[i, i] * cov[j, j])
            out[k] = 1.0 - cov[i, j] / den if den > 0 else np.nan
            k += 1
    return out


@nb.njit(cache=True)
def pair_features(x):
    """Per-row squared differences of every column pair, condensed order."""
    n, p = x.shape
    f = np.empty((n, p * (p - 1) // 2))
    for t in range(n):
        k = 0
        for i in range(p):
            for j in range(i + 1, p):
                diff = x[t, i] - x[t, j]
                f[t, k] = diff * diff
                k += 1
    return f


@nb.njit(inline="always")
def _resampled_distance(x, feats, key, nprime, metric, w):
    n = x.shape[0]
    w[:] = 0.0
    for i in range(nprime):
        w[below(key, i, n)] += 1.0
    if metric == 0:
        P = feats.shape[1]
        out = np.zeros(P)
        for t in range(n):
            wt = w[t]
            for k in range(P):
                out[k] += wt * feats[t, k]
        return out / nprime
    return correlation_from_weights(x, w, float(nprime))


@nb.njit(parallel=True, cache=True)
def cluster_counts(x, targets, nprimes, B, seed, metric):
    """Count, per scale, replicates whose dendrogram contains each target cluster.

    Args:
        x: n x p data matrix (rows are resampled).
        targets: T x p boolean membership rows.
        nprimes: replicate sample size per scale.
        B: replicates per scale.
        seed: master seed.
        metric: 0 for mean squared difference, 1 for one minus correlation.

    Returns:
        counts: scales x T integer array; bad: scales array of replicates
        whose distance matrix was undefined (skipped).
    """
    n, p = x.shape
    T = targets.shape[0]
    S = nprimes.shape[0]
    feats = pair_features(x) if metric == 0 else np.zeros((1, 1))
    hits = np.zeros((S, B, T), dtype=np.uint8)
    badrep = np.zeros((S, B), dtype=np.uint8)
    for job in nb.prange(S * B):
        s = job // B
        b = job - s * B
        key = stream_key(seed, s, b)
        w = np.empty(n)
        dv = _resampled_distance(x, feats, key, nprimes[s], metric, w)
        ok = True
        for k in range(dv.shape[0]):
            if not np.isfinite(dv[k]):
                ok = False
        if not ok:
            badrep[s, b] = 1
            continue
        _, _, members = upgma(dv, p)
        for t in range(T):
            for m in range(p - 1):
                same = True
                for l in range(p):
                    if members[m, l] != targets[t, l]:
                        same = False
                        break
                if same:
                    hits[s, b, t] = 1
                    break
    counts = np.zeros((S, T), dtype=np.int64)
    bad = np.zeros(S, dtype=np.int64)
    for s in range(S):
        for b in range(B):
            bad[s] += badrep[s, b]
            for t in range(T):
                counts[s, t] += hits[s, b, t]
    return counts, bad
