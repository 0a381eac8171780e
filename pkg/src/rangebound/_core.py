"""Performance core: streaming range transcript of a nearest-neighbor path.

Sites are keyed by packing the d coordinates into one int64, b = 63 // d bits
per coordinate with offset 2^(b-1) (so |coordinate| < 2^(b-1) - 1 is required
and asserted while streaming; for d = 3 that is |coordinate| < 2^20 - 1).
The open-addressing table uses linear probing on a multiplicative hash.

The transcript of a path records, per first-visited site,
    birth:  first visit time,
    pos:    site coordinates,
    clear:  per direction v, the time at which neighbor site + e_v was first
            visited (sentinel TIME_INF if never; equals birth when the
            neighbor was visited before the site itself).
Everything downstream (range and boundary counts at any time, first-visit
masks, live unvisited-neighbor masks, partition counts) is derived from these
arrays by vectorized post-processing.
"""

import numpy as np
from numba import njit

TIME_INF = np.int64(1) << 62


def coord_bits(d):
    return 63 // d


def pack_positions(pos, d):
    """Pack (m, d) coordinates into int64 keys (same packing as the kernel)."""
    bits = coord_bits(d)
    offset = np.int64(1) << (bits - 1)
    if np.abs(pos).max(initial=0) >= offset - 1:
        raise ValueError("coordinate exceeds packing bound")
    pos = np.asarray(pos, dtype=np.int64)
    shifts = (bits * np.arange(d, dtype=np.int64)).astype(np.int64)
    return ((pos + offset) << shifts).sum(axis=-1)


def direction_key_deltas(d):
    """Packed-key increment for each direction index."""
    bits = coord_bits(d)
    out = np.empty(2 * d, dtype=np.int64)
    for j in range(d):
        out[2 * j] = np.int64(1) << (bits * j)
        out[2 * j + 1] = -out[2 * j]
    return out


@njit(cache=True, inline="always")
def _find(keys, key, hmask):
    h = (np.uint64(key) * np.uint64(0x9E3779B97F4A7C15)) >> np.uint64(32)
    i = np.int64(h) & hmask
    while keys[i] != -1 and keys[i] != key:
        i = (i + 1) & hmask
    return i


@njit(cache=True)
def stream_walk(steps, d, bits):
    n = steps.shape[0]
    offset = np.int64(1) << (bits - 1)
    lim = offset - 2
    cap = np.int64(8)
    while cap < 4 * (n + 2):
        cap <<= 1
    hmask = cap - 1
    keys = np.full(cap, -1, np.int64)
    recs = np.zeros(cap, np.int64)
    nrec_max = n + 1
    birth = np.zeros(nrec_max, np.int64)
    pos = np.zeros((nrec_max, d), np.int64)
    clear = np.full((nrec_max, 2 * d), TIME_INF, np.int64)
    delta = np.zeros(2 * d, np.int64)
    for j in range(d):
        delta[2 * j] = np.int64(1) << (bits * j)
        delta[2 * j + 1] = -delta[2 * j]
    cur = np.zeros(d, np.int64)
    key = np.int64(0)
    for j in range(d):
        key += offset << (bits * j)
    slot = _find(keys, key, hmask)
    keys[slot] = key
    recs[slot] = 0
    nrec = 1
    for i in range(n):
        v = steps[i]
        j = v >> 1
        cur[j] += 1 - 2 * (v & 1)
        if cur[j] > lim or cur[j] < -lim:
            raise ValueError("coordinate exceeds packing bound")
        key += delta[v]
        t = i + 1
        slot = _find(keys, key, hmask)
        if keys[slot] == key:
            continue
        keys[slot] = key
        recs[slot] = nrec
        birth[nrec] = t
        for jj in range(d):
            pos[nrec, jj] = cur[jj]
        for u in range(2 * d):
            qkey = key + delta[u]
            qslot = _find(keys, qkey, hmask)
            if keys[qslot] == qkey:
                clear[nrec, u] = t
                clear[recs[qslot], u ^ 1] = t
        nrec += 1
    return birth[:nrec], pos[:nrec], clear[:nrec]
