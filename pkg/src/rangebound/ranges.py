"""Range and boundary statistics of a path: streaming state, transcripts,
first-visit partitions, last-passage counts, and intersection functionals.

The range R_n is the set of sites visited up to time n (start included); its
boundary is the subset of visited sites having at least one unvisited lattice
neighbor.  Sites are partitioned by their first-visit mask V: the set of
directions whose neighbor was still unvisited at the moment of first visit.
"""

import bisect
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ._core import TIME_INF, coord_bits, direction_key_deltas, pack_positions, stream_walk
from .lattice import direction_array
from .walk import WalkPath

__all__ = [
    "RangeTranscript",
    "RangeState",
    "segment_boundary_count",
    "segment_range_count",
    "range_overlap",
    "plain_overlap",
    "dyadic_overlap",
    "past_avoiding_count",
    "future_avoiding_count",
]


@dataclass
class RangeTranscript:
    """First-visit transcript of one path; see _core for the field contract."""

    d: int
    horizon: int
    birth: np.ndarray
    pos: np.ndarray
    clear: np.ndarray

    @classmethod
    def from_path(cls, path, n=None):
        steps = path.steps if n is None else path.steps[:n]
        birth, pos, clear = stream_walk(
            np.ascontiguousarray(steps, dtype=np.int64), path.d, coord_bits(path.d)
        )
        return cls(d=path.d, horizon=len(steps), birth=birth, pos=pos, clear=clear)

    @cached_property
    def death(self):
        """Time at which a site's last unvisited neighbor got visited
        (TIME_INF if it stays on the boundary forever)."""
        return self.clear.max(axis=1)

    @cached_property
    def _death_sorted(self):
        return np.sort(self.death)

    @cached_property
    def first_masks(self):
        """First-visit neighbor mask V of each record."""
        bits = self.clear > self.birth[:, None]
        return (bits << np.arange(2 * self.d)[None, :]).sum(axis=1)

    def _check_time(self, n):
        if np.any(np.asarray(n) < 0) or np.any(np.asarray(n) > self.horizon):
            raise ValueError(f"time outside transcript horizon {self.horizon}")

    def range_count(self, n):
        return int(self.range_series([n])[0])

    def boundary_count(self, n):
        return int(self.boundary_series([n])[0])

    def range_series(self, ns):
        ns = np.asarray(ns)
        self._check_time(ns)
        return np.searchsorted(self.birth, ns, side="right")

    def boundary_series(self, ns):
        """|boundary of R_n| for each n: records born but not yet closed."""
        ns = np.asarray(ns)
        self._check_time(ns)
        born = np.searchsorted(self.birth, ns, side="right")
        closed = np.searchsorted(self._death_sorted, ns, side="right")
        return born - closed

    def live_masks(self, n):
        """Unvisited-neighbor mask of every record at time n (0 if closed)."""
        self._check_time(n)
        bits = self.clear > n
        return (bits << np.arange(2 * self.d)[None, :]).sum(axis=1)

    def partition_counts(self, n):
        """|R_{n,V}| per raw mask V, as an array indexed by mask value."""
        self._check_time(n)
        sel = self.birth <= n
        return np.bincount(self.first_masks[sel], minlength=1 << (2 * self.d))

    def boundary_partition(self, n):
        """|boundary R_{n,V}| per raw first-visit mask V.

        A first visit at time k with mask V contributes iff some direction of
        V is still unvisited at n, i.e. the record is still open at n.
        """
        self._check_time(n)
        sel = (self.birth <= n) & (self.death > n)
        return np.bincount(self.first_masks[sel], minlength=1 << (2 * self.d))


class RangeState:
    """Incremental range/boundary tracker, one step at a time.

    Maintains per visited site the first-visit time and mask and the current
    unvisited-neighbor mask; boundary_count and per-mask partition counts are
    updated in O(2d) per step.  This is the reference streaming structure;
    bulk work goes through RangeTranscript.
    """

    def __init__(self, d):
        self.d = d
        self._dirs = [tuple(e) for e in direction_array(d)]
        self.n = 0
        self._cur = (0,) * d
        full = (1 << (2 * d)) - 1
        # site -> [birth, first_mask, live_mask]
        self.sites = {self._cur: [0, full, full]}
        self.boundary_count = 1
        self.range_count = 1
        self.partition = {full: 1}

    def extend(self, direction):
        d = self.d
        self.n += 1
        nxt = tuple(c + e for c, e in zip(self._cur, self._dirs[direction]))
        self._cur = nxt
        if nxt in self.sites:
            return self
        mask = 0
        for v in range(2 * d):
            q = tuple(c + e for c, e in zip(nxt, self._dirs[v]))
            rec = self.sites.get(q)
            if rec is None:
                mask |= 1 << v
            else:
                rec[2] &= ~(1 << (v ^ 1))
                if rec[2] == 0:
                    self.boundary_count -= 1
        self.sites[nxt] = [self.n, mask, mask]
        self.range_count += 1
        if mask:
            self.boundary_count += 1
        self.partition[mask] = self.partition.get(mask, 0) + 1
        return self

    def extend_path(self, path):
        for v in path.steps:
            self.extend(int(v))
        return self


def _segment_transcript(path, i, j):
    if not 0 <= i <= j <= len(path):
        raise ValueError("segment out of path bounds")
    return RangeTranscript.from_path(WalkPath(path.d, path.steps[i:j]))


def segment_boundary_count(path, i, j):
    """|boundary of R(i,j)| for the shifted segment range {S_k - S_i}."""
    tr = _segment_transcript(path, i, j)
    return tr.boundary_count(j - i)


def segment_range_count(path, i, j):
    tr = _segment_transcript(path, i, j)
    return tr.range_count(j - i)


def _unique_packed(pos, d):
    return np.unique(pack_positions(pos, d))


def _plus_set(packed, d):
    deltas = np.concatenate([[0], direction_key_deltas(d)])
    return np.unique(packed[:, None] + deltas[None, :])


def _n_common(a, b):
    return int(np.intersect1d(a, b, assume_unique=True).size)


def range_overlap(path, n, m):
    """Z(n, m): size of the two cross-intersections controlling boundary
    subadditivity,

        |backward R(0,n) inter R+(n,n+m)| + |backward R+(0,n) inter R(n,n+m)|,

    where backward R(0,n) = -S_n + R(0,n), R(n,n+m) = {S_k - S_n}, and
    Lambda+ dilates by the closed neighborhood of the origin.  Always >= 2.
    """
    if n + m > len(path):
        raise ValueError("path too short for requested split")
    d = path.d
    pos = path.positions()
    left = _unique_packed(pos[: n + 1] - pos[n], d)
    right = _unique_packed(pos[n : n + m + 1] - pos[n], d)
    return _n_common(left, _plus_set(right, d)) + _n_common(_plus_set(left, d), right)


def plain_overlap(path, n, m):
    """|backward R(0,n) inter R(n,n+m)|, the defect in the range identity."""
    if n + m > len(path):
        raise ValueError("path too short for requested split")
    d = path.d
    pos = path.positions()
    left = _unique_packed(pos[: n + 1] - pos[n], d)
    right = _unique_packed(pos[n : n + m + 1] - pos[n], d)
    return _n_common(left, right)


def dyadic_overlap(path, n, level, k):
    """Overlap functional of the k-th strand split at dyadic level `level`,
    computed on untranslated strand ranges sharing the split point."""
    if not 1 <= k <= 1 << (level - 1):
        raise ValueError("strand index k out of range for level")
    if (1 << level) > n:
        raise ValueError("2^level must not exceed n")
    if n > len(path):
        raise ValueError("path shorter than n")
    d = path.d
    t0 = (k - 1) * n // (1 << level)
    t1 = (2 * k - 1) * n // (1 << (level + 1))
    t2 = k * n // (1 << level)
    pos = path.positions()
    u = _unique_packed(pos[t0 : t1 + 1], d)
    v = _unique_packed(pos[t1 : t2 + 1], d)
    return _n_common(u, _plus_set(v, d)) + _n_common(_plus_set(u, d), v)


def past_avoiding_count(path, n, umask, include_origin=False):
    """Number of times k in [1, n] at which a new site is visited whose
    U-translates were never visited before: S_k not in R_{k-1} and
    S_i not in S_k + U for all i < k.

    Equals the count of first visits with mask containing U.  The origin
    (k = 0, vacuously avoiding) is excluded by default, matching the
    last-passage count it is equal to in law; include_origin=True counts it,
    giving exactly sum over V containing U of |R_{n,V}|.
    """
    if n > len(path):
        raise ValueError("path shorter than n")
    d = path.d
    dirs = direction_array(d)
    u_dirs = [tuple(dirs[v]) for v in range(2 * d) if (umask >> v) & 1]
    pos = path.positions()
    first = {}
    for t in range(n + 1):
        first.setdefault(tuple(pos[t]), t)
    count = 1 if include_origin else 0
    for k in range(1, n + 1):
        s = tuple(pos[k])
        if first[s] != k:
            continue
        ok = True
        for e in u_dirs:
            q = tuple(c + ec for c, ec in zip(s, e))
            if first.get(q, TIME_INF) < k:
                ok = False
                break
        if ok:
            count += 1
    return count


def future_avoiding_count(path, n, vmask, include_terminal=False):
    """Last-passage count: number of times i in [0, n-1] whose closed
    V-neighborhood S_i + (V union {0}) is avoided by the rest of the walk
    up to n.  include_terminal=True adds the vacuous i = n term.

    Equal in law to past_avoiding_count with the same mask (time reversal).
    """
    if vmask == 0:
        raise ValueError("V must be nonempty")
    if n > len(path):
        raise ValueError("path shorter than n")
    d = path.d
    dirs = direction_array(d)
    vbar = [(0,) * d] + [tuple(dirs[v]) for v in range(2 * d) if (vmask >> v) & 1]
    pos = path.positions()
    visits = {}
    for t in range(n + 1):
        visits.setdefault(tuple(pos[t]), []).append(t)
    count = 1 if include_terminal else 0
    for i in range(n):
        s = pos[i]
        ok = True
        for e in vbar:
            q = tuple(c + ec for c, ec in zip(s, e))
            ts = visits.get(q)
            if ts is None:
                continue
            # any visit in [i+1, n]?
            idx = bisect.bisect_right(ts, i)
            if idx < len(ts):
                ok = False
                break
        if ok:
            count += 1
    return count
