"""Path generators: simple random walk, the no-double-backtrack skeleton,
the geometric clock, and the splice reconstructing an SRW from the pair.

A walk is stored as its sequence of direction indices (see lattice bit
order); positions are prefix sums of unit steps.  A double backtrack at time
m is the event S_{m+1} = S_{m-1} and S_{m+2} = S_m; the skeleton walk never
makes one at even times, and an SRW is recovered by inserting an independent
geometric number of double backtracks after each even time.
"""

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .lattice import antipode, direction_array

__all__ = [
    "WalkPath",
    "ClockedWalk",
    "replica_rng",
    "gen_srw",
    "gen_ndb",
    "gen_clock",
    "splice",
    "has_double_backtrack_at_even_times",
    "save_path",
    "load_path",
]


@dataclass
class WalkPath:
    """A nearest-neighbor path on Z^d given by direction indices."""

    d: int
    steps: np.ndarray

    def __post_init__(self):
        self.steps = np.asarray(self.steps, dtype=np.int64)
        if self.steps.size and not (
            (self.steps >= 0).all() and (self.steps < 2 * self.d).all()
        ):
            raise ValueError("step indices out of range")

    def __len__(self):
        return int(self.steps.size)

    def positions(self):
        """(n+1, d) array of visited positions, origin first."""
        pos = np.zeros((len(self) + 1, self.d), dtype=np.int64)
        if len(self):
            np.cumsum(direction_array(self.d)[self.steps], axis=0, out=pos[1:])
        return pos

    def prefix(self, n):
        if n > len(self):
            raise ValueError(f"prefix {n} longer than path ({len(self)})")
        return WalkPath(self.d, self.steps[:n])


def replica_rng(master_seed, replica, stream=0):
    """Independent, reproducible stream for one replica of a run.

    Streams are derived by spawning the master SeedSequence, so they are
    statistically independent for distinct (replica, stream) pairs and
    identical across worker layouts.  `stream` separates estimators that
    must not share randomness within a replica.
    """
    ss = np.random.SeedSequence(master_seed, spawn_key=(replica, stream))
    return np.random.default_rng(ss)


def gen_srw(d, n, rng):
    """n-step simple random walk: i.i.d. uniform direction indices."""
    if n < 0:
        raise ValueError("n must be >= 0")
    return WalkPath(d, rng.integers(0, 2 * d, size=n, dtype=np.int64))


def gen_ndb(d, n, rng):
    """Walk of length n with no double backtrack at even times.

    The first two steps are unrestricted uniform; each later even-time pair
    of steps is uniform over the 4d^2 - 1 pairs (i, j) excluding the double
    backtrack (i, j) = (antipode(previous step), previous step).  Odd n is
    handled by generating one extra step and truncating (the construction is
    pairwise).
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    npairs = (n + 1) // 2
    if npairs == 0:
        return WalkPath(d, np.empty(0, dtype=np.int64))
    two_d = 2 * d
    u = rng.integers(0, two_d * two_d - 1, size=npairs, dtype=np.int64)
    first = rng.integers(0, two_d, size=2, dtype=np.int64)
    steps = _ndb_fill(u, first, two_d)
    return WalkPath(d, steps[:n])


@njit(cache=True)
def _ndb_fill(u, first, two_d):
    npairs = u.shape[0]
    steps = np.empty(2 * npairs, dtype=np.int64)
    steps[0], steps[1] = first[0], first[1]
    prev = steps[1]
    for m in range(1, npairs):
        excluded = (prev ^ 1) * two_d + prev
        v = u[m]
        if v >= excluded:
            v += 1
        steps[2 * m] = v // two_d
        steps[2 * m + 1] = v % two_d
        prev = steps[2 * m + 1]
    return steps


def has_double_backtrack_at_even_times(path):
    """True iff some even time m >= 2 has S_{m+1}=S_{m-1} and S_{m+2}=S_m."""
    s = path.steps
    for m in range(2, len(s) - 1, 2):
        if s[m] == antipode(int(s[m - 1])) and s[m + 1] == s[m - 1]:
            return True
    return False


def gen_clock(d, count, rng):
    """i.i.d. geometric clock values, P(xi = k) = (1-p) p^k with p = 1/(2d)^2.

    Sampled by inverse CDF on a single uniform per value (branch-free and
    platform-stable): xi = floor(log u / log p) for u uniform in (0, 1].
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    p = 1.0 / (2 * d) ** 2
    u = 1.0 - rng.random(count)  # in (0, 1]
    return np.floor(np.log(u) / np.log(p)).astype(np.int64)


@dataclass
class ClockedWalk:
    """No-double-backtrack skeleton plus its geometric clock.

    nTilde[k] = sum_{i <= floor(k/2)} xi_i counts double backtracks inserted
    before skeleton time k; nTilde[0] = nTilde[1] = 0.
    """

    skeleton: WalkPath
    xi: np.ndarray
    nTilde: np.ndarray = field(init=False)

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=np.int64)
        if (self.xi < 0).any():
            raise ValueError("clock values must be nonnegative")
        if self.xi.size < len(self.skeleton) // 2:
            raise ValueError("need one clock value per even skeleton time")
        k = np.arange(len(self.skeleton) + 1)
        csum = np.concatenate([[0], np.cumsum(self.xi)])
        self.nTilde = csum[k // 2]

    def mapped_times(self):
        """Spliced-walk time of each skeleton time: k + 2 nTilde[k]."""
        return np.arange(len(self.skeleton) + 1) + 2 * self.nTilde


def splice(cw):
    """Rebuild a simple random walk from skeleton and clock.

    After each even skeleton time 2i (i >= 1) the walk makes xi_i double
    backtracks: pairs (antipode(last step), last step) which revisit the two
    previous positions.  Range and boundary at spliced time k + 2 nTilde[k]
    coincide with the skeleton's at time k, because inserted steps revisit
    existing sites only.
    """
    s = cw.skeleton.steps
    n = len(s)
    if n < 2:
        raise ValueError("skeleton must have length >= 2")
    out = _splice_fill(s, np.asarray(cw.xi, dtype=np.int64), int(cw.nTilde[n]))
    return WalkPath(cw.skeleton.d, out)


@njit(cache=True)
def _splice_fill(s, xi, total_inserted):
    n = s.shape[0]
    out = np.empty(n + 2 * total_inserted, dtype=np.int64)
    w = 0
    for i in range(1, n // 2 + 1):
        out[w] = s[2 * i - 2]
        out[w + 1] = s[2 * i - 1]
        w += 2
        back = s[2 * i - 1] ^ 1
        for _ in range(xi[i - 1]):
            out[w] = back
            out[w + 1] = s[2 * i - 1]
            w += 2
    if n % 2:
        out[w] = s[n - 1]
        w += 1
    return out[:w]


def save_path(path, fname, seed=None):
    """Dump a path as text: header line `d n seed`, one step index per line."""
    with open(fname, "w") as f:
        f.write(f"d={path.d} n={len(path)} seed={'' if seed is None else seed}\n")
        for v in path.steps:
            f.write(f"{int(v)}\n")


def load_path(fname):
    with open(fname) as f:
        header = f.readline().split()
        fields = dict(kv.split("=") for kv in header)
        d = int(fields["d"])
        n = int(fields["n"])
        steps = np.array([int(line) for line in f], dtype=np.int64)
    if steps.size != n:
        raise ValueError(f"path file promises {n} steps, found {steps.size}")
    return WalkPath(d, steps)
