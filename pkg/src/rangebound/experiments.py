"""Monte Carlo orchestration and exact small-path oracles.

Estimators for the boundary growth rate nu_d, variance scans over n-grids
with jackknife confidence intervals, a CLT diagnostic, and exhaustive path
enumeration producing exact (rational) distributions used as oracles by the
test suite.  Replicas are reproducible: replica r always consumes the stream
spawned from (master_seed, r), independent of worker layout.
"""

import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from itertools import product

import numpy as np
from scipy import stats

from .decompose import trace
from .lattice import canonical_class, direction_array, mask_directions
from .ranges import RangeTranscript, past_avoiding_count
from .walk import WalkPath, gen_srw, replica_rng

__all__ = [
    "SummaryStats",
    "ExperimentConfig",
    "checkpoint_times",
    "functional_series",
    "collect_series",
    "variance_scan",
    "jackknife_variance",
    "estimate_nu",
    "clt_test",
    "naive_range_stats",
    "exact_distribution",
    "exact_mean",
    "martingale_onestep_residual",
]


@dataclass
class SummaryStats:
    """Mergeable moment accumulator (count, mean, central sums to order 4).

    merge() is associative up to floating rounding, so replica results can be
    folded in any grouping; the canonical fold is by replica index.
    """

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    m3: float = 0.0
    m4: float = 0.0

    @classmethod
    def from_values(cls, x):
        x = np.asarray(x, dtype=np.float64)
        if x.size == 0:
            return cls()
        mu = float(x.mean())
        c = x - mu
        return cls(
            count=int(x.size),
            mean=mu,
            m2=float((c**2).sum()),
            m3=float((c**3).sum()),
            m4=float((c**4).sum()),
        )

    def update(self, value):
        return self.merge(SummaryStats.from_values([value]))

    def merge(self, other):
        na, nb = self.count, other.count
        if na == 0:
            return SummaryStats(**vars(other))
        if nb == 0:
            return SummaryStats(**vars(self))
        n = na + nb
        d = other.mean - self.mean
        mean = self.mean + d * nb / n
        m2 = self.m2 + other.m2 + d**2 * na * nb / n
        m3 = (
            self.m3
            + other.m3
            + d**3 * na * nb * (na - nb) / n**2
            + 3.0 * d * (na * other.m2 - nb * self.m2) / n
        )
        m4 = (
            self.m4
            + other.m4
            + d**4 * na * nb * (na * na - na * nb + nb * nb) / n**3
            + 6.0 * d**2 * (na * na * other.m2 + nb * nb * self.m2) / n**2
            + 4.0 * d * (na * other.m3 - nb * self.m3) / n
        )
        return SummaryStats(count=n, mean=mean, m2=m2, m3=m3, m4=m4)

    @property
    def variance(self):
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0

    @property
    def std(self):
        return math.sqrt(max(self.variance, 0.0))

    @property
    def skewness(self):
        if self.count < 2 or self.m2 <= 0:
            return 0.0
        return math.sqrt(self.count) * self.m3 / self.m2**1.5

    @property
    def excess_kurtosis(self):
        if self.count < 2 or self.m2 <= 0:
            return 0.0
        return self.count * self.m4 / self.m2**2 - 3.0


@dataclass
class ExperimentConfig:
    d: int
    n_grid: list
    replicas: int
    master_seed: int = 0
    checkpoint_policy: str = "pow2"
    green_radius: int = 16
    tol: float = 1e-8
    horizon: int = 10000
    out_dir: str = None

    def __post_init__(self):
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")
        if not self.n_grid or list(self.n_grid) != sorted(self.n_grid):
            raise ValueError("n_grid must be a nonempty sorted list")
        if self.d < 1:
            raise ValueError("d must be >= 1")


def checkpoint_times(policy, n):
    """Checkpoint times under a policy: 'pow2' (default), or 'linear:K'."""
    if policy == "pow2":
        cps = [1 << j for j in range(0, n.bit_length()) if (1 << j) <= n]
        if cps[-1] != n:
            cps.append(n)
        return np.array(cps, dtype=np.int64)
    if policy.startswith("linear:"):
        k = int(policy.split(":", 1)[1])
        return np.unique(np.linspace(0, n, k + 1).astype(np.int64))[1:]
    raise ValueError(f"unknown checkpoint policy {policy!r}")


def functional_series(path, n_grid, functional, table=None, transcript=None):
    """Values of a path functional at each n of the grid.

    functional: 'boundary', 'range', ('partition', mask), ('partition_class',
    rep), ('past_avoiding', mask), 'martingale', or 'residual'.  The last two
    require a green table.
    """
    tr = transcript if transcript is not None else RangeTranscript.from_path(path)
    ns = np.asarray(n_grid, dtype=np.int64)
    if functional == "boundary":
        return tr.boundary_series(ns).astype(np.float64)
    if functional == "range":
        return tr.range_series(ns).astype(np.float64)
    if functional in ("martingale", "residual"):
        if table is None:
            raise ValueError(f"functional {functional!r} needs a green table")
        t = trace(path, ns, table, transcript=tr)
        return t.M if functional == "martingale" else t.E
    kind, arg = functional
    if kind == "partition":
        return np.array(
            [tr.partition_counts(n)[arg] for n in ns], dtype=np.float64
        )
    if kind == "partition_class":
        canon_rep = canonical_class(arg, path.d)
        out = []
        for n in ns:
            counts = tr.partition_counts(n)
            masks = np.arange(counts.size)
            sel = [m for m in masks if canonical_class(int(m), path.d) == canon_rep]
            out.append(float(counts[sel].sum()))
        return np.array(out)
    if kind == "past_avoiding":
        return np.array(
            [past_avoiding_count(path, int(n), arg, include_origin=True) for n in ns],
            dtype=np.float64,
        )
    raise ValueError(f"unknown functional {functional!r}")


def _series_block(args):
    cfg, functional, r0, r1, table = args
    n = int(max(cfg.n_grid))
    out = np.empty((r1 - r0, len(cfg.n_grid)))
    for i, r in enumerate(range(r0, r1)):
        rng = replica_rng(cfg.master_seed, r)
        path = gen_srw(cfg.d, n, rng)
        out[i] = functional_series(path, cfg.n_grid, functional, table=table)
    return r0, out


def collect_series(cfg, functional, table=None, workers=1):
    """(replicas, len(n_grid)) array of functional values, replica-indexed.

    Output is identical for any worker count: replica r always uses the
    stream spawned from (master_seed, r) and rows are placed by index.
    """
    out = np.empty((cfg.replicas, len(cfg.n_grid)))
    blocks = []
    step = max(1, math.ceil(cfg.replicas / max(workers, 1) / 4))
    for r0 in range(0, cfg.replicas, step):
        blocks.append((cfg, functional, r0, min(r0 + step, cfg.replicas), table))
    if workers <= 1:
        results = map(_series_block, blocks)
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_series_block, blocks))
    for r0, arr in results:
        out[r0 : r0 + arr.shape[0]] = arr
    return out


def jackknife_variance(values, blocks=25):
    """Sample variance with a jackknife (leave-block-out) standard error."""
    x = np.asarray(values, dtype=np.float64)
    nb = min(blocks, x.size)
    var = float(x.var(ddof=1))
    parts = np.array_split(x, nb)
    loo = []
    total_n = x.size
    total_sum = x.sum()
    total_sq = (x**2).sum()
    for p in parts:
        m = total_n - p.size
        s = total_sum - p.sum()
        q = total_sq - (p**2).sum()
        loo.append((q - s * s / m) / (m - 1))
    loo = np.array(loo)
    se = math.sqrt(max((nb - 1) / nb * ((loo - loo.mean()) ** 2).sum(), 0.0))
    return var, se


def variance_scan(cfg, functional, table=None, workers=1):
    """Per-n sample variance of a functional with jackknife CI over replicas.

    Returns a list of rows {n, mean, var, var_se}.
    """
    series = collect_series(cfg, functional, table=table, workers=workers)
    rows = []
    for j, n in enumerate(cfg.n_grid):
        var, se = jackknife_variance(series[:, j])
        rows.append(
            {"n": int(n), "mean": float(series[:, j].mean()), "var": var, "var_se": se}
        )
    return rows


def _two_walk_block(args):
    cfg, table, r0, r1 = args
    d, T = cfg.d, cfg.horizon
    dirs = direction_array(d)
    vbar = np.vstack([np.zeros((1, d), dtype=np.int64), dirs])
    hits = np.empty(r1 - r0)
    bias = np.empty(r1 - r0)
    for i, r in enumerate(range(r0, r1)):
        rng = replica_rng(cfg.master_seed, r, stream=1)
        pos1 = gen_srw(d, T, rng).positions()
        pos2 = gen_srw(d, T, rng).positions()
        visited = set(map(tuple, pos1)) | set(map(tuple, pos2))
        uncovered = any(tuple(e) not in visited for e in dirs)
        no_return = not (pos1[1:] == 0).all(axis=1).any()
        hits[i] = 1.0 if (uncovered and no_return) else 0.0
        g1, _ = table.values_at(pos1[-1][None, :] - vbar)
        g2, _ = table.values_at(pos2[-1][None, :] - vbar)
        bias[i] = (g1.sum() + g2.sum()) / table.g00
    return r0, hits, bias


def estimate_nu(cfg, table, workers=1):
    """Two estimators of the boundary growth rate lim |boundary R_n| / n.

    (a) time average |boundary R_n|/n at the largest grid n (upward-biased by
        the subadditivity defect; the decrease between n/4 and n is reported
        as a convergence allowance);
    (b) probability that two independent T-step walks leave some neighbor of
        the origin unvisited while the first never returns to the origin,
        with a one-sided truncation-bias bound from Green tails.

    Returns a dict of estimates, standard errors, and bounds.
    """
    n = int(max(cfg.n_grid))
    n_quarter = max(n // 4, 1)
    cfg_q = ExperimentConfig(
        d=cfg.d,
        n_grid=sorted({n_quarter, n}),
        replicas=cfg.replicas,
        master_seed=cfg.master_seed,
        horizon=cfg.horizon,
    )
    both = collect_series(cfg_q, "boundary", workers=workers)
    series_quarter, series = both[:, 0], both[:, -1]
    direct = float(series.mean() / n)
    direct_se = float(series.std(ddof=1) / math.sqrt(series.size) / n)
    # upward finite-n bias allowance: the last observed decrease of E/n
    allowance = max(float(series_quarter.mean() / n_quarter) - direct, 0.0)

    blocks = []
    step = max(1, math.ceil(cfg.replicas / max(workers, 1) / 4))
    for r0 in range(0, cfg.replicas, step):
        blocks.append((cfg, table, r0, min(r0 + step, cfg.replicas)))
    if workers <= 1:
        results = map(_two_walk_block, blocks)
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_two_walk_block, blocks))
    hits = np.empty(cfg.replicas)
    bias = np.empty(cfg.replicas)
    for r0, h, b in results:
        hits[r0 : r0 + h.size] = h
        bias[r0 : r0 + b.size] = b
    twowalk = float(hits.mean())
    twowalk_se = float(hits.std(ddof=1) / math.sqrt(hits.size))
    bias_bound = float(bias.mean() + 3.0 * bias.std(ddof=1) / math.sqrt(bias.size))
    return {
        "d": cfg.d,
        "n": n,
        "T": cfg.horizon,
        "direct": direct,
        "direct_se": direct_se,
        "direct_allowance": allowance,
        "twowalk": twowalk,
        "twowalk_se": twowalk_se,
        "bias_bound": bias_bound,
        "agree": abs(direct - twowalk)
        <= 3.0 * (direct_se + twowalk_se) + bias_bound + allowance,
    }


def clt_test(cfg, table=None, functional="boundary", workers=1):
    """Normality diagnostics of the standardized functional at the largest n.

    Reports the KS distance to the standard normal plus sample skewness and
    excess kurtosis.  Refuses to run with fewer than 200 replicas (no power).
    """
    if cfg.replicas < 200:
        raise ValueError("clt_test needs at least 200 replicas")
    series = collect_series(cfg, functional, table=table, workers=workers)[:, -1]
    stats_acc = SummaryStats.from_values(series)
    z = (series - series.mean()) / series.std(ddof=1)
    ks = stats.kstest(z, "norm")
    return {
        "d": cfg.d,
        "n": int(max(cfg.n_grid)),
        "replicas": cfg.replicas,
        "ks": float(ks.statistic),
        "ks_pvalue": float(ks.pvalue),
        "mean": stats_acc.mean,
        "std": stats_acc.std,
        "skewness": stats_acc.skewness,
        "excess_kurtosis": stats_acc.excess_kurtosis,
    }


@dataclass
class RangeSnapshot:
    """Naive from-scratch range statistics of one path (test oracle)."""

    range_size: int
    boundary_size: int
    partition: Counter
    boundary_partition: Counter


def naive_range_stats(steps, d):
    """Set-based recomputation of range, boundary, and both partitions.

    Deliberately independent of the streaming implementation: builds the
    visited set and first-visit times from scratch and classifies every site
    by direct neighbor lookups.
    """
    dirs = [tuple(e) for e in direction_array(d)]
    pos = (0,) * d
    first = {pos: 0}
    order = [pos]
    for t, v in enumerate(steps, start=1):
        pos = tuple(c + e for c, e in zip(pos, dirs[v]))
        if pos not in first:
            first[pos] = t
            order.append(pos)
    sites = set(first)
    partition = Counter()
    boundary_partition = Counter()
    boundary = 0
    for s in order:
        k = first[s]
        mask = 0
        open_now = False
        for v, e in enumerate(dirs):
            q = tuple(c + ec for c, ec in zip(s, e))
            if first.get(q, None) is None:
                mask |= 1 << v
                open_now = True
            elif first[q] > k:
                mask |= 1 << v
        partition[mask] += 1
        if open_now:
            boundary += 1
            boundary_partition[mask] += 1
    return RangeSnapshot(
        range_size=len(sites),
        boundary_size=boundary,
        partition=partition,
        boundary_partition=boundary_partition,
    )


def _functional_of_snapshot(snap, functional, d):
    if functional == "boundary":
        return snap.boundary_size
    if functional == "range":
        return snap.range_size
    kind, arg = functional
    if kind == "partition_class":
        rep = canonical_class(arg, d)
        return sum(
            c for m, c in snap.partition.items() if canonical_class(m, d) == rep
        )
    if kind == "boundary_partition_class":
        rep = canonical_class(arg, d)
        return sum(
            c
            for m, c in snap.boundary_partition.items()
            if canonical_class(m, d) == rep
        )
    raise ValueError(f"unknown functional {functional!r}")


def exact_distribution(d, n, functional, n_max=8):
    """Exact distribution of a range functional by exhaustive enumeration.

    Returns {value: Fraction} with denominators (2d)^n.  The path budget is
    capped at (2d)^n_max (default corresponds to n = 8, d = 3).
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if (2 * d) ** n > (2 * 3) ** n_max:
        raise ValueError(f"enumeration budget exceeded: (2d)^n > (6)^{n_max}")
    counts = Counter()
    for steps in product(range(2 * d), repeat=n):
        snap = naive_range_stats(steps, d)
        counts[_functional_of_snapshot(snap, functional, d)] += 1
    total = (2 * d) ** n
    return {v: Fraction(c, total) for v, c in sorted(counts.items())}


def exact_mean(d, n, functional, n_max=8):
    dist = exact_distribution(d, n, functional, n_max=n_max)
    return sum(Fraction(v) * p for v, p in dist.items())


def martingale_onestep_residual(prefix, table):
    """E[M_{n+1} - M_n | path prefix] by exhaustive one-step extension.

    Zero (up to Green-table accuracy) for every prefix: the decomposition's
    conditional-expectation consistency check.
    """
    d = prefix.d
    n = len(prefix)
    m_n = trace(prefix, [n], table).M[0]
    acc = 0.0
    for e in range(2 * d):
        ext = WalkPath(d, np.concatenate([prefix.steps, [e]]))
        acc += trace(ext, [n + 1], table).M[0]
    return acc / (2 * d) - m_n
