"""Sample-path evaluation of the boundary decomposition

    |boundary R_n| = A_n + M_n + E_n,

where A_n = sum_V rho_V |R_{n-1,V}| is the predictable (range-like) part
driven by the escape-probability table, M_n is a martingale, and E_n is the
error of replacing future-dependent boundary indicators by their conditional
expectations.  M_n + A_n = X_n is computed directly:

    X_n = sum over first visits k <= n-1 with nonempty mask of
          P_{S_n - S_k}(current unvisited-neighbor set of S_k not covered),

each escape probability evaluated from the Green table (with certified error
bounds in the far field).  The identity boundary = A + M + E holds exactly by
construction; the substance is that A uses the independently computed rho
table.

Also here: the dyadic splitting error of the boundary along strand halvings,
and the quantitative subadditivity bracket (Hammersley) used to locate limits
of a_n/n with explicit error bands.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaincc

from .green import EscapeTable, noncover_table
from .ranges import RangeTranscript, dyadic_overlap, segment_boundary_count

__all__ = [
    "scale_function",
    "DecompositionTrace",
    "trace",
    "dyadic_error",
    "GrowthFunction",
    "HammersleyBracket",
    "hammersley_bracket",
]


def scale_function(d, n):
    """Dimension-dependent intersection scale: sqrt(n) in d=3, log n in d=4,
    constant 1 beyond."""
    if d < 3:
        raise ValueError("defined for d >= 3")
    if d == 3:
        return math.sqrt(n)
    if d == 4:
        return math.log(n)
    return 1.0


@dataclass
class DecompositionTrace:
    """Per-checkpoint values of the decomposition on one path.

    At each checkpoint n: boundary = |boundary R_n|, A = compensator,
    X = conditional boundary estimate, M = X - A (martingale), E = boundary - X,
    X_err = certified absolute error bound on X from Green far-field
    evaluation.  boundary = A + M + E holds exactly by construction.
    """

    checkpoints: np.ndarray
    boundary: np.ndarray
    A: np.ndarray
    X: np.ndarray
    M: np.ndarray
    E: np.ndarray
    X_err: np.ndarray


def _escape_table(table):
    cache = table._caches
    if "escape_table" not in cache:
        cache["escape_table"] = EscapeTable(table)
    return cache["escape_table"]


def _rho_array(table):
    cache = table._caches
    if "rho_array" not in cache:
        cache["rho_array"] = noncover_table(table)
    return cache["rho_array"]


def trace(path, checkpoints, table, transcript=None):
    """Evaluate the decomposition at the given checkpoint times."""
    cps = np.asarray(checkpoints, dtype=np.int64)
    if cps.size and (np.diff(cps) <= 0).any():
        raise ValueError("checkpoints must be strictly increasing")
    if cps.size and (cps[0] < 0 or cps[-1] > len(path)):
        raise ValueError("checkpoints outside path horizon")
    if table.d != path.d:
        raise ValueError("green table dimension mismatch")
    tr = transcript if transcript is not None else RangeTranscript.from_path(path)
    esc = _escape_table(table)
    rho = _rho_array(table)

    boundary = tr.boundary_series(cps).astype(np.float64)
    # A_n: prefix sums of rho over first-visit records in birth order
    rho_prefix = np.concatenate([[0.0], np.cumsum(rho[tr.first_masks])])
    masks_all = tr.first_masks
    pos_cp = path.positions()[cps]

    A = np.empty(cps.size)
    X = np.empty(cps.size)
    Xerr = np.empty(cps.size)
    for i, n in enumerate(cps):
        nrec = int(np.searchsorted(tr.birth, n - 1, side="right"))
        A[i] = rho_prefix[nrec]
        live = tr.live_masks(n)[:nrec]
        sel = masks_all[:nrec] != 0
        if not sel.any():
            X[i] = 0.0
            Xerr[i] = 0.0
            continue
        w = pos_cp[i][None, :] - tr.pos[:nrec][sel]
        e, err = esc.escape_batch(w, live[sel])
        X[i] = e.sum()
        Xerr[i] = err.sum()
    M = X - A
    E = boundary - X
    return DecompositionTrace(
        checkpoints=cps, boundary=boundary, A=A, X=X, M=M, E=E, X_err=Xerr
    )


def dyadic_error(path, n, levels):
    """Boundary defect of the dyadic splitting after `levels` halvings.

    Returns (error, bound): error is the excess of the summed strand
    boundaries over the whole-path boundary, bound is the total of the
    per-split overlap functionals.  0 <= error <= bound holds path-wise.
    """
    if levels < 0:
        raise ValueError("levels must be >= 0")
    if levels and (1 << levels) > n:
        raise ValueError("2^levels must not exceed n")
    if levels == 0:
        return 0, 0
    total = segment_boundary_count(path, 0, n)
    parts = 0
    for i in range(1, (1 << levels) + 1):
        a = (i - 1) * n // (1 << levels)
        b = i * n // (1 << levels)
        parts += segment_boundary_count(path, a, b)
    bound = 0
    for lev in range(1, levels + 1):
        for k in range(1, (1 << (lev - 1)) + 1):
            bound += dyadic_overlap(path, n, lev, k)
    return parts - total, bound


@dataclass
class GrowthFunction:
    """b_k = c * k^alpha * (log k)^beta, positive and nondecreasing.

    alpha < 1 (with beta >= 0) keeps sum b_k / (k(k+1)) finite, the
    hypothesis of the subadditivity bracket.
    """

    c: float
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("c must be >= 0")
        if self.c > 0 and not 0 <= self.alpha < 1:
            raise ValueError("need 0 <= alpha < 1 for a summable weighted tail")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")

    def __call__(self, k):
        if self.c == 0:
            return 0.0
        k = np.asarray(k, dtype=np.float64)
        return self.c * k**self.alpha * np.log(k) ** self.beta

    def weighted_tail_upper(self, m, direct_terms=4096):
        """Upper bound on sum_{k>m} b_k / (k(k+1)).

        Exact partial sum over a window, then the integral majorant
        c * int_M^inf t^(alpha-2) log(t)^beta dt (valid once the integrand is
        decreasing, guaranteed past the window).
        """
        if self.c == 0:
            return 0.0
        mm = int(m)
        window = np.arange(mm + 1, mm + direct_terms + 1, dtype=np.float64)
        head = float((self(window) / (window * (window + 1))).sum())
        big_m = mm + direct_terms
        s = self.beta + 1
        x = (1 - self.alpha) * math.log(big_m)
        tail = self.c * (1 - self.alpha) ** (-s) * float(gammaincc(s, x)) * math.gamma(s)
        return head + tail


@dataclass
class HammersleyBracket:
    n: int
    a_over_n: float
    lower: float
    upper: float


def hammersley_bracket(a, b, b_prime, n):
    """Quantitative subadditivity bracket: if

        a_j + a_k - b'_{j+k} <= a_{j+k} <= a_j + a_k + b_{j+k}

    with b, b' positive nondecreasing and sum (b_k + b'_k)/(k(k+1)) finite,
    then a_n/n - lim a_k/k lies in

        [ b_n/n - 4 T(b, 2n),  -b'_n/n + 4 T(b', 2n) ],

    T(g, m) = sum_{k>m} g_k/(k(k+1)).  Tail sums are evaluated with safe
    upper bounds so the returned bracket always contains the stated interval.

    a is a sequence oracle (callable on n); b, b' are GrowthFunction objects.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    a_n = float(a(n))
    tail_b = b.weighted_tail_upper(2 * n)
    tail_bp = b_prime.weighted_tail_upper(2 * n)
    b_n = float(b(n)) if b.c else 0.0
    bp_n = float(b_prime(n)) if b_prime.c else 0.0
    lower = b_n / n - 4.0 * tail_b
    upper = -bp_n / n + 4.0 * tail_bp
    if lower > upper:
        raise ValueError("bracket endpoints crossed; growth functions invalid")
    return HammersleyBracket(n=n, a_over_n=a_n / n, lower=lower, upper=upper)
