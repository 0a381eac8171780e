"""Lattice Green's function engine and derived hitting/cover probabilities.

The Green's function of simple random walk on Z^d (d >= 3),

    G(0,z) = sum_{k>=0} P(S_k = z)
           = (2 pi)^{-d} int_{[-pi,pi]^d} cos<theta,z> / (1 - phi(theta)) dtheta,

with phi(theta) = (1/d) sum_j cos theta_j, is evaluated here through the
equivalent one-dimensional representation obtained by writing
1/(1-phi) = int_0^inf exp(-s(1-phi)) ds and integrating the angular variables
exactly:

    G(0,z) = int_0^inf prod_j e^{-s/d} I_{z_j}(s/d) ds,

a smooth positive integrand (product of scaled Bessel functions) with an
algebraic tail t^{-d/2}.  The finite part is done by composite Gauss-Legendre
panels and the tail by an analytically integrated asymptotic series, which
gives near machine precision for every site of the table.

All first-passage quantities reduce to tiny dense linear systems in the Green
Gram matrix: hitting distributions of a finite set, cover probabilities via
the first-entry recursion, the escape probabilities rho_V driving the
martingale decomposition, the cover-gradient constant c(Lambda), and the
last-passage covariance kernel b_V.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import ive

from .lattice import (
    all_canonical_masks,
    canonical_class,
    canonical_table,
    direction_array,
    mask_directions,
)

__all__ = [
    "GreenAccuracyError",
    "GreenTable",
    "TruncatedGreenTable",
    "HittingDistribution",
    "BoundaryGradientConstant",
    "build_green_table",
    "truncated_green",
    "hitting_distribution",
    "cover_probability",
    "noncover_probability",
    "noncover_table",
    "cover_gradient_constant",
    "joint_hitting_covariance",
    "EscapeTable",
    "origin_return_series_d3",
    "g00_series_estimate_d3",
    "bubble_sum_d3",
]


class GreenAccuracyError(RuntimeError):
    """Raised when a requested accuracy cannot be certified; carries the
    achieved accuracy in .achieved."""

    def __init__(self, msg, achieved=None):
        super().__init__(msg)
        self.achieved = achieved


def _green_asymptotic_coef(d):
    # G(0,z) ~ a_d / |z|^{d-2}; leading constant of the local CLT integral
    return math.gamma(d / 2 - 1) * (d / (2 * math.pi)) ** (d / 2) * (2 / d) ** (
        (d - 2) / 2
    )


def _bessel_quadrature(orders, d, npanel=48, order=24, mterms=8):
    """G(0,z) for a batch of sites given by |coordinate| arrays.

    orders: (nz, d) nonnegative int array.  Returns (values, tail_remainder)
    where tail_remainder bounds the truncation of the asymptotic series.
    """
    orders = np.asarray(orders, dtype=np.int64)
    kmax = int(orders.max()) if orders.size else 0
    T = max(4000.0, 5.0 * d * max(kmax * kmax, 400))
    edges = np.concatenate([[0.0], np.geomspace(1e-3, T, npanel)])
    x, w = leggauss(order)
    a, b = edges[:-1], edges[1:]
    t = ((a + b) / 2)[:, None] + ((b - a) / 2)[:, None] * x[None, :]
    wt = (((b - a) / 2)[:, None] * w[None, :]).ravel()
    t = t.ravel()
    vals = np.ones((orders.shape[0], t.size))
    for j in range(d):
        vals *= ive(orders[:, j : j + 1], t[None, :] / d)
    main = vals @ wt

    # tail: per-factor series ive(k, t/d) ~ (2 pi t/d)^{-1/2} sum_m c_m (d/t)^m
    nz = orders.shape[0]
    series = np.zeros((nz, mterms))
    series[:, 0] = 1.0
    for j in range(d):
        mu = 4.0 * orders[:, j].astype(np.float64) ** 2
        c = np.zeros((nz, mterms))
        c[:, 0] = 1.0
        term = np.ones(nz)
        for m in range(1, mterms):
            term = term * (mu - (2 * m - 1) ** 2) / (m * 8.0)
            c[:, m] = (-1) ** m * term * d**m
        out = np.zeros_like(series)
        for i in range(mterms):
            out[:, i:] += series[:, : mterms - i] * c[:, i : i + 1]
        series = out
    pref = (2 * math.pi / d) ** (-d / 2.0)
    expo = d / 2.0 - 1.0 + np.arange(mterms)
    tail = pref * (series * T ** (-expo) / expo).sum(axis=1)
    # remainder scale: magnitude of the last kept term, doubled
    remainder = 2.0 * pref * np.abs(series[:, -1]) * T ** (-expo[-1]) / expo[-1]
    return main + tail, remainder


@dataclass
class GreenTable:
    """Dense table of G(0,z) on the cube [-R, R]^d with certified accuracy.

    `box` holds the cube values (origin at index (R,...,R)); beyond the cube,
    values are served by the fitted asymptotic a_d/|z|^{d-2} with certified
    absolute error <= far_err_coef/|z|^d.  eps bounds the absolute error of
    every in-cube value (empirically certified by harmonicity residuals).
    """

    d: int
    radius: int
    tol: float
    eps: float
    g00: float
    box: np.ndarray
    asym_coef: float
    far_err_coef: float
    _caches: dict = field(default_factory=dict, repr=False)

    def value(self, z):
        z = np.asarray(z, dtype=np.int64)
        if np.abs(z).max(initial=0) <= self.radius:
            return float(self.box[tuple(z + self.radius)])
        r = float(np.sqrt((z * z).sum()))
        return self.asym_coef * r ** (2 - self.d)

    def values_at(self, zs):
        """Vectorized G(0,z) with per-value certified error bounds.

        zs: (..., d) int array.  Returns (values, err) of shape (...,).
        """
        zs = np.asarray(zs, dtype=np.int64)
        flat = zs.reshape(-1, self.d)
        inside = np.abs(flat).max(axis=1) <= self.radius
        vals = np.empty(flat.shape[0])
        err = np.empty(flat.shape[0])
        if inside.any():
            idx = flat[inside] + self.radius
            vals[inside] = self.box[tuple(idx.T)]
            err[inside] = self.eps
        if (~inside).any():
            far = flat[~inside].astype(np.float64)
            r = np.sqrt((far * far).sum(axis=1))
            vals[~inside] = self.asym_coef * r ** (2 - self.d)
            err[~inside] = self.far_err_coef * r ** (-self.d)
        return vals.reshape(zs.shape[:-1]), err.reshape(zs.shape[:-1])

    def require_radius(self, need):
        if need > self.radius:
            raise ValueError(
                f"green table radius {self.radius} too small, need >= {need}"
            )

    def fingerprint(self):
        return f"green_d{self.d}_r{self.radius}_tol{self.tol:g}"

    def save(self, path):
        np.savez_compressed(
            path,
            d=self.d,
            radius=self.radius,
            tol=self.tol,
            eps=self.eps,
            g00=self.g00,
            box=self.box,
            asym_coef=self.asym_coef,
            far_err_coef=self.far_err_coef,
        )

    @classmethod
    def load(cls, path):
        z = np.load(path)
        return cls(
            d=int(z["d"]),
            radius=int(z["radius"]),
            tol=float(z["tol"]),
            eps=float(z["eps"]),
            g00=float(z["g00"]),
            box=z["box"],
            asym_coef=float(z["asym_coef"]),
            far_err_coef=float(z["far_err_coef"]),
        )


def build_green_table(d, radius, tol=1e-8, npanel=48, order=24):
    """Build the Green table on the cube [-radius, radius]^d.

    The quadrature is run once per orbit of the signed-permutation symmetry
    and spread across the cube.  The certified eps is the maximum residual of
    the discrete harmonicity identity over the cube interior (a strict
    consistency test of every value against its 2d neighbors); raises
    GreenAccuracyError if it exceeds tol.
    """
    if d < 3:
        raise ValueError("green table requires transient dimension d >= 3")
    if radius < 2:
        raise ValueError("radius must be >= 2")
    if tol <= 0:
        raise ValueError("tol must be positive")
    side = 2 * radius + 1
    grids = np.meshgrid(*([np.arange(-radius, radius + 1)] * d), indexing="ij")
    coords = np.stack([g.ravel() for g in grids], axis=1)
    canon = np.sort(np.abs(coords), axis=1)[:, ::-1]
    reps, inverse = np.unique(canon, axis=0, return_inverse=True)

    values = np.empty(reps.shape[0])
    kmax = reps.max(axis=1)
    # batch by the quadrature horizon bucket (T grows with the largest coord)
    buckets = np.searchsorted([8, 16, 32, 64, 128, 256], kmax, side="right")
    for bkt in np.unique(buckets):
        sel = buckets == bkt
        vals, _ = _bessel_quadrature(reps[sel], d, npanel=npanel, order=order)
        values[sel] = vals

    box = values[inverse].reshape((side,) * d)
    g00 = float(box[(radius,) * d])

    # certify: harmonicity residual on the cube interior
    center = box[(slice(1, -1),) * d]
    acc = np.zeros_like(center)
    for j in range(d):
        for s in (0, 2):
            ix = tuple(
                slice(s, side - 2 + s) if jj == j else slice(1, -1) for jj in range(d)
            )
            acc += box[ix]
    resid = acc / (2 * d) - center
    origin_idx = (radius - 1,) * d  # identity picks up +1 at the origin
    resid[origin_idx] = acc[origin_idx] / (2 * d) + 1.0 - center[origin_idx]
    eps = max(4.0 * float(np.abs(resid).max()), 1e-14)
    if eps > tol:
        raise GreenAccuracyError(
            f"quadrature accuracy {eps:.3e} exceeds requested tol {tol:.3e}",
            achieved=eps,
        )

    asym_coef = _green_asymptotic_coef(d)
    # fitted far-field error constant on the outer shell, with safety margin
    rim = np.abs(coords).max(axis=1) >= radius - 2
    rr = np.sqrt((coords[rim].astype(float) ** 2).sum(axis=1))
    dev = np.abs(values[inverse][rim] - asym_coef * rr ** (2 - d)) * rr**d
    far_err_coef = 2.0 * float(dev.max())

    if g00 <= 1.0 or (box <= 0).any():
        raise GreenAccuracyError("green table failed positivity invariants")
    return GreenTable(
        d=d,
        radius=radius,
        tol=tol,
        eps=eps,
        g00=g00,
        box=box,
        asym_coef=asym_coef,
        far_err_coef=far_err_coef,
    )


@dataclass
class TruncatedGreenTable:
    """G_n(0,z) = sum_{k<=n} P(S_k = z) on the cube [-box, box]^d."""

    d: int
    n: int
    half_width: int
    values: np.ndarray

    def value(self, z):
        z = np.asarray(z, dtype=np.int64)
        if np.abs(z).max(initial=0) > self.half_width:
            return 0.0
        return float(self.values[tuple(z + self.half_width)])


def truncated_green(d, n, box):
    """Exact dynamic programming of G_n(0,z); deterministic.

    box is the cube half-width and must be >= n, otherwise probability mass
    would leave the array and the result would not be exact.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if box < n:
        raise ValueError(f"box half-width {box} smaller than horizon {n}: mass lost")
    side = 2 * box + 1
    p = np.zeros((side,) * d)
    p[(box,) * d] = 1.0
    g = p.copy()
    for _ in range(n):
        q = np.zeros_like(p)
        for j in range(d):
            src = tuple(slice(None) if jj != j else slice(0, side - 1) for jj in range(d))
            dst = tuple(slice(None) if jj != j else slice(1, side) for jj in range(d))
            q[dst] += p[src]
            q[src] += p[dst]
        p = q / (2 * d)
        g += p
    return TruncatedGreenTable(d=d, n=n, half_width=box, values=g)


@dataclass
class HittingDistribution:
    """First-entry distribution h(x) = P_z(S_{H_Lambda} = x, H_Lambda < inf)."""

    source: tuple
    targets: tuple
    weights: dict
    cond: float

    @property
    def total(self):
        return float(sum(self.weights.values()))


def _as_point(z, d):
    t = tuple(int(c) for c in z)
    if len(t) != d:
        raise ValueError(f"point {t} has wrong dimension (expected {d})")
    return t


def _gram(points, table):
    pts = np.array(points, dtype=np.int64)
    diffs = pts[:, None, :] - pts[None, :, :]
    need = int(np.abs(diffs).max())
    table.require_radius(need)
    vals, _ = table.values_at(diffs)
    return vals


def hitting_distribution(z, points, table):
    """Solve sum_y h(y) G(y,x) = G(z,x) - 1{z=x} for all x in the target set.

    The delta correction makes the identity valid also for z inside the set
    (hitting times count times >= 1 only).  Raises GreenAccuracyError when the
    Gram system is too ill-conditioned to trust.
    """
    d = table.d
    z = _as_point(z, d)
    points = tuple(dict.fromkeys(_as_point(p, d) for p in points))
    if not points:
        raise ValueError("target set must be nonempty")
    gram = _gram(points, table)
    zarr = np.asarray(z, dtype=np.int64)
    pts = np.array(points, dtype=np.int64)
    diffs = zarr[None, :] - pts
    table.require_radius(int(np.abs(diffs).max()))
    rhs, _ = table.values_at(diffs)
    for i, p in enumerate(points):
        if p == z:
            rhs[i] -= 1.0
    cond = float(np.linalg.cond(gram))
    if not np.isfinite(cond) or cond > 1e12:
        raise GreenAccuracyError(
            f"hitting system ill-conditioned (cond ~ {cond:.2e})", achieved=cond
        )
    h = np.linalg.solve(gram, rhs)
    h = np.where(np.abs(h) < 1e-12, np.maximum(h, 0.0), h)
    if (h < 0).any():
        raise GreenAccuracyError(f"negative hitting weight {h.min():.3e}")
    return HittingDistribution(
        source=z, targets=points, weights=dict(zip(points, h.tolist())), cond=cond
    )


def cover_probability(z, points, table):
    """P_z(Lambda subset of the range on an infinite horizon).

    First-entry recursion: f(z, {}) = 1; f(z, L) = f(z, L\\{z}) when z in L
    (the start point counts as visited); otherwise
    f(z, L) = sum_x h_L(z, x) f(x, L\\{x}).  Memoized per table.
    """
    d = table.d
    z = _as_point(z, d)
    points = frozenset(_as_point(p, d) for p in points)
    cache = table._caches.setdefault("cover", {})

    def rec(src, todo):
        if not todo:
            return 1.0
        key = (src, todo)
        val = cache.get(key)
        if val is not None:
            return val
        if src in todo:
            val = rec(src, todo - {src})
        else:
            h = hitting_distribution(src, sorted(todo), table)
            val = 0.0
            for x, w in h.weights.items():
                if w:
                    val += w * rec(x, todo - {x})
        cache[key] = val
        return val

    return rec(z, points)


def noncover_probability(mask, table):
    """rho_V = P(V not subset of the infinite-horizon range from the origin).

    Zero for the empty mask by convention; depends only on the isometry class
    of the mask (computed on the canonical representative).
    """
    if mask == 0:
        return 0.0
    d = table.d
    cache = table._caches.setdefault("rho", {})
    rep = canonical_class(mask, d)
    val = cache.get(rep)
    if val is None:
        dirs = direction_array(d)
        pts = [tuple(dirs[v]) for v in mask_directions(rep, d)]
        val = 1.0 - cover_probability((0,) * d, pts, table)
        cache[rep] = val
    return val


def noncover_table(table):
    """rho_V for every mask, as an array indexed by mask value."""
    d = table.d
    canon = canonical_table(d)
    out = np.zeros(1 << (2 * d))
    for rep in all_canonical_masks(d):
        out[canon == rep] = noncover_probability(rep, table)
    return out


@dataclass
class BoundaryGradientConstant:
    """c(Lambda): slope constant of the cover probability along rays."""

    points: tuple
    c: float
    v_d: float


def cover_gradient_constant(points, table):
    d = table.d
    points = tuple(dict.fromkeys(_as_point(p, d) for p in points))
    pset = set(points)
    dirs = direction_array(d)
    v_d = math.pi ** (d / 2) / math.gamma(d / 2 + 1)
    total = 0.0
    for x in points:
        cov_x = cover_probability(x, points, table)
        for e in dirs:
            v = tuple(int(a + b) for a, b in zip(x, e))
            if v in pset:
                continue
            h = hitting_distribution(v, points, table)
            total += (1.0 - h.total) * cov_x
    return BoundaryGradientConstant(points=points, c=total / (d * v_d), v_d=v_d)


def joint_hitting_covariance(x, mask, table):
    """b_V(x) = P_x(hit Vbar, avoid x+Vbar) gap against independence:

        b_V(x) = P_x(H_A < inf) P_x(H_B = inf) - P_x(H_A < inf, H_B = inf),

    with A = V union {0} and B = x + A.  Equals the covariance of the two
    hitting indicators.  x must lie outside A.
    """
    d = table.d
    x = _as_point(x, d)
    dirs = direction_array(d)
    a_pts = [(0,) * d] + [tuple(dirs[v]) for v in mask_directions(mask, d)]
    if x in a_pts:
        raise ValueError("x must lie outside V union {0}")
    b_pts = [tuple(int(c + xc) for c, xc in zip(p, x)) for p in a_pts]
    aset, bset = set(a_pts), set(b_pts)
    union = sorted(aset | bset)
    p_a = hitting_distribution(x, a_pts, table).total
    p_b = hitting_distribution(x, b_pts, table).total
    h_u = hitting_distribution(x, union, table)
    joint = 0.0
    for y, w in h_u.weights.items():
        if not w:
            continue
        if y in aset and y in bset:
            joint += w
        elif y in aset:
            joint += w * hitting_distribution(y, b_pts, table).total
        else:
            joint += w * hitting_distribution(y, a_pts, table).total
    return joint - p_a * p_b


class EscapeTable:
    """Vectorized escape probabilities P_w(V not subset of range), for the
    sample-path decomposition.

    For each neighbor mask V the cover probability factorizes through the
    first entry into Lambda(V) = {e_v : v in V}:

        f(w, Lambda) = u(Lambda) . [G(w - x)]_{x in Lambda},
        u(Lambda) = Gram(Lambda)^{-1} [f(x, Lambda\\{x})]_x,

    exactly, for any w outside Lambda.  In-cube G values are table lookups;
    beyond the cube the fitted asymptotic with certified error bound is used,
    so every escape value carries an explicit absolute error bound.
    """

    def __init__(self, table):
        self.table = table
        d = table.d
        self.d = d
        dirs = direction_array(d)
        nmask = 1 << (2 * d)
        self.u_pad = np.zeros((nmask, 2 * d))
        self.pts_pad = np.zeros((nmask, 2 * d, d), dtype=np.int64)
        for mask in range(1, nmask):
            vs = mask_directions(mask, d)
            pts = [tuple(dirs[v]) for v in vs]
            gram = _gram(pts, table)
            fvec = np.array(
                [cover_probability(p, [q for q in pts if q != p], table) for p in pts]
            )
            u = np.linalg.solve(gram, fvec)
            self.u_pad[mask, : len(vs)] = u
            self.pts_pad[mask, : len(vs)] = dirs[vs]
        self.u_abs = np.abs(self.u_pad).sum(axis=1)

    def escape_batch(self, w, masks):
        """(escape, err) for rows of w (m, d) and neighbor masks (m,).

        escape = P_w(Lambda(mask) not subset of fresh infinite range), with a
        per-entry certified absolute error bound.  Empty masks give 0.
        """
        w = np.asarray(w, dtype=np.int64)
        masks = np.asarray(masks, dtype=np.int64)
        pts = w[:, None, :] - self.pts_pad[masks]
        g, gerr = self.table.values_at(pts)
        u = self.u_pad[masks]
        f = (u * g).sum(axis=1)
        err = (np.abs(u) * gerr).sum(axis=1)
        esc = np.where(masks == 0, 0.0, np.clip(1.0 - f, 0.0, 1.0))
        return esc, np.where(masks == 0, 0.0, err)

    def escape(self, w, mask):
        esc, err = self.escape_batch(np.asarray([w]), np.asarray([mask]))
        return float(esc[0]), float(err[0])


def origin_return_series_d3(nmax):
    """P(S_m = 0) for m = 0..nmax in d=3, exact to floating precision.

    P(S_{2k}=0) = C(2k,k) a_k / 36^k where a_k = sum over three-part
    compositions of k of squared multinomials; a_k obeys the holonomic
    recurrence (k+1)^2 a_{k+1} = (10k^2+10k+3) a_k - 9 k^2 a_{k-1}.  The
    ratios are iterated in floating point (the recurrence is contracting,
    so the relative error stays at rounding level).
    """
    out = np.zeros(nmax + 1)
    out[0] = 1.0
    rho = 3.0  # a_1 / a_0
    p = 1.0  # P(S_0 = 0)
    for k in range(0, nmax // 2):
        p = p * ((2 * k + 1) * (2 * k + 2)) / ((k + 1) * (k + 1)) * rho / 36.0
        out[2 * k + 2] = p
        kk = k + 1
        rho = ((10 * kk * kk + 10 * kk + 3) - 9 * kk * kk / rho) / ((kk + 1) * (kk + 1))
    return out


def g00_series_estimate_d3(nmax=20000):
    """Partial sums of the return series plus an integrable tail estimate.

    Returns (estimate, err) where err is a desk-scale allowance for the tail
    approximation, an order below the tail itself.
    """
    p = origin_return_series_d3(nmax)
    partial = float(p.sum())
    half = nmax // 2
    c = 2.0 * (3.0 / (4.0 * math.pi)) ** 1.5
    tail = c * 2.0 / math.sqrt(half)
    err = 3.0 * c / half**1.5 + c / half  # integral discretization + next order
    return partial + tail, err


def bubble_sum_d3(n, returns=None):
    """sum_z G_n(0,z)^2 in d=3 via the pair-count identity

        sum_z G_n(0,z)^2 = sum_{m=0}^{2n} #{(k,l): k+l=m, k,l<=n} P(S_m=0),

    which follows from Chapman-Kolmogorov and the symmetry of the walk.
    """
    if returns is None:
        returns = origin_return_series_d3(2 * n)
    m = np.arange(2 * n + 1)
    w = np.minimum(np.minimum(m, n), 2 * n - m) + 1
    return float((w * returns[: 2 * n + 1]).sum())
