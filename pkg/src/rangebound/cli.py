"""Command-line entry point.

Subcommands: green-build, simulate, decompose, estimate-nu, variance-scan,
clt-test, dyadic, enumerate, selftest.  Options may come from a flat
key=value config file (--config); explicit flags win.  Every run writes a
manifest.json sufficient to reproduce it and caches Green tables on disk
keyed by (d, radius, tol).

Exit codes: 0 success, 2 usage error, 3 numerical failure.
"""

import argparse
import csv
import json
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__, decompose, experiments, green, lattice, ranges, walk

MANIFEST_SCHEMA = 1


def _write_atomic(path, text):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def write_table(rows, path, fmt):
    if fmt == "json":
        _write_atomic(path, json.dumps(rows, indent=1) + "\n")
        return
    if not rows:
        _write_atomic(path, "")
        return
    header = list(rows[0].keys())
    import io

    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=header)
    w.writeheader()
    w.writerows(rows)
    _write_atomic(path, buf.getvalue())


def load_config_file(path):
    out = {}
    with open(path) as f:
        for line in f:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line not key=value: {line!r}")
            k, v = line.split("=", 1)
            out[k.strip().replace("-", "_")] = v.strip()
    return out


def green_cache_path(cache_dir, d, radius, tol):
    return os.path.join(cache_dir, f"green_d{d}_r{radius}_tol{tol:g}.npz")


def load_or_build_green(d, radius, tol, cache_dir="."):
    path = green_cache_path(cache_dir, d, radius, tol)
    if os.path.exists(path):
        table = green.GreenTable.load(path)
        if table.d == d and table.radius == radius:
            return table, path
    os.makedirs(cache_dir, exist_ok=True)
    table = green.build_green_table(d, radius, tol)
    table.save(path)
    return table, path


def parse_checkpoints(spec, n):
    """Checkpoint times: policy name ('pow2', 'linear:K') or comma list."""
    if "," in spec or spec.isdigit():
        cps = sorted({int(x) for x in spec.split(",") if x})
        if any(c < 0 or c > n for c in cps):
            raise ValueError("explicit checkpoints outside [0, n]")
        return np.array(cps, dtype=np.int64)
    return experiments.checkpoint_times(spec, n)


def _manifest(args, outputs, t0, green_path=None):
    cfg = {k: v for k, v in vars(args).items() if k not in ("func",)}
    doc = {
        "schema": MANIFEST_SCHEMA,
        "subcommand": args.subcommand,
        "config": cfg,
        "master_seed": getattr(args, "seed", None),
        "green_fingerprint": os.path.basename(green_path) if green_path else None,
        "versions": {
            "rangebound": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "outputs": outputs,
        "wall_time_s": round(time.time() - t0, 3),
    }
    path = os.path.join(args.out_dir, "manifest.json")
    _write_atomic(path, json.dumps(doc, indent=1, default=str) + "\n")
    return path


def _class_labels(d):
    return lattice.all_canonical_masks(d, nonempty=False)


# ---------------------------------------------------------------- replicas


def _simulate_block(job):
    d, n, seed, cps, r0, r1 = job
    canon = lattice.canonical_table(d)
    labels = _class_labels(d)
    rows = []
    for r in range(r0, r1):
        path = walk.gen_srw(d, n, walk.replica_rng(seed, r))
        tr = ranges.RangeTranscript.from_path(path)
        rs = tr.range_series(cps)
        bs = tr.boundary_series(cps)
        for i, t in enumerate(cps):
            counts = tr.partition_counts(int(t))
            by_class = {}
            for rep in labels:
                by_class[f"class_{rep:#06x}"] = int(counts[canon == rep].sum())
            row = {"replica": r, "n": int(t), "range": int(rs[i]), "boundary": int(bs[i])}
            row.update(by_class)
            rows.append(row)
    return r0, rows


def _decompose_block(job):
    d, n, seed, cps, radius, tol, cache_dir, r0, r1 = job
    table, _ = load_or_build_green(d, radius, tol, cache_dir)
    rows = []
    for r in range(r0, r1):
        path = walk.gen_srw(d, n, walk.replica_rng(seed, r))
        t = decompose.trace(path, cps, table)
        for i in range(len(cps)):
            rows.append(
                {
                    "replica": r,
                    "n": int(t.checkpoints[i]),
                    "boundary": t.boundary[i],
                    "A": t.A[i],
                    "X": t.X[i],
                    "M": t.M[i],
                    "E": t.E[i],
                    "X_error_bound": t.X_err[i],
                }
            )
    return r0, rows


def _dyadic_block(job):
    d, n, seed, levels, r0, r1 = job
    rows = []
    for r in range(r0, r1):
        path = walk.gen_srw(d, n, walk.replica_rng(seed, r))
        err, bound = decompose.dyadic_error(path, n, levels)
        rows.append(
            {
                "replica": r,
                "n": n,
                "levels": levels,
                "error": int(err),
                "bound": int(bound),
                "ok": bool(0 <= err <= bound),
            }
        )
    return r0, rows


def _run_blocks(fn, jobs, workers):
    if workers <= 1:
        results = [fn(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(fn, jobs))
    rows = []
    for _, part in sorted(results, key=lambda x: x[0]):
        rows.extend(part)
    return rows


def _blocks(replicas, workers, fixed):
    step = max(1, -(-replicas // max(workers, 1)))
    return [(*fixed, r0, min(r0 + step, replicas)) for r0 in range(0, replicas, step)]


# ---------------------------------------------------------------- commands


def cmd_green_build(args):
    t0 = time.time()
    table, path = load_or_build_green(args.d, args.green_radius, args.tol, args.out_dir)
    print(
        f"green table d={table.d} radius={table.radius} g00={table.g00:.12f} "
        f"eps={table.eps:.2e} -> {path}"
    )
    _manifest(args, [path], t0, green_path=path)
    return 0


def cmd_simulate(args):
    t0 = time.time()
    cps = parse_checkpoints(args.checkpoints, args.n)
    jobs = _blocks(args.replicas, args.workers, (args.d, args.n, args.seed, cps))
    rows = _run_blocks(_simulate_block, jobs, args.workers)
    out = os.path.join(args.out_dir, f"simulate.{args.format}")
    write_table(rows, out, args.format)
    if args.dump_paths:
        for r in range(args.replicas):
            path = walk.gen_srw(args.d, args.n, walk.replica_rng(args.seed, r))
            walk.save_path(path, os.path.join(args.out_dir, f"path_{r}.txt"), seed=args.seed)
    print(f"simulate: {args.replicas} replicas x {len(cps)} checkpoints -> {out}")
    _manifest(args, [out], t0)
    return 0


def cmd_decompose(args):
    t0 = time.time()
    cps = parse_checkpoints(args.checkpoints, args.n)
    if cps[0] == 0:
        cps = cps[1:]
    _, gpath = load_or_build_green(args.d, args.green_radius, args.tol, args.out_dir)
    jobs = _blocks(
        args.replicas,
        args.workers,
        (args.d, args.n, args.seed, cps, args.green_radius, args.tol, args.out_dir),
    )
    rows = _run_blocks(_decompose_block, jobs, args.workers)
    out = os.path.join(args.out_dir, f"decompose.{args.format}")
    write_table(rows, out, args.format)
    print(f"decompose: {args.replicas} replicas -> {out}")
    _manifest(args, [out], t0, green_path=gpath)
    return 0


def cmd_estimate_nu(args):
    t0 = time.time()
    table, gpath = load_or_build_green(args.d, args.green_radius, args.tol, args.out_dir)
    cfg = experiments.ExperimentConfig(
        d=args.d,
        n_grid=[args.n],
        replicas=args.replicas,
        master_seed=args.seed,
        horizon=args.horizon,
    )
    res = experiments.estimate_nu(cfg, table, workers=args.workers)
    out = os.path.join(args.out_dir, "nu.json")
    _write_atomic(out, json.dumps(res, indent=1) + "\n")
    print(
        f"nu_{args.d}: direct {res['direct']:.5f} (se {res['direct_se']:.5f}) | "
        f"two-walk {res['twowalk']:.5f} (se {res['twowalk_se']:.5f}, "
        f"bias <= {res['bias_bound']:.5f}) | agree: {res['agree']}"
    )
    _manifest(args, [out], t0, green_path=gpath)
    return 0


def _parse_functional(text):
    if ":" in text:
        kind, mask = text.split(":", 1)
        kind = {"partition": "partition", "past": "past_avoiding"}[kind]
        return (kind, int(mask, 0))
    return text


def cmd_variance_scan(args):
    t0 = time.time()
    functional = _parse_functional(args.functional)
    table = None
    gpath = None
    if functional in ("martingale", "residual"):
        table, gpath = load_or_build_green(args.d, args.green_radius, args.tol, args.out_dir)
    cfg = experiments.ExperimentConfig(
        d=args.d,
        n_grid=args.n_grid,
        replicas=args.replicas,
        master_seed=args.seed,
    )
    rows = experiments.variance_scan(cfg, functional, table=table, workers=args.workers)
    out = os.path.join(args.out_dir, f"variance.{args.format}")
    write_table(rows, out, args.format)
    outputs = [out]
    for row in rows:
        print(
            f"n={row['n']:>8} mean={row['mean']:.2f} var={row['var']:.2f} "
            f"var/n={row['var'] / row['n']:.4f} (se {row['var_se']:.2f})"
        )
    if args.plot:
        outputs.append(_plot_scan(rows, args.out_dir))
    _manifest(args, outputs, t0, green_path=gpath)
    return 0


def _plot_scan(rows, out_dir):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ns = np.array([r["n"] for r in rows], dtype=float)
    var = np.array([r["var"] for r in rows])
    mean = np.array([r["mean"] for r in rows])
    fig, ax = plt.subplots(1, 2, figsize=(9, 3.5))
    ax[0].plot(ns, var / ns, "o-")
    ax[0].set_xscale("log")
    ax[0].set_xlabel("n")
    ax[0].set_ylabel("Var / n")
    ax[1].plot(ns, mean / ns, "o-")
    ax[1].set_xscale("log")
    ax[1].set_xlabel("n")
    ax[1].set_ylabel("mean / n")
    fig.tight_layout()
    path = os.path.join(out_dir, "variance.svg")
    fig.savefig(path)
    plt.close(fig)
    return path


def cmd_clt_test(args):
    t0 = time.time()
    cfg = experiments.ExperimentConfig(
        d=args.d, n_grid=[args.n], replicas=args.replicas, master_seed=args.seed
    )
    res = experiments.clt_test(cfg, workers=args.workers)
    out = os.path.join(args.out_dir, "clt.json")
    _write_atomic(out, json.dumps(res, indent=1) + "\n")
    print(
        f"clt d={args.d} n={args.n}: KS={res['ks']:.4f} (p={res['ks_pvalue']:.3f}) "
        f"skew={res['skewness']:.3f} exkurt={res['excess_kurtosis']:.3f}"
    )
    _manifest(args, [out], t0)
    return 0


def cmd_dyadic(args):
    t0 = time.time()
    jobs = _blocks(args.replicas, args.workers, (args.d, args.n, args.seed, args.levels))
    rows = _run_blocks(_dyadic_block, jobs, args.workers)
    out = os.path.join(args.out_dir, f"dyadic.{args.format}")
    write_table(rows, out, args.format)
    bad = sum(1 for r in rows if not r["ok"])
    print(
        f"dyadic: {args.replicas} replicas, mean error "
        f"{np.mean([r['error'] for r in rows]):.2f}, mean bound "
        f"{np.mean([r['bound'] for r in rows]):.2f}, violations {bad}"
    )
    _manifest(args, [out], t0)
    return 0 if bad == 0 else 3


def cmd_enumerate(args):
    t0 = time.time()
    dist = experiments.exact_distribution(args.d, args.n, args.functional)
    rows = [
        {
            "value": v,
            "probability": str(p),
            "probability_float": float(p),
        }
        for v, p in dist.items()
    ]
    out = os.path.join(args.out_dir, f"enumerate.{args.format}")
    write_table(rows, out, args.format)
    mean = experiments.exact_mean(args.d, args.n, args.functional)
    for r in rows:
        print(f"P({args.functional} = {r['value']}) = {r['probability']}")
    print(f"mean = {mean}")
    _manifest(args, [out], t0)
    return 0


def cmd_selftest(args):
    t0 = time.time()
    failures = []

    def check(name, ok, detail=""):
        print(f"  [{'ok' if ok else 'FAIL'}] {name} {detail}")
        if not ok:
            failures.append(name)

    table, gpath = load_or_build_green(args.d, args.green_radius, args.tol, args.out_dir)
    ge = table.value(tuple([1] + [0] * (args.d - 1)))
    check(
        "neighbor identity G(0,e) = G(0,0) - 1",
        abs(ge - (table.g00 - 1)) <= 2 * table.tol,
        f"resid={ge - (table.g00 - 1):.2e}",
    )
    check("certified accuracy", table.eps <= table.tol, f"eps={table.eps:.2e}")
    h = green.hitting_distribution(tuple([2] + [0] * (args.d - 1)), [(0,) * args.d], table)
    expect = table.value(tuple([2] + [0] * (args.d - 1))) / table.g00
    check("singleton hitting probability", abs(h.total - expect) < 1e-10)
    if args.d == 3:
        mean = experiments.exact_mean(3, 2, "boundary")
        check("E|boundary R_2| = 17/6", str(mean) == "17/6", str(mean))
    rng = walk.replica_rng(args.seed, 0)
    sk = walk.gen_ndb(args.d, 2000, rng)
    cw = walk.ClockedWalk(sk, walk.gen_clock(args.d, len(sk) // 2, rng))
    sp = walk.splice(cw)
    trs = ranges.RangeTranscript.from_path(sk)
    trf = ranges.RangeTranscript.from_path(sp)
    ks = np.arange(len(sk) + 1)
    ok = (trs.boundary_series(ks) == trf.boundary_series(cw.mapped_times())).all()
    check("clock-process identity", bool(ok))
    _manifest(args, [], t0, green_path=gpath)
    if failures:
        print(f"selftest FAILED: {failures}")
        return 3
    print("selftest passed")
    return 0


# ---------------------------------------------------------------- parsing

_OPTION_TYPES = {
    "d": int,
    "n": int,
    "replicas": int,
    "seed": int,
    "green_radius": int,
    "tol": float,
    "horizon": int,
    "workers": int,
    "levels": int,
    "checkpoints": str,
    "functional": str,
    "format": str,
    "out_dir": str,
    "n_grid": str,
    "dump_paths": bool,
    "plot": bool,
}


def _add_common(sp, *names):
    defaults = {
        "d": 3,
        "n": 1024,
        "replicas": 10,
        "seed": 0,
        "green_radius": 12,
        "tol": 1e-8,
        "horizon": 10000,
        "workers": 1,
        "levels": 3,
        "checkpoints": "pow2",
        "format": "csv",
        "out_dir": ".",
    }
    for name in names:
        flag = "--" + name.replace("_", "-")
        if name == "n_grid":
            sp.add_argument("--n-grid", default=None, help="comma list of n values")
        elif name in ("dump_paths", "plot"):
            sp.add_argument(flag, action="store_true", default=None)
        elif name == "format":
            sp.add_argument(flag, choices=("csv", "json"), default=None)
        else:
            sp.add_argument(flag, type=_OPTION_TYPES[name], default=None)
    sp.set_defaults(**{f"_default_{k}": v for k, v in defaults.items()})


def _resolve(args, file_cfg):
    """Fill unset options from the config file, then from hard defaults."""
    for key, typ in _OPTION_TYPES.items():
        if not hasattr(args, key):
            continue
        if getattr(args, key) is None:
            if key in file_cfg:
                raw = file_cfg[key]
                if typ is bool:
                    setattr(args, key, raw.lower() in ("1", "true", "yes"))
                else:
                    setattr(args, key, typ(raw))
            elif hasattr(args, f"_default_{key}"):
                setattr(args, key, getattr(args, f"_default_{key}"))
    for key in list(vars(args)):
        if key.startswith("_default_"):
            delattr(args, key)
    if hasattr(args, "n_grid"):
        if args.n_grid is None:
            args.n_grid = [args.n] if hasattr(args, "n") else [1024]
        elif isinstance(args.n_grid, str):
            args.n_grid = sorted(int(x) for x in args.n_grid.split(",") if x)
    return args


def build_parser():
    p = argparse.ArgumentParser(
        prog="rangebound",
        description="Range-boundary workbench for transient random walk",
    )
    p.add_argument("--config", default=None, help="flat key=value config file")
    sub = p.add_subparsers(dest="subcommand", required=True)

    sp = sub.add_parser("green-build", help="build and cache a Green table")
    _add_common(sp, "d", "green_radius", "tol", "out_dir")
    sp.set_defaults(func=cmd_green_build)

    sp = sub.add_parser("simulate", help="replica range/boundary series")
    _add_common(
        sp, "d", "n", "replicas", "seed", "checkpoints", "workers", "out_dir", "format"
    )
    sp.add_argument("--dump-paths", action="store_true", default=None)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("decompose", help="martingale decomposition traces")
    _add_common(
        sp,
        "d",
        "n",
        "replicas",
        "seed",
        "checkpoints",
        "green_radius",
        "tol",
        "workers",
        "out_dir",
        "format",
    )
    sp.set_defaults(func=cmd_decompose)

    sp = sub.add_parser("estimate-nu", help="boundary growth rate estimators")
    _add_common(
        sp,
        "d",
        "n",
        "replicas",
        "seed",
        "horizon",
        "green_radius",
        "tol",
        "workers",
        "out_dir",
    )
    sp.set_defaults(func=cmd_estimate_nu)

    sp = sub.add_parser("variance-scan", help="variance of a functional over n")
    _add_common(
        sp,
        "d",
        "n_grid",
        "replicas",
        "seed",
        "functional",
        "green_radius",
        "tol",
        "workers",
        "out_dir",
        "format",
        "plot",
    )
    sp.set_defaults(func=cmd_variance_scan, _default_functional="boundary")

    sp = sub.add_parser("clt-test", help="normality diagnostics at fixed n")
    _add_common(sp, "d", "n", "replicas", "seed", "workers", "out_dir")
    sp.set_defaults(func=cmd_clt_test)

    sp = sub.add_parser("dyadic", help="dyadic splitting error and bound")
    _add_common(sp, "d", "n", "replicas", "seed", "levels", "workers", "out_dir", "format")
    sp.set_defaults(func=cmd_dyadic)

    sp = sub.add_parser("enumerate", help="exact small-n distributions")
    _add_common(sp, "d", "n", "functional", "out_dir", "format")
    sp.set_defaults(func=cmd_enumerate, _default_functional="boundary", _default_n=2)

    sp = sub.add_parser("selftest", help="identity and oracle checks")
    _add_common(sp, "d", "seed", "green_radius", "tol", "out_dir")
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    file_cfg = {}
    if args.config:
        try:
            file_cfg = load_config_file(args.config)
        except (OSError, ValueError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
    args = _resolve(args, file_cfg)
    if hasattr(args, "out_dir"):
        os.makedirs(args.out_dir, exist_ok=True)
    try:
        return args.func(args)
    except green.GreenAccuracyError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
