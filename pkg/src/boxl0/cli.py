"""Command-line front end: benchmarks, ad-hoc solves, image recovery, plots, self-checks."""

from __future__ import annotations

import argparse
import math
import os
import sys
from typing import Optional

import numpy as np

from . import bench
from .baselines import solve_pga, solve_piht
from .model import BoxBounds, LeastSquaresObjective, Problem, SolverParams
from .operators import DenseMap, HaarMap, PartialDFTMap, haar_inverse, power_iteration
from .prox import box_project, prox_l0_box, prox_oracle_1d
from .solver import (
    gamma_direction,
    lambda_upper_bound,
    newton_direction,
    select_tau,
    solve_bnl0r,
)
from .stationarity import partition_indices

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2


def _load_config(path: str) -> dict:
    """Minimal TOML subset: flat `key = value` lines with scalars or arrays."""
    out: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("["):
                raise ValueError(f"{path}: tables are not supported ({line})")
            if "=" not in line:
                raise ValueError(f"{path}: expected key = value, got {line!r}")
            key, text = (part.strip() for part in line.split("=", 1))
            out[key.replace("-", "_")] = _parse_toml_value(text, path)
    return out


def _parse_toml_value(text: str, path: str):
    if text.startswith("["):
        if not text.endswith("]"):
            raise ValueError(f"{path}: unterminated array {text!r}")
        inner = text[1:-1].strip()
        if not inner:
            return []
        return [_parse_toml_value(part.strip(), path) for part in inner.split(",")]
    if text in ("true", "false"):
        return text == "true"
    if text.startswith('"') and text.endswith('"'):
        return text[1:-1]
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError as exc:
        raise ValueError(f"{path}: cannot parse value {text!r}") from exc


def _master_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("BOXL0_SEED")
    return int(env) if env else 0


def _print_summary(results) -> None:
    rows = bench.summarize(results)
    print(f"{'algorithm':10s} {'n':>8s} {'iter':>6s} {'time':>9s} {'res':>12s}")
    for row in rows:
        print(
            f"{row['algorithm']:10s} {row['n']:8d} {row['iter']:6d} "
            f"{row['time_s']:9.3f} {row['res']:12.3e}"
        )


def cmd_bench(args) -> int:
    try:
        overrides = _load_config(args.config) if args.config else {}
        sizes = args.n if args.n else overrides.get("sizes", [])
        config = bench.ExperimentConfig(
            experiment=args.exp or overrides.get("experiment", "e1"),
            sizes=[int(v) for v in sizes],
            m_ratio=args.m_ratio
            if args.m_ratio is not None
            else overrides.get("m_ratio", 0.25),
            trials=args.trials
            if args.trials is not None
            else overrides.get("trials", 20),
            master_seed=_master_seed(args),
            snr_db=args.snr_db if args.snr_db is not None else overrides.get("snr_db"),
            nf=args.nf if args.nf is not None else overrides.get("nf"),
            lambda_override=args.lam
            if args.lam is not None
            else overrides.get("lambda"),
            tol_rel=args.tol_rel
            if args.tol_rel is not None
            else overrides.get("tol_rel", 1e-6),
            tol_f=args.tol_f if args.tol_f is not None else overrides.get("tol_f"),
            strict_acceptance=args.strict or overrides.get("strict_acceptance", False),
            jobs=args.jobs
            if args.jobs is not None
            else overrides.get("jobs", os.cpu_count() or 1),
        )
    except (ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    results = bench.run_experiment(config)
    failed = [r for r in results if r.error is not None]
    for r in failed:
        print(f"trial failed: {r.algorithm} n={r.meta.n} seed={r.meta.seed}: {r.error}",
              file=sys.stderr)
    if args.out:
        bench.write_csv([r for r in results if r.error is None], args.out)
        print(f"wrote {args.out}")
    _print_summary(results)
    return EXIT_FAIL if failed else EXIT_OK


def _load_vector(path: str) -> np.ndarray:
    try:
        return np.atleast_1d(np.loadtxt(path, delimiter=",", dtype=float))
    except (OSError, ValueError) as exc:
        raise ValueError(f"{path}: {exc}") from exc


def cmd_solve(args) -> int:
    try:
        a = np.loadtxt(args.a, delimiter=",", dtype=float, ndmin=2)
        b = _load_vector(args.b)
        lower = _load_vector(args.l)
        upper = _load_vector(args.u)
        if b.shape[0] != a.shape[0]:
            raise ValueError(f"{args.b}: length {b.shape[0]} != matrix rows {a.shape[0]}")
        if lower.shape[0] != a.shape[1]:
            raise ValueError(f"{args.l}: length {lower.shape[0]} != matrix cols {a.shape[1]}")
        if upper.shape[0] != a.shape[1]:
            raise ValueError(f"{args.u}: length {upper.shape[0]} != matrix cols {a.shape[1]}")
        bounds = BoxBounds(lower, upper)
        objective = LeastSquaresObjective(DenseMap(a), b)
        problem = Problem(objective, bounds, args.lam)
        solver = bench.ALGORITHMS[args.algorithm]
    except (OSError, ValueError, KeyError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report = solver(problem)
    print(
        f"{args.algorithm}: nnz={report.nnz} f={report.f_final:.6e} "
        f"residual_F={report.residual_norm:.6e} iterations={report.iterations}"
    )
    if args.out:
        np.savetxt(args.out, report.x_final, delimiter=",")
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_image(args) -> int:
    try:
        if args.input:
            pixels = bench.read_pgm(args.input)
            if pixels.shape[0] != pixels.shape[1] or pixels.shape[0] & (pixels.shape[0] - 1):
                raise ValueError(f"{args.input}: image must be square power-of-two")
            image = pixels.astype(float) / 255.0
        else:
            image = bench.synthetic_phantom(args.side)
        n = image.shape[0] * image.shape[0]
        m = args.m if args.m is not None else max(1, int(round(0.22 * n)))
        algorithms = [a.strip() for a in args.algorithms.split(",")]
        for alg in algorithms:
            if alg not in bench.ALGORITHMS:
                raise ValueError(f"unknown algorithm {alg!r}")
        instance = bench.gen_e4(image, m=m, nf=args.nf, seed=_master_seed(args))
    except (OSError, ValueError, bench.BadShape) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    side = image.shape[0]
    results = []
    for alg in algorithms:
        lam = instance.meta.lambda_by_alg[alg]
        params = SolverParams(
            lipschitz_estimate=instance.meta.lipschitz,
            tol_f=instance.meta.tol_f,
            lambda_decay=0.1,
        )
        problem = Problem(instance.problem.objective, instance.problem.bounds, lam)
        report = bench.ALGORITHMS[alg](problem, params)
        result = bench.TrialResult(
            algorithm=alg,
            meta=instance.meta,
            lam=lam,
            tau=select_tau(problem.bounds, lam, instance.meta.lipschitz),
            iterations=report.iterations,
            time_s=report.wall_time,
            res=bench.metric_res(report.x_final, instance.groundtruth),
            psnr=bench.metric_psnr(report.x_final, instance.groundtruth, n),
            nnz=report.nnz,
            f_final=report.f_final,
            residual_norm=report.residual_norm,
        )
        results.append(result)
        print(
            f"{alg}: psnr={result.psnr:.2f} dB nnz={result.nnz} "
            f"iter={result.iterations} time={result.time_s:.2f}s"
        )
        if args.out_prefix:
            recovered = haar_inverse(
                report.x_final.reshape(side, side), bench.HAAR_LEVELS_E4
            )
            out = f"{args.out_prefix}_{alg.lower()}.pgm"
            bench.write_pgm(out, np.clip(recovered, 0.0, 1.0) * 255.0)
            print(f"wrote {out}")
    if args.out_prefix:
        bench.write_csv(results, f"{args.out_prefix}.csv")
        print(f"wrote {args.out_prefix}.csv")
    return EXIT_OK


PLOT_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _log_ticks(lo: float, hi: float) -> list:
    start = math.floor(math.log10(lo))
    stop = math.ceil(math.log10(hi))
    return [10.0**e for e in range(start, stop + 1)]


def cmd_plot(args) -> int:
    try:
        with open(args.csv, "r", encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            rows = [line.strip().split(",") for line in fh if line.strip()]
        for col in ("algorithm", "n", args.metric):
            if col not in header:
                raise ValueError(f"{args.csv}: missing column {col!r}")
        if not rows:
            raise ValueError(f"{args.csv}: no data rows")
    except (OSError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    ai = header.index("algorithm")
    ni = header.index("n")
    mi = header.index(args.metric)
    series: dict = {}
    for row in rows:
        if row[mi] == "":
            continue
        series.setdefault(row[ai], {}).setdefault(int(row[ni]), []).append(float(row[mi]))
    svg = _render_series_svg(series, args.metric, log_y=args.metric == "res")
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(svg)
    print(f"wrote {args.out}")
    return EXIT_OK


def _render_series_svg(series: dict, metric: str, log_y: bool) -> str:
    width, height, pad = 640, 440, 60
    points = {
        alg: sorted((n, float(np.mean(vals))) for n, vals in by_n.items())
        for alg, by_n in series.items()
    }
    xs = sorted({n for pts in points.values() for n, _ in pts})
    ys = [v for pts in points.values() for _, v in pts if v > 0 or not log_y]
    if log_y:
        ys = [v for v in ys if v > 0] or [1e-16, 1.0]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1
    if y_hi == y_lo:
        y_hi = y_lo * 10 if log_y else y_lo + 1

    def sx(v):
        return pad + (v - x_lo) / (x_hi - x_lo) * (width - 2 * pad)

    def sy(v):
        if log_y:
            t = (math.log10(v) - math.log10(y_lo)) / (math.log10(y_hi) - math.log10(y_lo))
        else:
            t = (v - y_lo) / (y_hi - y_lo)
        return height - pad - t * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle">n</text>',
        f'<text x="16" y="{height / 2}" transform="rotate(-90 16 {height / 2})" '
        f'text-anchor="middle">{metric}</text>',
    ]
    for n in xs:
        parts.append(
            f'<text x="{sx(n):.1f}" y="{height - pad + 18}" text-anchor="middle" '
            f'font-size="11">{n}</text>'
        )
    ticks = _log_ticks(y_lo, y_hi) if log_y else np.linspace(y_lo, y_hi, 5)
    for tick in ticks:
        if log_y and not (y_lo <= tick <= y_hi * 1.0001):
            continue
        label = f"1e{int(math.log10(tick))}" if log_y else f"{tick:.3g}"
        parts.append(
            f'<line x1="{pad - 4}" y1="{sy(tick):.1f}" x2="{pad}" y2="{sy(tick):.1f}" stroke="black"/>'
            f'<text x="{pad - 8}" y="{sy(tick):.1f}" text-anchor="end" font-size="11">{label}</text>'
        )
    for idx, (alg, pts) in enumerate(sorted(points.items())):
        color = PLOT_COLORS[idx % len(PLOT_COLORS)]
        coords = " ".join(f"{sx(n):.1f},{sy(v):.1f}" for n, v in pts if not log_y or v > 0)
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{width - pad + 6}" y="{pad + 16 * idx + 10}" fill="{color}" '
            f'font-size="12">{alg}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _suite_prox(rng) -> tuple:
    from .prox import prox_l1_box

    for _ in range(200):
        n = int(rng.integers(1, 6))
        lower = 0.2 + rng.random(n) * 2
        upper = 0.2 + rng.random(n) * 2
        bounds = BoxBounds(lower, upper)
        tau_lambda = rng.random() * 0.45 * bounds.a
        z = rng.standard_normal(n) * 2
        got = prox_l0_box(z, tau_lambda, bounds)
        for i in range(n):
            ref = prox_oracle_1d(z[i], tau_lambda, lower[i], upper[i], 1e-4)
            h = lambda y, i=i: 0.5 * (y - z[i]) ** 2 + (tau_lambda if y != 0 else 0.0)
            if h(got[i]) > h(ref) + 1e-4:
                return False, f"prox value gap at z={z[i]}"
    return True, "prox oracle agreement"


def _suite_adjoint(rng) -> tuple:
    maps = [
        DenseMap(rng.standard_normal((6, 9))),
        PartialDFTMap(16, np.sort(rng.choice(16, 6, replace=False))),
        HaarMap(8, "forward"),
        HaarMap(8, "inverse"),
    ]
    for lin in maps:
        for _ in range(25):
            x = rng.standard_normal(lin.ncols)
            y = rng.standard_normal(lin.nrows)
            if np.iscomplexobj(lin.apply(x)):
                y = y + 1j * rng.standard_normal(lin.nrows)
            lhs = np.vdot(lin.apply(x), y)
            rhs = np.vdot(x, lin.adjoint_apply(y))
            if abs(lhs - rhs) > 1e-10 * (1 + abs(lhs)):
                return False, f"adjoint identity broke for {type(lin).__name__}"
    return True, "adjoint identities"


def _suite_partition(rng) -> tuple:
    for _ in range(200):
        n = int(rng.integers(2, 30))
        bounds = BoxBounds(0.3 + rng.random(n), 0.3 + rng.random(n))
        x = box_project(rng.standard_normal(n), bounds)
        g = rng.standard_normal(n)
        lam = rng.random() * 0.2 + 1e-3
        tau = min(0.9 * bounds.a / (2 * lam), 0.3)
        part = partition_indices(x, g, tau, lam, bounds)
        total = part.theta.size + part.gamma_u.size + part.gamma_l.size + part.ibar.size
        if total != n:
            return False, "partition does not cover all indices"
        z = x - tau * g
        thr = math.sqrt(2 * tau * lam)
        for i in part.theta:
            if not (-bounds.lower[i] < z[i] < bounds.upper[i] and abs(z[i]) >= thr):
                return False, "theta predicate violated"
        for i in part.gamma_u:
            if not z[i] >= bounds.upper[i]:
                return False, "gamma_u predicate violated"
        for i in part.gamma_l:
            if not z[i] <= -bounds.lower[i]:
                return False, "gamma_l predicate violated"
    return True, "index partition predicates"


def _suite_descent(rng) -> tuple:
    for trial in range(5):
        n = int(rng.integers(10, 40))
        m = n + int(rng.integers(1, 10))
        a = rng.standard_normal((m, n))
        xs = np.zeros(n)
        sup = rng.permutation(n)[: max(1, n // 10)]
        xs[sup] = rng.uniform(0.3, 1.5, sup.size)
        bounds = BoxBounds.symmetric(n, 2.0)
        objective = LeastSquaresObjective(DenseMap(a), a @ xs)
        L = power_iteration(DenseMap(a), 60, trial)
        lam = 1e-4 * lambda_upper_bound(objective, bounds, L)
        problem = Problem(objective, bounds, max(lam, 1e-12))
        for solver in (solve_bnl0r, solve_piht, solve_pga):
            report = solver(problem, SolverParams(lipschitz_estimate=L))
            if not bounds.contains(report.x_final):
                return False, f"infeasible iterate from {solver.__name__}"
            phis = [h[2] for h in report.history]
            start = next((i for i, h in enumerate(report.history) if True), 0)
            # merit is nonincreasing once the penalty has settled
            tail = phis[-5:]
            if any(b > a_ + 1e-8 * (1 + abs(a_)) for a_, b in zip(tail, tail[1:])):
                return False, f"merit increased for {solver.__name__}"
    return True, "descent and feasibility"


def _suite_identity(rng) -> tuple:
    for trial in range(20):
        n = int(rng.integers(8, 24))
        m = n + 4
        a = rng.standard_normal((m, n))
        bounds = BoxBounds.symmetric(n, 1.5)
        x = box_project(rng.standard_normal(n) * 0.7, bounds)
        x[rng.random(n) < 0.4] = 0.0
        objective = LeastSquaresObjective(DenseMap(a), rng.standard_normal(m))
        g = objective.gradient(x)
        lam = 0.05
        tau = select_tau(bounds, lam, power_iteration(DenseMap(a), 40, trial))
        part = partition_indices(x, g, tau, lam, bounds)
        bundle = newton_direction(objective, x, g, part, bounds)
        if not bundle.solvable:
            continue
        d = bundle.d
        idx = np.arange(n)
        h_theta = objective.hessian_block(x, part.theta, idx)
        full = float(d[part.theta] @ (h_theta @ d)) + float(
            d[part.gamma] @ d[part.gamma]
        ) + float(d[part.ibar] @ d[part.ibar])
        union = np.sort(np.concatenate([part.support, part.ibar[x[part.ibar] != 0]]))
        h_tu = objective.hessian_block(x, part.theta, union)
        reduced = float(d[part.theta] @ (h_tu @ d[union])) + float(
            d[part.gamma] @ d[part.gamma]
        ) + float(d[part.ibar][x[part.ibar] != 0] @ d[part.ibar][x[part.ibar] != 0])
        if abs(full - reduced) > 1e-10 * (1 + abs(full)):
            return False, f"quadratic-form identity gap {abs(full - reduced):.2e}"
    return True, "reduced quadratic-form identity"


SELFTEST_SUITES = {
    "prox": _suite_prox,
    "adjoint": _suite_adjoint,
    "partition": _suite_partition,
    "descent": _suite_descent,
    "identity": _suite_identity,
}


def cmd_selftest(args) -> int:
    names = [args.suite] if args.suite else list(SELFTEST_SUITES)
    for name in names:
        if name not in SELFTEST_SUITES:
            print(f"unknown suite {name!r}", file=sys.stderr)
            return EXIT_CONFIG
    rng = np.random.default_rng(_master_seed(args))
    failures = 0
    for name in names:
        ok, msg = SELFTEST_SUITES[name](rng)
        if args.inject_fault:
            ok = False
            msg = "fault injected"
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {msg}")
        failures += 0 if ok else 1
    return EXIT_FAIL if failures else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="boxl0",
        description="Box-constrained l0-regularized least squares: solvers and benchmarks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_bench = sub.add_parser("bench", help="run a benchmark experiment grid")
    p_bench.add_argument("--exp", choices=["e1", "e2", "e3", "e4"])
    p_bench.add_argument("--n", action="append", type=int, help="problem size (repeatable)")
    p_bench.add_argument("--m-ratio", type=float, dest="m_ratio")
    p_bench.add_argument("--trials", type=int)
    p_bench.add_argument("--seed", type=int)
    p_bench.add_argument("--snr-db", type=float, dest="snr_db")
    p_bench.add_argument("--nf", type=float)
    p_bench.add_argument("--lam", type=float, help="override the penalty for all solvers")
    p_bench.add_argument("--tol-rel", type=float, dest="tol_rel")
    p_bench.add_argument("--tol-f", type=float, dest="tol_f")
    p_bench.add_argument("--strict", action="store_true", help="strict Newton acceptance")
    p_bench.add_argument("--jobs", type=int)
    p_bench.add_argument("--config", help="TOML config file; flags override it")
    p_bench.add_argument("--out", help="CSV output path")
    p_bench.set_defaults(func=cmd_bench)

    p_solve = sub.add_parser("solve", help="solve a dense instance from CSV files")
    p_solve.add_argument("--a", required=True, help="matrix CSV (m rows, n cols)")
    p_solve.add_argument("--b", required=True, help="observation CSV (m values)")
    p_solve.add_argument("--l", required=True, help="lower bound CSV (n values)")
    p_solve.add_argument("--u", required=True, help="upper bound CSV (n values)")
    p_solve.add_argument("--lam", type=float, required=True)
    p_solve.add_argument("--algorithm", default="BNL0R", choices=list(bench.ALGORITHMS))
    p_solve.add_argument("--out", help="write the solution vector CSV")
    p_solve.set_defaults(func=cmd_solve)

    p_image = sub.add_parser("image", help="Fourier-sampled image recovery")
    p_image.add_argument("--input", help="binary PGM (P5) image; omit for the phantom")
    p_image.add_argument("--side", type=int, default=64, help="phantom side")
    p_image.add_argument("--m", type=int, help="number of sampled frequencies")
    p_image.add_argument("--nf", type=float, default=0.05, help="noise factor")
    p_image.add_argument("--algorithms", default="BNL0R,PIHT,PGA")
    p_image.add_argument("--seed", type=int)
    p_image.add_argument("--out-prefix", dest="out_prefix")
    p_image.set_defaults(func=cmd_image)

    p_plot = sub.add_parser("plot", help="render a metric-vs-n SVG from a bench CSV")
    p_plot.add_argument("--csv", required=True)
    p_plot.add_argument("--metric", default="res")
    p_plot.add_argument("--out", required=True)
    p_plot.set_defaults(func=cmd_plot)

    p_self = sub.add_parser("selftest", help="run the invariant suites")
    p_self.add_argument("--suite", choices=list(SELFTEST_SUITES))
    p_self.add_argument("--seed", type=int)
    p_self.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    p_self.set_defaults(func=cmd_selftest)

    return parser


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
