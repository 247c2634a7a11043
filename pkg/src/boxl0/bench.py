"""Experiment generators, metrics, trial orchestration and CSV emission."""

from __future__ import annotations

import concurrent.futures
import math
import os
import tempfile
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .baselines import solve_pga, solve_piht
from .model import (
    BoxBounds,
    LeastSquaresObjective,
    Problem,
    SolverParams,
)
from .operators import (
    ComposedMap,
    DenseMap,
    HaarMap,
    PartialDFTMap,
    SideNotPowerOfTwo,
    haar_forward,
    haar_inverse,
    power_iteration,
)
from .solver import lambda_upper_bound, select_tau, solve_bnl0r


class BadShape(ValueError):
    """Generator sizes are inconsistent or too small."""


class ZeroSignal(ValueError):
    """Cannot scale noise against a zero signal."""


ALGORITHMS = {
    "BNL0R": solve_bnl0r,
    "PIHT": solve_piht,
    "PGA": solve_pga,
}

# Penalty calibration.  A hard-thresholding step of length t admits component i
# once |grad_i| >= sqrt(2*lambda/t), so each l0 solver's lambda is set from a
# gradient-magnitude cutoff matched to its own step scale: 1/(4L) for the
# Newton solver, near-unit steps for PIHT on unit-column instances.  On noisy
# data the cutoffs brace against the expected extreme of the adjoint noise,
# with PIHT's placed slightly below it (it admits a few noise coordinates, as
# the reference hard-thresholding baseline does).  The l1 relaxation gets a
# larger penalty; its bias is the point of the comparison.
LAMBDA_RATIO_L0 = 2e-4
PIHT_STEP_SCALE = 1.0
LAMBDA_RATIO_PGA = 5e-2
NOISE_CUT_BNL0R = 1.25
NOISE_CUT_PIHT = 0.80

CSV_HEADER = (
    "experiment,algorithm,n,m,s,seed,lambda,tau,iter,time_s,res,psnr,nnz,"
    "f_final,residual_F"
)


@dataclass(frozen=True)
class Meta:
    """Provenance of one generated instance."""

    experiment: str
    n: int
    m: int
    s: int
    seed: int
    box: str
    snr_db: Optional[float] = None
    nf: Optional[float] = None
    tol_f: float = 0.0
    lipschitz: float = 1.0
    lambda_by_alg: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Instance:
    problem: Problem
    groundtruth: np.ndarray
    meta: Meta


@dataclass(frozen=True)
class TrialResult:
    algorithm: str
    meta: Meta
    lam: float
    tau: float
    iterations: int
    time_s: float
    res: float
    psnr: Optional[float]
    nnz: int
    f_final: float
    residual_norm: float
    error: Optional[str] = None


@dataclass
class ExperimentConfig:
    """One bench invocation: an experiment, a size grid and trial settings."""

    experiment: str
    sizes: Sequence[int]
    m_ratio: float = 0.25
    trials: int = 20
    master_seed: int = 0
    snr_db: Optional[float] = None
    nf: Optional[float] = None
    lambda_override: Optional[float] = None
    tol_rel: float = 1e-6
    tol_f: Optional[float] = None
    strict_acceptance: bool = False
    algorithms: Sequence[str] = ("BNL0R", "PIHT", "PGA")
    jobs: int = 1

    def __post_init__(self):
        if self.experiment not in ("e1", "e2", "e3", "e4"):
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if not self.sizes:
            raise ValueError("sizes must be nonempty")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


def _lambda_table(objective, bounds, L_hat, noise_norm=0.0, m=None) -> dict:
    """Per-algorithm penalty targets from gradient-magnitude pickup cutoffs."""
    lam_bar = lambda_upper_bound(objective, bounds, L_hat)
    tau_hat = 0.25 / L_hat
    cut = math.sqrt(2.0 * LAMBDA_RATIO_L0 * lam_bar / tau_hat)
    noise_extreme = 0.0
    if noise_norm > 0.0 and m:
        n = objective.dim()
        noise_extreme = noise_norm / math.sqrt(m) * math.sqrt(2.0 * math.log(n))
    cut_bnl0r = max(cut, NOISE_CUT_BNL0R * noise_extreme)
    # The hard-thresholding baseline's cutoff sits just below the noise extreme
    # (at a shared penalty its longer steps admit more, as in the reference).
    cut_piht = NOISE_CUT_PIHT * noise_extreme if noise_extreme > 0.0 else cut
    return {
        "BNL0R": 0.5 * tau_hat * cut_bnl0r**2,
        "PIHT": 0.5 * PIHT_STEP_SCALE * cut_piht**2,
        "PGA": LAMBDA_RATIO_PGA * lam_bar,
    }


def _normalized_gaussian(rng, m, n) -> np.ndarray:
    a = rng.standard_normal((m, n))
    a /= np.linalg.norm(a, axis=0)
    return a


def gen_e1(n: int, m_ratio: float = 0.25, seed: int = 0) -> Instance:
    """Noise-free Gaussian sensing: unit-norm columns, s = 0.001n, values in [0.1, 3]."""
    m = int(round(m_ratio * n))
    s = max(1, int(round(0.001 * n)))
    if m < 1 or m > n:
        raise BadShape(f"m = {m} outside [1, {n}]")
    rng = np.random.default_rng(seed)
    a = _normalized_gaussian(rng, m, n)
    support = rng.permutation(n)[:s]
    xstar = np.zeros(n)
    xstar[support] = 0.1 + (3.0 - 0.1) * rng.random(s)
    b = a @ xstar
    bounds = BoxBounds.symmetric(n, 3.0)
    objective = LeastSquaresObjective(DenseMap(a), b)
    L_hat = power_iteration(DenseMap(a), iters=80, seed=seed + 1)
    meta = Meta(
        experiment="e1",
        n=n,
        m=m,
        s=s,
        seed=seed,
        box="sym3",
        tol_f=1e-20,
        lipschitz=L_hat,
        lambda_by_alg=_lambda_table(objective, bounds, L_hat),
    )
    return Instance(
        problem=Problem(objective, bounds, meta.lambda_by_alg["BNL0R"]),
        groundtruth=xstar,
        meta=meta,
    )


def add_noise_snr(clean: np.ndarray, snr_db: float, seed: int = 0) -> np.ndarray:
    """Add white Gaussian noise renormalized to hit the target SNR exactly.

    snr_db = inf is the no-noise sentinel and returns a copy of the input.
    """
    if math.isinf(snr_db):
        return np.array(clean, copy=True)
    norm = np.linalg.norm(clean)
    if norm == 0.0:
        raise ZeroSignal("signal norm is zero; SNR undefined")
    rng = np.random.default_rng(seed)
    if np.iscomplexobj(clean):
        xi = rng.standard_normal(clean.shape[0]) + 1j * rng.standard_normal(clean.shape[0])
    else:
        xi = rng.standard_normal(clean.shape[0])
    xi *= norm / np.linalg.norm(xi) * 10.0 ** (-snr_db / 20.0)
    return clean + xi


def _noisy_variant(inst: Instance, experiment: str, snr_db: float, seed: int) -> Instance:
    """Replace the measurements with a noisy copy and refresh the penalty table."""
    obj = inst.problem.objective
    b = add_noise_snr(obj.observation, snr_db, seed)
    objective = LeastSquaresObjective(obj.map, b)
    bounds = inst.problem.bounds
    noise_norm = float(np.linalg.norm(b - obj.observation))
    table = _lambda_table(
        objective, bounds, inst.meta.lipschitz, noise_norm=noise_norm, m=inst.meta.m
    )
    meta = replace(
        inst.meta, experiment=experiment, snr_db=snr_db, tol_f=1e-6, lambda_by_alg=table
    )
    return Instance(
        problem=Problem(objective, bounds, table["BNL0R"]),
        groundtruth=inst.groundtruth,
        meta=meta,
    )


def gen_e3(n: int, seed: int = 0) -> Instance:
    """Four-band instance: 25 nonzeros per quarter scaled 1..4, staggered boxes."""
    if n % 4 != 0:
        raise BadShape(f"n = {n} must be divisible by 4")
    quarter = n // 4
    if quarter < 25:
        raise BadShape(f"quarter size {quarter} < 25")
    m = n // 4
    rng = np.random.default_rng(seed)
    a = _normalized_gaussian(rng, m, n)
    xstar = np.zeros(n)
    for q in range(4):
        idx = rng.permutation(quarter)[:25] + q * quarter
        xstar[idx] = (q + 1) * rng.random(25)
    radii = np.concatenate([np.full(quarter, float(q + 2)) for q in range(4)])
    bounds = BoxBounds(radii.copy(), radii.copy())
    b = a @ xstar
    objective = LeastSquaresObjective(DenseMap(a), b)
    L_hat = power_iteration(DenseMap(a), iters=80, seed=seed + 1)
    meta = Meta(
        experiment="e3",
        n=n,
        m=m,
        s=100,
        seed=seed,
        box="quarters2345",
        tol_f=1e-6,
        lipschitz=L_hat,
        lambda_by_alg=_lambda_table(objective, bounds, L_hat),
    )
    return Instance(
        problem=Problem(objective, bounds, meta.lambda_by_alg["BNL0R"]),
        groundtruth=xstar,
        meta=meta,
    )


def synthetic_phantom(side: int) -> np.ndarray:
    """Piecewise-constant test image in [0, 1], exactly sparse under the Haar map.

    Blocks are aligned to the dyadic grid so every nonzero coefficient is large.
    """
    if side < 8:
        raise BadShape("phantom needs side >= 8")
    img = np.full((side, side), 0.15)
    q = side // 8
    img[q : 3 * q, q : 3 * q] = 0.9
    img[4 * q : 6 * q, 2 * q : 4 * q] = 0.55
    img[2 * q : 4 * q, 5 * q : 7 * q] = 0.35
    img[5 * q : 8 * q, 5 * q : 6 * q] = 0.75
    img[6 * q : 7 * q, 1 * q : 3 * q] = 1.0
    return img


HAAR_LEVELS_E4 = 3


def gen_e4(image: np.ndarray, m: int, nf: float, seed: int = 0) -> Instance:
    """Partial-Fourier sensing of the Haar coefficients of a [0, 1] image.

    The sampling rows always include the DC row (its column would otherwise be
    identically zero and the mean intensity unrecoverable); the rest are drawn
    uniformly without replacement.  The wavelet decomposition stops after
    three levels so that every coefficient of a unit-intensity image fits the
    [-10, 10] box (full depth would put the coarse coefficients far outside).
    tol_f is half the squared noise norm, matching a stop at the noise level
    of the measurements.
    """
    image = np.asarray(image, dtype=float)
    side = image.shape[0]
    if image.ndim != 2 or image.shape[1] != side:
        raise SideNotPowerOfTwo("image must be square")
    if side & (side - 1):
        raise SideNotPowerOfTwo(f"side {side} is not a power of two")
    n = side * side
    if not 1 <= m <= n:
        raise BadShape(f"m = {m} outside [1, {n}]")
    rng = np.random.default_rng(seed)
    # Flattened-image spectra of coarse wavelet atoms live in the 2-D
    # low-frequency corner {both f mod side and f div side near 0 or side};
    # always sampling that corner keeps every column well measured.  The
    # remaining budget is drawn uniformly.
    width = max(1, side >> (HAAR_LEVELS_E4 + 1))
    f = np.arange(n)
    fx, fy = f % side, f // side
    corner = np.flatnonzero(
        ((fx <= width) | (fx >= side - width))
        & ((fy <= width) | (fy >= side - width))
    )
    if corner.size >= m:
        rows = np.sort(corner[:m])
    else:
        others = np.setdiff1d(f, corner, assume_unique=False)
        extra = rng.choice(others, size=m - corner.size, replace=False)
        rows = np.sort(np.concatenate([corner, extra]))
    xstar = haar_forward(image, HAAR_LEVELS_E4).ravel()
    fmap = PartialDFTMap(n, rows)
    amap = ComposedMap(fmap, HaarMap(side, "inverse", HAAR_LEVELS_E4))
    clean = amap.apply(xstar)
    xi = nf * (rng.standard_normal(m) + 1j * rng.standard_normal(m))
    b = clean + xi
    bounds = BoxBounds.symmetric(n, 10.0)
    objective = LeastSquaresObjective(amap, b)
    L_hat = power_iteration(amap, iters=30, seed=seed + 1)
    lam_bar = lambda_upper_bound(objective, bounds, L_hat)
    # Column norms here are heterogeneous (the DC atom has norm 1, generic
    # atoms ~ sqrt(m/n)); the noisy cutoff is referenced to a typical column,
    # trading a couple of spurious strong-column pickups for recovery of the
    # weakly measured coefficients.  The noise-free ratio floor is tiny
    # because lam_bar is inflated by the DC column.
    tau_hat = 0.25 / L_hat
    noise_extreme = NOISE_CUT_BNL0R * nf * math.sqrt(2.0 * math.log(n) * m / n)
    scale = max(1e-7 * lam_bar, 0.5 * tau_hat * noise_extreme**2)
    step_ratio = (n / m) / tau_hat
    table = {
        "BNL0R": scale,
        "PIHT": max(scale * step_ratio, 1e-5 * lam_bar),
        "PGA": max(1e-6 * lam_bar, nf * math.sqrt(2.0 * math.log(n) * m / n)),
    }
    meta = Meta(
        experiment="e4",
        n=n,
        m=m,
        s=int(np.count_nonzero(xstar)),
        seed=seed,
        box="sym10",
        nf=nf,
        tol_f=0.5 * float(np.vdot(xi, xi).real),
        lipschitz=L_hat,
        lambda_by_alg=table,
    )
    return Instance(
        problem=Problem(objective, bounds, table["BNL0R"]),
        groundtruth=xstar,
        meta=meta,
    )


def metric_res(x: np.ndarray, xstar: np.ndarray) -> float:
    """Euclidean distance to the groundtruth."""
    if x.shape != xstar.shape:
        raise BadShape("metric_res needs equal-length vectors")
    return float(np.linalg.norm(x - xstar))


def metric_psnr(x: np.ndarray, xstar: np.ndarray, n: int) -> float:
    """10*log10(n / ||x - xstar||^2); +inf sentinel on an exact match."""
    err = metric_res(x, xstar)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(n / err**2)


def _instance_for(config: ExperimentConfig, n: int, trial: int) -> Instance:
    seed = int(
        np.random.SeedSequence((config.master_seed, n, trial)).generate_state(1)[0]
    )
    if config.experiment == "e1":
        return gen_e1(n, config.m_ratio, seed)
    if config.experiment == "e2":
        base = gen_e1(n, config.m_ratio, seed)
        snr = 30.0 if config.snr_db is None else config.snr_db
        return _noisy_variant(base, "e2", snr, seed + 1)
    if config.experiment == "e3":
        base = gen_e3(n, seed)
        snr = 30.0 if config.snr_db is None else config.snr_db
        return _noisy_variant(base, "e3", snr, seed + 1)
    side = int(round(math.sqrt(n)))
    if side * side != n:
        raise BadShape(f"e4 size {n} is not a square image size")
    m = int(round(config.m_ratio * n))
    nf = 0.05 if config.nf is None else config.nf
    return gen_e4(synthetic_phantom(side), m, nf, seed)


def run_trial(instance: Instance, algorithm: str, config: ExperimentConfig) -> TrialResult:
    """Solve one instance with one algorithm and collect the benchmark record."""
    meta = instance.meta
    lam = (
        config.lambda_override
        if config.lambda_override is not None
        else meta.lambda_by_alg[algorithm]
    )
    tol_f = meta.tol_f if config.tol_f is None else config.tol_f
    params = SolverParams(
        lipschitz_estimate=meta.lipschitz,
        tol_rel=config.tol_rel,
        tol_f=tol_f,
        strict_acceptance=config.strict_acceptance,
    )
    if meta.experiment == "e4":
        # Images spread pickups over many penalty levels; coarser homotopy
        # steps keep the iteration count (and Gram assemblies) moderate.
        params.lambda_decay = 0.1
    problem = replace(instance.problem, lambda_target=lam)
    tau = select_tau(problem.bounds, lam, meta.lipschitz)
    start = time.perf_counter()
    report = ALGORITHMS[algorithm](problem, params)
    elapsed = time.perf_counter() - start
    psnr = None
    if meta.experiment == "e4":
        psnr = metric_psnr(report.x_final, instance.groundtruth, meta.n)
    return TrialResult(
        algorithm=algorithm,
        meta=meta,
        lam=lam,
        tau=tau,
        iterations=report.iterations,
        time_s=elapsed,
        res=metric_res(report.x_final, instance.groundtruth),
        psnr=psnr,
        nnz=report.nnz,
        f_final=report.f_final,
        residual_norm=report.residual_norm,
    )


def _run_cell(args) -> list:
    config, n, trial = args
    out = []
    try:
        instance = _instance_for(config, n, trial)
    except Exception as exc:  # noqa: BLE001 - flagged, not fatal to the batch
        meta = Meta(config.experiment, n, 0, 0, trial, "?")
        return [
            TrialResult(alg, meta, 0.0, 0.0, 0, 0.0, math.nan, None, 0, math.nan, math.nan, error=str(exc))
            for alg in config.algorithms
        ]
    for alg in config.algorithms:
        try:
            out.append(run_trial(instance, alg, config))
        except Exception as exc:  # noqa: BLE001
            out.append(
                TrialResult(
                    alg, instance.meta, 0.0, 0.0, 0, 0.0, math.nan, None, 0,
                    math.nan, math.nan, error=str(exc),
                )
            )
    return out


def run_experiment(config: ExperimentConfig) -> list:
    """Generate, solve and record every (size, trial, algorithm) cell.

    Per-trial failures are flagged on the result rather than aborting the
    batch.  All algorithms of a cell see the identical instance.
    """
    cells = [(config, n, trial) for n in config.sizes for trial in range(config.trials)]
    results: list = []
    if config.jobs > 1 and len(cells) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=config.jobs) as pool:
            for chunk in pool.map(_run_cell, cells):
                results.extend(chunk)
    else:
        for cell in cells:
            results.extend(_run_cell(cell))
    results.sort(key=lambda r: (r.meta.experiment, r.meta.n, r.meta.seed, r.algorithm))
    return results


def _fmt(value, spec="{:.6e}") -> str:
    if value is None:
        return ""
    if isinstance(value, float) and math.isnan(value):
        return "nan"
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    return spec.format(value)


def write_csv(results: Sequence[TrialResult], path: str) -> None:
    """Atomically write the trial table with the stable benchmark schema."""
    lines = [CSV_HEADER]
    for r in results:
        lines.append(
            ",".join(
                [
                    r.meta.experiment,
                    r.algorithm,
                    str(r.meta.n),
                    str(r.meta.m),
                    str(r.meta.s),
                    str(r.meta.seed),
                    _fmt(r.lam, "{:.10e}"),
                    _fmt(r.tau, "{:.10e}"),
                    str(r.iterations),
                    _fmt(r.time_s, "{:.4f}"),
                    _fmt(r.res),
                    _fmt(r.psnr, "{:.4f}"),
                    str(r.nnz),
                    _fmt(r.f_final),
                    _fmt(r.residual_norm),
                ]
            )
        )
    payload = "\n".join(lines) + "\n"
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def summarize(results: Sequence[TrialResult]) -> list:
    """Per (algorithm, n) means with the iteration count rounded to an integer."""
    groups: dict = {}
    for r in results:
        if r.error is not None:
            continue
        groups.setdefault((r.algorithm, r.meta.n), []).append(r)
    table = []
    for (alg, n), rows in sorted(groups.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        table.append(
            {
                "algorithm": alg,
                "n": n,
                "iter": int(round(float(np.mean([r.iterations for r in rows])))),
                "time_s": float(np.mean([r.time_s for r in rows])),
                "res": float(np.mean([r.res for r in rows])),
                "psnr": (
                    float(np.mean([r.psnr for r in rows]))
                    if all(r.psnr is not None for r in rows)
                    else None
                ),
            }
        )
    return table


def read_pgm(path: str) -> np.ndarray:
    """Read a binary (P5) 8-bit PGM image."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    pos += 1  # single whitespace after maxval
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    return pixels.reshape(height, width)


def write_pgm(path: str, image: np.ndarray) -> None:
    """Write an 8-bit binary (P5) PGM image."""
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode()
    with open(path, "wb") as fh:
        fh.write(header + img.tobytes())
