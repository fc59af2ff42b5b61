"""Synthetic ground truth, sampling, NMSE, an ALS baseline and the benchmark sweep."""
from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bcg import SolverConfig, solve
from .oracle import ResourceExhausted
from .tensor import (DEFAULT_DENSE_CAP, Atom, Model, ObservationSet, Shape,
                     random_vertex, reconstruct_at, reconstruct_dense)

log = logging.getLogger(__name__)

CSV_COLUMNS = ("method", "shape", "num_atoms", "n", "seed", "nmse", "time_s", "converged")
#: Shapes above this many entries run only with ``large_scale=True``.
DEFAULT_BENCH_CAP = 10**6
ALS_L2_GRID = (1e-4, 1e-2, 1.0)


@dataclass
class GroundTruth:
    shape: Shape
    atoms: tuple[Atom, ...]
    weights: np.ndarray
    dense: np.ndarray | None = None

    @property
    def model(self) -> Model:
        return Model(1.0, self.atoms, self.weights)

    def dense_or_build(self, cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
        if self.dense is None:
            self.dense = reconstruct_dense(self.model, cap)
        return self.dense


def generate_ground_truth(shape: Shape, num_atoms: int, rng: np.random.Generator,
                          cap: int = DEFAULT_DENSE_CAP) -> GroundTruth:
    """Random convex combination of ``num_atoms`` random unit-scale vertices."""
    if num_atoms < 1:
        raise ValueError("num_atoms must be at least 1")
    atoms = tuple(random_vertex(shape, 1.0, rng) for _ in range(num_atoms))
    e = rng.exponential(size=num_atoms)
    weights = e / e.sum()
    gt = GroundTruth(shape, atoms, weights)
    if shape.pi() <= cap:
        gt.dense_or_build(cap)
    return gt


def sample_observations(gt: GroundTruth, n: int, rng: np.random.Generator,
                        noise: float = 0.0) -> ObservationSet:
    """``n`` uniform indices drawn with replacement and their exact truth values.

    ``noise > 0`` adds uniform noise on ``[-noise, noise]`` clipped at zero.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    idx = np.stack([rng.integers(0, r, size=n) for r in gt.shape.dims], axis=1)
    y = reconstruct_at(gt.model, idx)
    if noise > 0:
        y = np.maximum(y + rng.uniform(-noise, noise, size=n), 0.0)
    return ObservationSet(gt.shape, idx, y)


def nmse(estimate, truth) -> float:
    """``||estimate - truth||_F^2 / ||truth||_F^2`` over every entry."""
    t = truth.dense_or_build() if isinstance(truth, GroundTruth) else np.asarray(truth, dtype=float)
    if isinstance(estimate, Model):
        estimate = reconstruct_dense(estimate)
    estimate = np.asarray(estimate, dtype=float)
    if estimate.shape != t.shape:
        raise ValueError(f"shape mismatch: {estimate.shape} vs {t.shape}")
    denom = float(np.sum(t * t))
    if denom == 0.0:
        raise ValueError("NMSE is undefined for an all-zero truth tensor")
    diff = estimate - t
    return float(np.sum(diff * diff) / denom)


def als_complete(obs: ObservationSet, k: int, l2: float = 1e-2, iterations: int = 500,
                 rng: np.random.Generator | None = None, tol: float = 1e-8) -> np.ndarray:
    """Nonnegative CP completion by ridge-regularized alternating least squares.

    Each factor row is refit by ridge regression on the samples it touches
    and clipped at zero. Stops after ``iterations`` sweeps or once the
    relative change of the training loss drops below ``tol``.
    """
    if k < 1:
        raise ValueError("rank must be at least 1")
    if l2 < 0:
        raise ValueError("l2 must be nonnegative")
    rng = rng if rng is not None else np.random.default_rng(0)
    dims = obs.shape.dims
    p = len(dims)
    idx, y = obs.indices, obs.values
    factors = [rng.random((r, k)) for r in dims]
    eye = np.eye(k)
    prev = np.inf
    for _ in range(iterations):
        for m in range(p):
            # Khatri-Rao rows of the other modes at each sample.
            z = np.ones((len(y), k))
            for q in range(p):
                if q != m:
                    z *= factors[q][idx[:, q]]
            A = factors[m]
            for i in range(dims[m]):
                rows = idx[:, m] == i
                zi = z[rows]
                gram = zi.T @ zi + l2 * eye
                rhs = zi.T @ y[rows]
                try:
                    sol = np.linalg.solve(gram, rhs)
                except np.linalg.LinAlgError:
                    sol = np.linalg.solve(gram + max(l2, 1e-8) * eye, rhs)
                A[i] = np.maximum(sol, 0.0)
        fit = np.ones((len(y), k))
        for q in range(p):
            fit *= factors[q][idx[:, q]]
        cur = float(np.mean((fit.sum(axis=1) - y) ** 2))
        if abs(prev - cur) <= tol * max(prev, 1e-300):
            break
        prev = cur
    return _cp_dense(factors)


def _cp_dense(factors) -> np.ndarray:
    letters = "abcdefghijklmnopqrstuvwxy"
    spec = ",".join(f"{letters[i]}z" for i in range(len(factors)))
    return np.einsum(f"{spec}->{letters[:len(factors)]}", *factors, optimize=True)


@dataclass
class BenchResult:
    method: str
    shape: Shape
    num_atoms: int
    n: int
    seed: int
    nmse: float
    time_s: float
    converged: bool

    def row(self) -> list[str]:
        return [self.method, str(self.shape), str(self.num_atoms), str(self.n), str(self.seed),
                f"{self.nmse:.6g}", f"{self.time_s:.3f}", "true" if self.converged else "false"]


@dataclass
class BenchCell:
    """One sweep line: a shape, a truth size and sample count, methods and reps."""

    shape: Shape
    num_atoms: int = 10
    n: int = 500
    methods: tuple[str, ...] = ("bcg", "als")
    reps: int = 1
    epsilon: float = 1e-6
    seeds: tuple[int, ...] | None = None
    extra: dict = field(default_factory=dict)

    def rep_seeds(self, master_seed: int, cell_index: int) -> list[int]:
        if self.seeds is not None:
            return list(self.seeds)
        ss = np.random.SeedSequence([master_seed, cell_index])
        return [int(s.generate_state(1)[0]) for s in ss.spawn(self.reps)]


def run_single(method: str, shape: Shape, num_atoms: int, n: int, seed: int,
               epsilon: float = 1e-6, als_grid=ALS_L2_GRID) -> BenchResult:
    """One (method, seed) run on a fresh truth; failures become non-converged rows."""
    rng = np.random.default_rng(seed)
    gt = generate_ground_truth(shape, num_atoms, rng)
    obs = sample_observations(gt, n, rng)
    t0 = time.perf_counter()
    converged = True
    try:
        if method == "bcg":
            cfg = SolverConfig(epsilon=epsilon, seed=seed)
            try:
                model, stats = solve(obs, 1.0, cfg)
                converged = stats.converged
            except ResourceExhausted as exc:
                log.warning("bcg seed %d: %s", seed, exc)
                return BenchResult(method, shape, num_atoms, n, seed, float("nan"),
                                   time.perf_counter() - t0, False)
            err = nmse(model, gt)
        elif method == "als":
            # Best ridge strength by NMSE against the truth.
            err = min(nmse(als_complete(obs, num_atoms, l2, rng=np.random.default_rng(seed)), gt)
                      for l2 in als_grid)
        else:
            raise ValueError(f"unknown method {method!r}")
    except (ValueError, np.linalg.LinAlgError, MemoryError) as exc:
        log.warning("%s seed %d failed: %s", method, seed, exc)
        return BenchResult(method, shape, num_atoms, n, seed, float("nan"),
                           time.perf_counter() - t0, False)
    return BenchResult(method, shape, num_atoms, n, seed, err,
                       time.perf_counter() - t0, converged)


def _run_job(job):
    return run_single(*job)


def run_benchmark(cells, master_seed: int = 0, parallelism: int = 1,
                  large_scale: bool = False, bench_cap: int = DEFAULT_BENCH_CAP) -> list[BenchResult]:
    """Run every (cell, method, rep); results come back in job order."""
    jobs = []
    for ci, cell in enumerate(cells):
        if cell.shape.pi() > bench_cap and not large_scale:
            raise ValueError(f"shape {cell.shape} exceeds {bench_cap} entries; "
                             "pass large_scale=True to run it")
        for seed in cell.rep_seeds(master_seed, ci):
            for method in cell.methods:
                jobs.append((method, cell.shape, cell.num_atoms, cell.n, seed, cell.epsilon))
    if parallelism > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            return list(pool.map(_run_job, jobs))
    return [_run_job(j) for j in jobs]


def write_csv(results, fh, include_time: bool = True):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in results:
        row = r.row()
        if not include_time:
            row[6] = "0.000"
        w.writerow(row)


def results_csv(results, include_time: bool = True) -> str:
    buf = io.StringIO()
    write_csv(results, buf, include_time)
    return buf.getvalue()


def summarize(results) -> dict:
    """Mean and standard error of NMSE and time per (method, shape, n)."""
    groups: dict = {}
    for r in results:
        groups.setdefault((r.method, str(r.shape), r.n), []).append(r)
    out = {}
    for key, rs in groups.items():
        errs = np.array([r.nmse for r in rs if np.isfinite(r.nmse)])
        times = np.array([r.time_s for r in rs])
        se = (lambda a: float(a.std(ddof=1) / np.sqrt(a.size)) if a.size > 1 else 0.0)
        out[key] = {
            "runs": len(rs),
            "failed": len(rs) - errs.size,
            "nmse_mean": float(errs.mean()) if errs.size else float("nan"),
            "nmse_se": se(errs) if errs.size else float("nan"),
            "time_mean": float(times.mean()),
            "time_se": se(times),
        }
    return out
