"""Weak linear separation over the observed projection of the 0-1 polytope.

Given a direction ``c`` and a point ``psi`` (both over the unique observed
indices), the oracle looks for a vertex ``phi`` with large
``<c, psi - phi>``. It first runs a cheap bit-flip local search
(alternating maximization) and falls back to an exact branch-and-bound
over the ``rho`` indicator bits when that fails.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import _kernels
from .tensor import Atom, ObservationSet, Shape

#: Largest ``rho`` accepted by :func:`brute_force_separation`.
BRUTE_FORCE_MAX_RHO = 24


class ResourceExhausted(RuntimeError):
    """Branch-and-bound ran out of nodes before settling the request."""

    def __init__(self, message, incumbent: Atom, objective: float,
                 dual_bound: float, nodes: int):
        super().__init__(message)
        self.incumbent = incumbent
        self.objective = objective
        self.dual_bound = dual_bound
        self.nodes = nodes


class Support:
    """Index structure of ``U`` in the flat bit layout used by the kernels.

    Besides the per-bit entry lists, this holds the grouping used by the
    branch-and-bound bound: modes are ordered innermost to outermost with
    the largest mode outermost, entries are sorted by that order, and each
    level lists contiguous groups of the level below that share all outer
    coordinates.
    """

    _cache: "weakref.WeakKeyDictionary[ObservationSet, Support]" = weakref.WeakKeyDictionary()

    def __init__(self, shape: Shape, unique: np.ndarray):
        unique = np.asarray(unique, dtype=np.int64)
        self.shape = shape
        self.unique = unique
        self.gcoords = np.ascontiguousarray(unique + shape.offsets[None, :])
        rho = shape.rho()
        p = shape.order
        flat = self.gcoords.ravel()
        order = np.argsort(flat, kind="stable")
        self.bit_terms = (order // p).astype(np.int64)
        self.bit_ptr = np.zeros(rho + 1, dtype=np.int64)
        np.cumsum(np.bincount(flat, minlength=rho), out=self.bit_ptr[1:])

        dims = np.asarray(shape.dims, dtype=np.int64)
        self.dims = dims
        self.mode_off = shape.offsets
        self.outer_mode = int(p - 1 - np.argmax(dims[::-1]))
        self.branch_modes = np.array([k for k in range(p) if k != self.outer_mode], dtype=np.int64)
        perm = np.append(self.branch_modes, self.outer_mode)
        keys = self.gcoords[:, perm]
        self.order = np.lexsort(keys.T).astype(np.int64)
        prev = keys[self.order]
        self.bits0 = np.ascontiguousarray(prev[:, 0])
        lvl_bits, lvl_off, child_ptr, ptr_off = [], [0], [], [0]
        for lv in range(1, p):
            change = np.any(prev[1:, lv:] != prev[:-1, lv:], axis=1)
            starts = np.concatenate([[0], np.flatnonzero(change) + 1, [len(prev)]])
            prev = prev[starts[:-1]]
            lvl_bits.append(prev[:, lv])
            lvl_off.append(lvl_off[-1] + len(prev))
            child_ptr.append(starts)
            ptr_off.append(ptr_off[-1] + len(starts))
        self.lvl_bits = np.concatenate(lvl_bits).astype(np.int64)
        self.lvl_off = np.array(lvl_off, dtype=np.int64)
        self.child_ptr = np.concatenate(child_ptr).astype(np.int64)
        self.ptr_off = np.array(ptr_off[:-1], dtype=np.int64)

    @classmethod
    def of(cls, obs: ObservationSet) -> "Support":
        sup = cls._cache.get(obs)
        if sup is None:
            sup = cls(obs.shape, obs.unique)
            cls._cache[obs] = sup
        return sup

    @property
    def u(self) -> int:
        return self.gcoords.shape[0]

    @property
    def rho(self) -> int:
        return self.bit_ptr.size - 1

    def bound_args(self):
        return (self.bits0, self.lvl_bits, self.lvl_off, self.child_ptr, self.ptr_off)


@dataclass(frozen=True, eq=False)
class SeparationRequest:
    support: Support
    c: np.ndarray
    psi_u: np.ndarray
    lam: float
    K: float = 2.0
    Phi: float = 1.0

    def __post_init__(self):
        c = np.ascontiguousarray(self.c, dtype=np.float64)
        psi = np.ascontiguousarray(self.psi_u, dtype=np.float64)
        if c.shape != (self.support.u,) or psi.shape != (self.support.u,):
            raise ValueError("c and psi_u must have one entry per unique observed index")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(psi))):
            raise ValueError("separation coefficients must be finite")
        if self.K < 1:
            raise ValueError("accuracy K must be at least 1")
        if not self.Phi > 0:
            raise ValueError("gap estimate Phi must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "psi_u", psi)
        object.__setattr__(self, "lam", float(self.lam))

    @classmethod
    def from_obs(cls, obs: ObservationSet, c, psi_u, lam, K=2.0, Phi=1.0):
        return cls(Support.of(obs), c, psi_u, lam, K, Phi)

    @property
    def shape(self) -> Shape:
        return self.support.shape

    @property
    def threshold(self) -> float:
        return self.Phi / self.K

    def slack(self) -> float:
        scale = float(np.abs(self.c) @ (np.abs(self.psi_u) + self.lam))
        return 1e-12 * (1.0 + scale)


@dataclass
class SeparationResult:
    """Either an improving vertex or the certificate that none beats ``Phi``."""

    vertex: Atom | None
    gap: float
    dual_bound: float | None = None
    source: str = ""

    @property
    def found(self) -> bool:
        return self.vertex is not None


class ExactResult(NamedTuple):
    best: Atom
    dual_bound: float
    early_stopped: bool
    objective: float
    nodes: int


@dataclass
class OracleConfig:
    am_restarts: int = 10
    flip_prob: float = 0.1
    bb_node_budget: int = 10**7


@dataclass
class OracleStats:
    calls: int = 0
    am_successes: int = 0
    exact_calls: int = 0
    bb_nodes: int = 0
    early_stops: int = 0
    false_results: int = 0

    def as_dict(self):
        return dict(self.__dict__)


def _flat_theta(theta, shape: Shape) -> np.ndarray:
    if isinstance(theta, Atom):
        theta = theta.flat
    elif not isinstance(theta, np.ndarray) or theta.ndim != 1:
        theta = np.concatenate([np.asarray(t) for t in theta])
    theta = np.ascontiguousarray(theta, dtype=np.uint8)
    if theta.size != shape.rho():
        raise ValueError(f"theta has {theta.size} bits, shape {shape} needs {shape.rho()}")
    if theta.max(initial=0) > 1:
        raise ValueError("theta must be binary")
    return theta.copy()


def z_m(theta, req: SeparationRequest) -> float:
    """``sum_j c_j * (psi_j - lam * prod_k theta_k[U_j[k]])`` over the observed entries."""
    flat = _flat_theta(theta, req.shape)
    sup = req.support
    return _kernels.z_value(sup.gcoords, req.c, req.psi_u, req.lam, flat)


def alternating_maximization(req: SeparationRequest, theta_init) -> tuple[np.ndarray, ...]:
    """Single sweep of improving bit flips, mode by mode, starting from ``theta_init``."""
    flat = _am_flat(req, _flat_theta(theta_init, req.shape))
    return tuple(np.split(flat.astype(bool), req.shape.offsets[1:]))


def _am_flat(req: SeparationRequest, flat: np.ndarray) -> np.ndarray:
    sup = req.support
    _kernels.am_sweep(sup.gcoords, sup.bit_ptr, sup.bit_terms, req.c, req.lam, flat)
    return flat


def multi_start_am(req: SeparationRequest, restarts: int, rng: np.random.Generator,
                   incumbent: Atom | None = None, flip_prob: float = 0.1) -> Atom:
    """Best of ``restarts`` AM sweeps: one from the incumbent, the rest from
    copies with each bit complemented independently with ``flip_prob``."""
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    shape = req.shape
    start = (np.zeros(shape.rho(), dtype=np.uint8) if incumbent is None
             else _flat_theta(incumbent, shape))
    sup = req.support
    best = _am_flat(req, start.copy())
    best_z = z_m(best, req)
    for _ in range(restarts - 1):
        flips = rng.random(start.size) < flip_prob
        trial = _am_flat(req, np.where(flips, 1 - start, start).astype(np.uint8))
        z = _kernels.z_value(sup.gcoords, req.c, req.psi_u, req.lam, trial)
        if z > best_z:
            best, best_z = trial, z
    return Atom.from_flat(req.lam, best, shape)


def exact_separation(req: SeparationRequest, early_stop_target: float | None = None, *,
                     incumbent: Atom | None = None, dual_target: float | None = None,
                     node_budget: int = 10**7) -> ExactResult:
    """Maximize ``<c, psi - phi>`` over vertices by branch-and-bound.

    Without targets the returned objective is the exact optimum and
    ``dual_bound`` equals it. ``early_stop_target`` returns the first
    incumbent strictly above it. ``dual_target`` prunes every node whose
    bound is at most the target; ``dual_bound`` then only certifies
    ``optimum <= max(objective, dual_target)``.
    """
    if early_stop_target is not None and not early_stop_target > 0:
        raise ValueError("early_stop_target must be positive")
    shape = req.shape
    init = (np.zeros(shape.rho(), dtype=np.uint8) if incumbent is None
            else _flat_theta(incumbent, shape))
    sup = req.support
    theta, obj, dual, _root, nodes, outcome = _kernels.branch_and_bound(
        sup.gcoords, sup.bit_ptr, sup.bit_terms, sup.branch_modes, sup.outer_mode,
        sup.mode_off, sup.dims, sup.order, *sup.bound_args(),
        req.c, req.psi_u, req.lam, init,
        early_stop_target is not None,
        0.0 if early_stop_target is None else float(early_stop_target),
        dual_target is not None,
        0.0 if dual_target is None else float(dual_target),
        int(node_budget), req.slack())
    atom = Atom.from_flat(req.lam, theta, shape)
    if outcome == _kernels.OUTCOME_BUDGET:
        raise ResourceExhausted(
            f"branch-and-bound node budget of {node_budget} exhausted "
            f"(incumbent {obj:.6g}, dual bound {dual:.6g})",
            atom, float(obj), float(dual), int(nodes))
    return ExactResult(atom, float(dual), outcome == _kernels.OUTCOME_EARLY_STOP,
                       float(obj), int(nodes))


def weak_separation(req: SeparationRequest, config: OracleConfig | None = None,
                    rng: np.random.Generator | None = None,
                    incumbent: Atom | None = None,
                    stats: OracleStats | None = None) -> SeparationResult:
    """Return a vertex with gap at least ``Phi/K``, or certify no gap above ``Phi``."""
    config = config or OracleConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    stats = stats if stats is not None else OracleStats()
    stats.calls += 1

    atom = multi_start_am(req, config.am_restarts, rng, incumbent, config.flip_prob)
    gap = z_m(atom, req)
    if gap >= req.threshold:
        stats.am_successes += 1
        return SeparationResult(atom, gap, source="am")

    stats.exact_calls += 1
    try:
        res = exact_separation(req, req.threshold, incumbent=atom, dual_target=req.Phi,
                               node_budget=config.bb_node_budget)
    except ResourceExhausted as exc:
        stats.bb_nodes += exc.nodes
        raise
    stats.bb_nodes += res.nodes
    if res.objective > req.threshold:
        stats.early_stops += res.early_stopped
        return SeparationResult(res.best, res.objective, source="exact")
    stats.false_results += 1
    return SeparationResult(None, res.objective, dual_bound=res.dual_bound, source="exact")


def brute_force_separation(req: SeparationRequest) -> tuple[Atom, float]:
    """Enumerate every vertex; for testing on tiny shapes only."""
    rho = req.shape.rho()
    if rho > BRUTE_FORCE_MAX_RHO:
        raise ValueError(f"brute force needs rho <= {BRUTE_FORCE_MAX_RHO}, got {rho}")
    sup = req.support
    theta, best = _kernels.brute_force(sup.gcoords, req.c, req.psi_u, req.lam, rho)
    return Atom.from_flat(req.lam, theta, req.shape), float(best)


def node_upper_bound(req: SeparationRequest, status: Sequence[int]) -> float:
    """Branch-and-bound node bound for a partial assignment (-1 marks a free bit)."""
    sup = req.support
    status = np.asarray(status, dtype=np.int8)
    if status.size != sup.rho:
        raise ValueError("status needs one entry per indicator bit")
    w_sorted = (-req.lam * req.c)[sup.order]
    base = float(req.c @ req.psi_u)
    return float(_kernels.nested_bound(w_sorted, base, status, *sup.bound_args(),
                                       np.empty(sup.u), np.empty(sup.u)))
