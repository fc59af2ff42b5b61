"""Blended conditional gradients over the observed projection of the ball.

The iterate is kept as a convex combination of atoms. Each iteration either
takes a simplex-descent step over the weights of the current atoms, or asks
the weak separation oracle for a new vertex and takes a Frank-Wolfe step
toward it. When the oracle certifies that no vertex beats the current gap
estimate ``Phi``, ``Phi`` is halved; the solve ends once that certificate
holds with ``Phi <= epsilon``.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .objective import LossState, gradient, loss
from .oracle import (OracleConfig, OracleStats, SeparationRequest, Support,
                     exact_separation, weak_separation)
from .tensor import Atom, Model, ObservationSet, atom_project

log = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    epsilon: float = 1e-6
    K: float = 2.0
    Phi_init: float | None = None
    max_iterations: int = 10_000
    am_restarts: int = 10
    flip_prob: float = 0.1
    bb_node_budget: int = 10**7
    weight_prune_tol: float = 1e-12
    seed: int = 0
    descent: str = "affine"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.Phi_init is not None and not self.Phi_init > 0:
            raise ValueError("Phi_init must be positive when given")
        if self.max_iterations < 0 or self.am_restarts < 1:
            raise ValueError("max_iterations must be >= 0 and am_restarts >= 1")

    def oracle(self) -> OracleConfig:
        return OracleConfig(self.am_restarts, self.flip_prob, self.bb_node_budget)


@dataclass
class SolveStats:
    iterations: int = 0
    oracle_calls: int = 0
    am_successes: int = 0
    bb_nodes: int = 0
    early_stops: int = 0
    fw_steps: int = 0
    descent_steps: int = 0
    halvings: int = 0
    drop_steps: int = 0
    final_Phi: float = float("nan")
    final_loss: float = float("nan")
    converged: bool = False
    wall_time: float = 0.0
    loss_history: list = field(default_factory=list)

    def as_dict(self, history: bool = False) -> dict:
        out = asdict(self)
        if not history:
            out.pop("loss_history")
        return out

    def deterministic(self) -> dict:
        """Everything except wall-clock time."""
        out = self.as_dict(history=True)
        out.pop("wall_time")
        return out


class ActiveSet:
    """Atoms, their cached columns over ``U``, and simplex weights."""

    def __init__(self, atoms, columns, weights):
        self.atoms = list(atoms)
        self.columns = np.array(columns, dtype=np.float64).reshape(len(self.atoms), -1).T
        self.weights = np.array(weights, dtype=np.float64)

    def __len__(self):
        return len(self.atoms)

    def psi(self) -> np.ndarray:
        return self.columns @ self.weights

    def find(self, atom: Atom) -> int:
        key = atom.key()
        for i, a in enumerate(self.atoms):
            if a.key() == key:
                return i
        return -1

    def add(self, atom: Atom, column: np.ndarray, t: float):
        """Move a fraction ``t`` of the mass onto ``atom``."""
        self.weights *= 1.0 - t
        i = self.find(atom)
        if i >= 0:
            self.weights[i] += t
        else:
            self.atoms.append(atom)
            self.columns = np.column_stack([self.columns, column])
            self.weights = np.append(self.weights, t)

    def prune(self, tol: float) -> int:
        keep = self.weights > tol
        if not keep.any():
            keep[np.argmax(self.weights)] = True
        dropped = int((~keep).sum())
        if dropped:
            self.atoms = [a for a, k in zip(self.atoms, keep) if k]
            self.columns = self.columns[:, keep]
            self.weights = self.weights[keep]
        self.weights /= self.weights.sum()
        return dropped

    def model(self, lam: float) -> Model:
        return Model(lam, tuple(self.atoms), self.weights.copy())


def active_gap(active: ActiveSet, c: np.ndarray) -> float:
    """Frank-Wolfe gap restricted to the active atoms: ``max_j <c, psi - col_j>``."""
    psi = active.psi()
    return float(np.max(c @ psi - c @ active.columns))


def line_search_quadratic(state: LossState, d: np.ndarray, t_max: float = 1.0) -> float:
    """Exact minimizer of ``loss(psi + t d)`` over ``[0, t_max]``."""
    d = np.asarray(d, dtype=np.float64)
    curv = float(np.dot(state.hessian_diag() * d, d))
    if curv <= 0.0:
        return 0.0
    t = -float(gradient(state) @ d) / curv
    return min(max(t, 0.0), t_max)


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    mu = np.sort(v)[::-1]
    css = np.cumsum(mu) - 1.0
    ks = np.arange(1, v.size + 1)
    r = np.flatnonzero(mu - css / ks > 0)[-1]
    return np.maximum(v - css[r] / (r + 1), 0.0)


def _pg_direction(active: ActiveSet, state: LossState, c: np.ndarray) -> np.ndarray:
    # Projected-gradient trial point at step 1/L, L the top weight-space curvature.
    C = active.columns
    hess = (C.T * state.hessian_diag()) @ C
    L = float(np.linalg.eigvalsh(hess)[-1])
    if L <= 0.0:
        return np.zeros_like(active.weights)
    return project_simplex(active.weights - (C.T @ c) / L) - active.weights


def _affine_direction(active: ActiveSet, state: LossState) -> np.ndarray:
    # Minimizer of the loss over the affine hull of the active columns, as
    # weights summing to one (least-norm when the columns are dependent).
    C = active.columns
    r = int(np.argmax(active.weights))
    others = np.arange(len(active)) != r
    scale = np.sqrt(state.counts / state.obs.n)
    target = np.divide(state.sums, state.counts)
    D = (C[:, others] - C[:, [r]]) * scale[:, None]
    z, *_ = np.linalg.lstsq(D, scale * (target - C[:, r]), rcond=None)
    w = np.empty_like(active.weights)
    w[others] = z
    w[r] = 1.0 - z.sum()
    return w - active.weights


def _simplex_descent(active: ActiveSet, state: LossState, c: np.ndarray,
                     rule: str = "affine") -> bool:
    """One descent step on the weights with exact line search.

    The step runs toward a trial weight vector and stops early at the
    simplex boundary, zeroing the blocking weights. Returns True if some
    weight reached zero.
    """
    if rule == "affine":
        dw = _affine_direction(active, state)
    elif rule == "projected_gradient":
        dw = _pg_direction(active, state, c)
    else:
        raise ValueError(f"unknown descent rule {rule!r}")
    neg = dw < 0
    t_max = 1.0
    if neg.any():
        ratios = active.weights[neg] / -dw[neg]
        t_max = min(1.0, float(ratios.min()))
    t = line_search_quadratic(state, active.columns @ dw, t_max)
    w = active.weights + t * dw
    if neg.any() and t >= t_max:
        w[np.flatnonzero(neg)[ratios <= t_max]] = 0.0
    np.maximum(w, 0.0, out=w)
    active.weights = w
    return bool((w == 0.0).any())


def solve(obs: ObservationSet, lam: float, config: SolverConfig | None = None,
          *, callback=None) -> tuple[Model, SolveStats]:
    """Minimize the mean squared error over ``{psi : ||psi||_+ <= lam}``.

    ``callback(iteration, active, state)``, if given, runs after every
    iteration. Raises :class:`~nntc.oracle.ResourceExhausted` if an exact
    oracle call runs out of nodes.
    """
    config = config or SolverConfig()
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    t0 = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    ocfg = config.oracle()
    ostats = OracleStats()
    stats = SolveStats()
    sup = Support.of(obs)

    zero = Atom.zero(obs.shape, lam)
    active = ActiveSet([zero], [np.zeros(obs.u)], [1.0])
    state = LossState.create(obs, active.psi())
    stats.loss_history.append(loss(state))

    def request(c, Phi):
        return SeparationRequest(sup, c, state.psi_u, lam, config.K, Phi)

    c = gradient(state)
    first = exact_separation(request(c, 1.0), node_budget=ocfg.bb_node_budget)
    ostats.calls += 1
    ostats.exact_calls += 1
    ostats.bb_nodes += first.nodes
    incumbent = first.best
    Phi = config.Phi_init if config.Phi_init is not None else first.objective / 2.0
    converged = first.objective <= config.epsilon

    it = 0
    while not converged and it < config.max_iterations:
        it += 1
        c = gradient(state)
        if active_gap(active, c) >= Phi / config.K:
            if _simplex_descent(active, state, c, config.descent):
                stats.drop_steps += 1
            stats.descent_steps += 1
        else:
            res = weak_separation(request(c, Phi), ocfg, rng, incumbent, ostats)
            if res.found:
                incumbent = res.vertex
                column = atom_project(res.vertex, obs)
                t = line_search_quadratic(state, column - state.psi_u)
                active.add(res.vertex, column, t)
                stats.fw_steps += 1
            elif Phi <= config.epsilon or res.dual_bound <= config.epsilon:
                converged = True
            else:
                Phi /= 2.0
                stats.halvings += 1
        active.prune(config.weight_prune_tol)
        state = state.at(active.psi())
        stats.loss_history.append(loss(state))
        if callback is not None:
            callback(it, active, state)

    stats.iterations = it
    stats.oracle_calls = ostats.calls
    stats.am_successes = ostats.am_successes
    stats.bb_nodes = ostats.bb_nodes
    stats.early_stops = ostats.early_stops
    stats.final_Phi = float(Phi)
    stats.final_loss = stats.loss_history[-1]
    stats.converged = bool(converged)
    stats.wall_time = time.perf_counter() - t0
    if not converged:
        log.warning("stopped after %d iterations without reaching epsilon=%g (Phi=%g)",
                    it, config.epsilon, Phi)
    return active.model(lam), stats
