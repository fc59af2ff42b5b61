"""Empirical squared error over the observed entries and its gradient."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ObservationSet


@dataclass(frozen=True, eq=False)
class LossState:
    """Loss data for one observation set at the iterate ``psi_u``.

    ``psi_u`` holds one value per row of ``obs.unique``. Use :meth:`at` to
    move to a new iterate; the precomputed per-entry counts and sums are
    shared.
    """

    obs: ObservationSet
    psi_u: np.ndarray
    counts: np.ndarray
    sums: np.ndarray

    @classmethod
    def create(cls, obs: ObservationSet, psi_u=None) -> "LossState":
        counts = np.bincount(obs.pos, minlength=obs.u).astype(np.float64)
        sums = np.bincount(obs.pos, weights=obs.values, minlength=obs.u)
        if psi_u is None:
            psi_u = np.zeros(obs.u)
        for arr in (counts, sums):
            arr.flags.writeable = False
        return cls(obs, _frozen(psi_u, obs.u), counts, sums)

    def at(self, psi_u) -> "LossState":
        return LossState(self.obs, _frozen(psi_u, self.obs.u), self.counts, self.sums)

    def hessian_diag(self) -> np.ndarray:
        """Diagonal of the (constant) Hessian; strictly positive on ``U``."""
        return 2.0 * self.counts / self.obs.n


def _frozen(psi_u, u: int) -> np.ndarray:
    psi_u = np.array(psi_u, dtype=np.float64)
    if psi_u.shape != (u,):
        raise ValueError(f"iterate must have length {u}, got shape {psi_u.shape}")
    psi_u.flags.writeable = False
    return psi_u


def loss(state: LossState) -> float:
    """Mean of ``(y_i - psi[x_i])**2`` over all ``n`` samples, duplicates included."""
    r = state.obs.values - state.psi_u[state.obs.pos]
    return float(np.dot(r, r) / state.obs.n)


def gradient(state: LossState) -> np.ndarray:
    return (2.0 / state.obs.n) * (state.counts * state.psi_u - state.sums)


def curvature(state: LossState, d: np.ndarray) -> float:
    """Second derivative of the loss along direction ``d`` over ``U``."""
    return float(np.dot(state.hessian_diag() * d, d))
