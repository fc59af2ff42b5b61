"""Shapes, observations, binary atoms and convex-combination models.

Indices are zero-based everywhere in this package; file formats in
:mod:`nntc.io` are one-based.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from math import prod
from typing import Sequence

import numpy as np

#: Largest tensor (number of entries) that may be materialized densely.
DEFAULT_DENSE_CAP = 10**8
#: Largest tensor a :class:`Shape` can describe.
MAX_ENTRIES = 10**9


class DenseCapError(ValueError):
    """Raised when a dense tensor would exceed the configured entry cap."""

    def __init__(self, entries: int, cap: int):
        super().__init__(
            f"dense materialization of {entries} entries exceeds the cap of {cap}"
        )
        self.entries = entries
        self.cap = cap


@dataclass(frozen=True)
class Shape:
    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) < 2:
            raise ValueError(f"tensor order must be at least 2, got {len(dims)}")
        if any(d < 1 for d in dims):
            raise ValueError(f"all dimensions must be positive, got {dims}")
        if prod(dims) > MAX_ENTRIES:
            raise ValueError(
                f"shape {dims} has {prod(dims)} entries, more than {MAX_ENTRIES}"
            )

    @property
    def order(self) -> int:
        return len(self.dims)

    def rho(self) -> int:
        return sum(self.dims)

    def pi(self) -> int:
        return prod(self.dims)

    @cached_property
    def offsets(self) -> np.ndarray:
        """Start of each mode in the flat layout of all ``rho`` indicator bits."""
        return np.concatenate([[0], np.cumsum(self.dims)[:-1]]).astype(np.int64)

    def check_index(self, x: Sequence[int]) -> tuple[int, ...]:
        x = tuple(int(v) for v in x)
        if len(x) != self.order:
            raise IndexError(f"index {x} has length {len(x)}, expected {self.order}")
        for k, (v, r) in enumerate(zip(x, self.dims)):
            if not 0 <= v < r:
                raise IndexError(f"coordinate {v} out of range [0, {r}) in mode {k}")
        return x

    def all_indices(self) -> np.ndarray:
        """Every index in C order, as a ``(pi, p)`` integer array."""
        grids = np.indices(self.dims).reshape(self.order, -1)
        return grids.T.astype(np.int64)

    def __str__(self):
        return "x".join(str(d) for d in self.dims)


class ObservationSet:
    """Samples ``(x_i, y_i)`` together with the deduplicated index set ``U``.

    Duplicate sample indices are kept in :attr:`indices`/:attr:`values` and
    collapsed only in :attr:`unique`; :attr:`pos` maps each sample to its row
    of :attr:`unique`.
    """

    def __init__(self, shape: Shape, indices, values):
        indices = np.asarray(indices, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if indices.ndim != 2 or indices.shape[1] != shape.order:
            raise ValueError(
                f"indices must have shape (n, {shape.order}), got {indices.shape}"
            )
        if values.shape != (indices.shape[0],):
            raise ValueError("need exactly one value per sample index")
        if indices.shape[0] == 0:
            raise ValueError("an observation set needs at least one sample")
        dims = np.asarray(shape.dims)
        if (indices < 0).any() or (indices >= dims).any():
            bad = int(np.flatnonzero(((indices < 0) | (indices >= dims)).any(axis=1))[0])
            raise IndexError(f"sample {bad} has index {tuple(indices[bad])} outside {shape}")
        if not np.all(np.isfinite(values)) or (values < 0).any():
            raise ValueError("observed values must be finite and nonnegative")

        self.shape = shape
        self.indices = indices
        self.values = values
        unique, pos = np.unique(indices, axis=0, return_inverse=True)
        self.unique = unique
        self.pos = pos.reshape(-1).astype(np.int64)
        for arr in (self.indices, self.values, self.unique, self.pos):
            arr.flags.writeable = False

    @property
    def n(self) -> int:
        return self.indices.shape[0]

    @property
    def u(self) -> int:
        return self.unique.shape[0]

    def __repr__(self):
        return f"ObservationSet(shape={self.shape}, n={self.n}, u={self.u})"


@dataclass(frozen=True, eq=False)
class Atom:
    """A vertex of the scaled 0-1 polytope: ``lam * outer(theta_1, ..., theta_p)``."""

    lam: float
    theta: tuple[np.ndarray, ...]

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("atom scale must be nonnegative")
        theta = tuple(np.asarray(t, dtype=bool).copy() for t in self.theta)
        if len(theta) < 2:
            raise ValueError("an atom needs at least two modes")
        for t in theta:
            if t.ndim != 1 or t.size == 0:
                raise ValueError("each mode indicator must be a nonempty 1-D vector")
            t.flags.writeable = False
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "theta", theta)

    @classmethod
    def from_flat(cls, lam: float, bits, shape: Shape) -> "Atom":
        bits = np.asarray(bits).astype(bool)
        return cls(lam, tuple(np.split(bits, shape.offsets[1:])))

    @classmethod
    def zero(cls, shape: Shape, lam: float) -> "Atom":
        return cls(lam, tuple(np.zeros(r, dtype=bool) for r in shape.dims))

    @cached_property
    def shape(self) -> Shape:
        return Shape(tuple(t.size for t in self.theta))

    @cached_property
    def flat(self) -> np.ndarray:
        """All indicator bits, mode after mode, as a ``uint8`` vector."""
        out = np.concatenate(self.theta).astype(np.uint8)
        out.flags.writeable = False
        return out

    def key(self) -> bytes:
        """Packed indicator bits; equal keys mean equal atoms (same scale)."""
        return np.packbits(self.flat).tobytes() + bytes(str(self.shape.dims), "ascii")

    def is_zero(self) -> bool:
        return self.lam == 0 or not all(t.any() for t in self.theta)

    def __eq__(self, other):
        if not isinstance(other, Atom):
            return NotImplemented
        return self.lam == other.lam and self.key() == other.key()

    def __hash__(self):
        return hash((self.lam, self.key()))

    def __repr__(self):
        bits = " ".join("".join("1" if b else "0" for b in t) for t in self.theta)
        return f"Atom(lam={self.lam}, theta={bits})"


def atom_entry(atom: Atom, x: Sequence[int]) -> float:
    x = atom.shape.check_index(x)
    if all(t[i] for t, i in zip(atom.theta, x)):
        return atom.lam
    return 0.0


def atom_mask(atom: Atom, idx: np.ndarray) -> np.ndarray:
    """Boolean support of ``atom`` at each row of the ``(m, p)`` index array."""
    mask = np.ones(idx.shape[0], dtype=bool)
    for k, t in enumerate(atom.theta):
        mask &= t[idx[:, k]]
    return mask


def atom_project(atom: Atom, obs: ObservationSet) -> np.ndarray:
    """Entries of ``atom`` at the unique observed indices of ``obs``."""
    if atom.shape != obs.shape:
        raise ValueError(f"atom shape {atom.shape} does not match observations {obs.shape}")
    return atom.lam * atom_mask(atom, obs.unique).astype(np.float64)


def atom_dense(atom: Atom, cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
    shape = atom.shape
    if shape.pi() > cap:
        raise DenseCapError(shape.pi(), cap)
    out = np.array(atom.lam, dtype=np.float64)
    for t in atom.theta:
        out = np.multiply.outer(out, t.astype(np.float64))
    return out


@dataclass(frozen=True, eq=False)
class Model:
    """A point of the ball, stored as a convex combination of atoms."""

    lam: float
    atoms: tuple[Atom, ...]
    weights: np.ndarray
    simplex_tol: float = field(default=1e-12, repr=False)

    def __post_init__(self):
        atoms = tuple(self.atoms)
        weights = np.array(self.weights, dtype=np.float64)
        if not atoms or len(atoms) != weights.size:
            raise ValueError("need one weight per atom and at least one atom")
        if (weights < 0).any():
            raise ValueError("weights must be nonnegative")
        if abs(weights.sum() - 1.0) > self.simplex_tol:
            raise ValueError(f"weights sum to {weights.sum()!r}, not 1")
        shape = atoms[0].shape
        for a in atoms:
            if a.lam != self.lam:
                raise ValueError("all atoms must share the model scale")
            if a.shape != shape:
                raise ValueError("all atoms must share one shape")
        weights.flags.writeable = False
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def shape(self) -> Shape:
        return self.atoms[0].shape

    def project(self, obs: ObservationSet) -> np.ndarray:
        return reconstruct_at(self, obs.unique)


def reconstruct(model: Model, x: Sequence[int]) -> float:
    return float(sum(w * atom_entry(a, x) for a, w in zip(model.atoms, model.weights)))


def reconstruct_at(model: Model, idx: np.ndarray) -> np.ndarray:
    """Model values at each row of an ``(m, p)`` index array."""
    idx = np.asarray(idx, dtype=np.int64)
    out = np.zeros(idx.shape[0])
    for a, w in zip(model.atoms, model.weights):
        out += (w * a.lam) * atom_mask(a, idx)
    return out


def reconstruct_dense(model: Model, cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
    shape = model.shape
    if shape.pi() > cap:
        raise DenseCapError(shape.pi(), cap)
    out = np.zeros(shape.dims)
    for a, w in zip(model.atoms, model.weights):
        if w > 0 and not a.is_zero():
            out += w * atom_dense(a, cap)
    return out


def random_vertex(shape: Shape, lam: float, rng: np.random.Generator) -> Atom:
    """Atom with i.i.d. fair-coin indicator bits."""
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    return Atom(lam, tuple(rng.integers(0, 2, size=r).astype(bool) for r in shape.dims))


def max_entry(x, cap: int = DEFAULT_DENSE_CAP) -> float:
    """Largest entry of an atom, a model or a dense array."""
    if isinstance(x, Atom):
        return 0.0 if x.is_zero() else x.lam
    if isinstance(x, Model):
        x = reconstruct_dense(x, cap)
    x = np.asarray(x)
    if x.size > cap:
        raise DenseCapError(x.size, cap)
    return float(x.max()) if x.size else 0.0
