"""Plain-text observation and model files.

Observation file::

    p r_1 ... r_p
    x_1 ... x_p y        # one line per sample, one-based indices

A dense tensor is the observation file that lists every index once.

Model file::

    lambda m p r_1 ... r_p
    w b_1 ... b_p        # one line per atom; b_k is a 0/1 string of length r_k
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .tensor import Atom, Model, ObservationSet, Shape

MODEL_SIMPLEX_TOL = 1e-9


class ParseError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


def _fmt(v: float) -> str:
    return repr(float(v))


def _shape_from_header(fields, path, line) -> Shape:
    try:
        p = int(fields[0])
        dims = [int(f) for f in fields[1:]]
    except (ValueError, IndexError):
        raise ParseError(path, line, "expected integers 'p r_1 ... r_p'") from None
    if len(dims) != p:
        raise ParseError(path, line, f"order {p} but {len(dims)} dimensions given")
    try:
        return Shape(tuple(dims))
    except ValueError as exc:
        raise ParseError(path, line, str(exc)) from None


def format_observations(shape: Shape, indices, values) -> str:
    lines = [" ".join([str(shape.order), *map(str, shape.dims)])]
    for x, y in zip(np.asarray(indices), np.asarray(values)):
        lines.append(" ".join([*(str(int(v) + 1) for v in x), _fmt(y)]))
    return "\n".join(lines) + "\n"


def write_observations(path, obs: ObservationSet):
    Path(path).write_text(format_observations(obs.shape, obs.indices, obs.values),
                          encoding="utf-8", newline="\n")


def write_dense(path, dense: np.ndarray):
    shape = Shape(dense.shape)
    Path(path).write_text(format_observations(shape, shape.all_indices(), dense.ravel()),
                          encoding="utf-8", newline="\n")


def read_observations(path) -> ObservationSet:
    text = Path(path).read_text(encoding="utf-8")
    rows = [(i, ln.split()) for i, ln in enumerate(text.splitlines(), start=1) if ln.strip()]
    if not rows:
        raise ParseError(path, 1, "empty file")
    lineno, header = rows[0]
    shape = _shape_from_header(header, path, lineno)
    p = shape.order
    indices, values = [], []
    for lineno, fields in rows[1:]:
        if len(fields) != p + 1:
            raise ParseError(path, lineno, f"expected {p} indices and a value, got {len(fields)} fields")
        try:
            x = [int(f) - 1 for f in fields[:p]]
            y = float(fields[p])
        except ValueError:
            raise ParseError(path, lineno, "malformed number") from None
        for k, (v, r) in enumerate(zip(x, shape.dims)):
            if not 0 <= v < r:
                raise ParseError(path, lineno, f"index {v + 1} outside 1..{r} in mode {k + 1}")
        if not (np.isfinite(y) and y >= 0):
            raise ParseError(path, lineno, f"value {fields[p]} is not a finite nonnegative number")
        indices.append(x)
        values.append(y)
    if not indices:
        raise ParseError(path, lineno, "no sample lines")
    return ObservationSet(shape, np.array(indices, dtype=np.int64), np.array(values))


def read_dense(path) -> np.ndarray:
    """Dense tensor from an observation file that enumerates every index once."""
    obs = read_observations(path)
    shape = obs.shape
    if obs.n != shape.pi() or obs.u != shape.pi():
        raise ParseError(path, 1, f"dense file must list all {shape.pi()} indices exactly once")
    out = np.empty(shape.dims)
    out[tuple(obs.indices.T)] = obs.values
    return out


def format_model(model: Model) -> str:
    shape = model.shape
    lines = [" ".join([_fmt(model.lam), str(len(model.atoms)), str(shape.order),
                       *map(str, shape.dims)])]
    for a, w in zip(model.atoms, model.weights):
        bits = ("".join("1" if b else "0" for b in t) for t in a.theta)
        lines.append(" ".join([_fmt(w), *bits]))
    return "\n".join(lines) + "\n"


def write_model(path, model: Model):
    Path(path).write_text(format_model(model), encoding="utf-8", newline="\n")


def read_model(path) -> Model:
    text = Path(path).read_text(encoding="utf-8")
    rows = [(i, ln.split()) for i, ln in enumerate(text.splitlines(), start=1) if ln.strip()]
    if not rows:
        raise ParseError(path, 1, "empty file")
    lineno, header = rows[0]
    try:
        lam = float(header[0])
        m = int(header[1])
    except (ValueError, IndexError):
        raise ParseError(path, lineno, "expected 'lambda m p r_1 ... r_p'") from None
    if not (np.isfinite(lam) and lam >= 0):
        raise ParseError(path, lineno, "lambda must be finite and nonnegative")
    shape = _shape_from_header(header[2:], path, lineno)
    if len(rows) - 1 != m:
        raise ParseError(path, lineno, f"header announces {m} atoms, found {len(rows) - 1}")
    atoms, weights = [], []
    for lineno, fields in rows[1:]:
        if len(fields) != shape.order + 1:
            raise ParseError(path, lineno, f"expected a weight and {shape.order} bit strings")
        try:
            w = float(fields[0])
        except ValueError:
            raise ParseError(path, lineno, "malformed weight") from None
        theta = []
        for k, (bits, r) in enumerate(zip(fields[1:], shape.dims)):
            if len(bits) != r or set(bits) - {"0", "1"}:
                raise ParseError(path, lineno, f"mode {k + 1} needs a 0/1 string of length {r}")
            theta.append(np.frombuffer(bits.encode(), dtype=np.uint8) == ord("1"))
        if not (np.isfinite(w) and w >= 0):
            raise ParseError(path, lineno, "weights must be finite and nonnegative")
        atoms.append(Atom(lam, tuple(theta)))
        weights.append(w)
    if abs(sum(weights) - 1.0) > MODEL_SIMPLEX_TOL:
        raise ParseError(path, 1, f"weights sum to {sum(weights)!r}, not 1")
    return Model(lam, tuple(atoms), np.array(weights), simplex_tol=MODEL_SIMPLEX_TOL)
