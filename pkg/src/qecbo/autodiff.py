"""Reverse-mode differentiation over small dense-tensor graphs.

A `Tape` records primitive operations as they execute on `Var` wrappers
around numpy arrays; `gradient` replays the tape backwards.  Every
operation also accepts plain arrays (no tape, no recording), so model
code can share one formula source between training and pure inference.

Shapes are fixed at call time: operands must agree elementwise or one
of them must have a single element.  Graph wiring (gather, scatter,
pooling) is expressed as matrix products against constant 0/1 matrices
rather than dedicated indexing ops.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np
from scipy.linalg import cho_factor, cho_solve

ArrayLike = Union["Var", np.ndarray, float, int]


class NonFiniteError(ArithmeticError):
    """An operation produced a NaN or infinity; carries the node identity."""


class FactorizationError(RuntimeError):
    """A matrix passed to a definite-factorization node was not SPD."""


class _Node:
    __slots__ = ("name", "pull")

    def __init__(self, name: str, pull: Callable[[np.ndarray], list]):
        self.name = name
        self.pull = pull


class Var:
    """A tape-tracked array value."""

    __slots__ = ("tape", "idx", "value")

    def __init__(self, tape: "Tape", idx: int, value: np.ndarray):
        self.tape = tape
        self.idx = idx
        self.value = value

    @property
    def shape(self):
        return self.value.shape


class Tape:
    def __init__(self):
        self.nodes: list[_Node] = []

    def leaf(self, value: np.ndarray, name: str = "leaf") -> Var:
        return self._record(np.asarray(value, dtype=float), lambda g: [], name)

    def _record(self, value: np.ndarray, pull, name: str) -> Var:
        idx = len(self.nodes)
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"non-finite value at node {name}[#{idx}]")
        self.nodes.append(_Node(name, pull))
        return Var(self, idx, value)

    def backprop(self, out: Var) -> dict[int, np.ndarray]:
        """Gradients of the scalar `out` with respect to every node."""
        if out.value.size != 1:
            raise ValueError("backprop requires a single-element output")
        grads: list[Optional[np.ndarray]] = [None] * (out.idx + 1)
        grads[out.idx] = np.ones_like(out.value)
        for i in range(out.idx, -1, -1):
            g = grads[i]
            if g is None:
                continue
            for parent_idx, contrib in self.nodes[i].pull(g):
                if grads[parent_idx] is None:
                    grads[parent_idx] = contrib.copy()
                else:
                    grads[parent_idx] += contrib
        return {i: g for i, g in enumerate(grads) if g is not None}


def is_var(x) -> bool:
    return isinstance(x, Var)


def value_of(x: ArrayLike) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


def _tape_of(*xs) -> Optional[Tape]:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce an output gradient back to a (possibly single-element) shape."""
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape) if shape else np.asarray(np.sum(g))


def _elementwise_pair(a: ArrayLike, b: ArrayLike, fwd, da, db, name: str):
    tape = _tape_of(a, b)
    av, bv = value_of(a), value_of(b)
    if av.shape != bv.shape and av.size != 1 and bv.size != 1:
        raise ValueError(f"{name}: shapes {av.shape} and {bv.shape} differ")
    # The tape's finiteness check is the domain guard; numpy warnings on
    # the way to a NaN are redundant noise.
    with np.errstate(all="ignore"):
        out = fwd(av, bv)
    if tape is None:
        return out

    def pull(g):
        contribs = []
        if isinstance(a, Var):
            contribs.append((a.idx, _unbroadcast(g * da(av, bv), av.shape)))
        if isinstance(b, Var):
            contribs.append((b.idx, _unbroadcast(g * db(av, bv), bv.shape)))
        return contribs

    return tape._record(out, pull, name)


def add(a: ArrayLike, b: ArrayLike):
    return _elementwise_pair(
        a, b, lambda x, y: x + y,
        lambda x, y: np.ones_like(x + y), lambda x, y: np.ones_like(x + y),
        "add",
    )


def sub(a: ArrayLike, b: ArrayLike):
    return _elementwise_pair(
        a, b, lambda x, y: x - y,
        lambda x, y: np.ones_like(x - y), lambda x, y: -np.ones_like(x - y),
        "sub",
    )


def mul(a: ArrayLike, b: ArrayLike):
    return _elementwise_pair(
        a, b, lambda x, y: x * y, lambda x, y: y, lambda x, y: x, "mul"
    )


def _elementwise_unary(a: ArrayLike, fwd, deriv, name: str):
    tape = _tape_of(a)
    av = value_of(a)
    with np.errstate(all="ignore"):
        out = fwd(av)
    if tape is None:
        return out

    def pull(g):
        return [(a.idx, g * deriv(av, out))]

    return tape._record(out, pull, name)


def exp(a: ArrayLike):
    return _elementwise_unary(a, np.exp, lambda x, y: y, "exp")


def log(a: ArrayLike):
    return _elementwise_unary(a, np.log, lambda x, y: 1.0 / x, "log")


def sqrt(a: ArrayLike):
    return _elementwise_unary(a, np.sqrt, lambda x, y: 0.5 / y, "sqrt")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(a: ArrayLike):
    return _elementwise_unary(
        a, lambda x: np.logaddexp(0.0, x), lambda x, y: _sigmoid(x), "softplus"
    )


def matmul(a: ArrayLike, b: ArrayLike):
    tape = _tape_of(a, b)
    av, bv = value_of(a), value_of(b)
    out = av @ bv
    if tape is None:
        return out

    def pull(g):
        contribs = []
        if isinstance(a, Var):
            contribs.append((a.idx, g @ bv.T))
        if isinstance(b, Var):
            contribs.append((b.idx, av.T @ g))
        return contribs

    return tape._record(out, pull, "matmul")


def transpose(a: ArrayLike):
    tape = _tape_of(a)
    av = value_of(a)
    if tape is None:
        return av.T

    def pull(g):
        return [(a.idx, g.T)]

    return tape._record(av.T.copy(), pull, "transpose")


def concat(parts: Sequence[ArrayLike], axis: int = 0):
    tape = _tape_of(*parts)
    values = [value_of(p) for p in parts]
    out = np.concatenate(values, axis=axis)
    if tape is None:
        return out
    sizes = [v.shape[axis] for v in values]
    offsets = np.cumsum([0] + sizes)

    def pull(g):
        contribs = []
        for part, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if isinstance(part, Var):
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                contribs.append((part.idx, g[tuple(index)]))
        return contribs

    return tape._record(out, pull, "concat")


def sum_all(a: ArrayLike):
    tape = _tape_of(a)
    av = value_of(a)
    out = np.asarray(np.sum(av))
    if tape is None:
        return out

    def pull(g):
        return [(a.idx, np.broadcast_to(g, av.shape).copy())]

    return tape._record(out, pull, "sum_all")


def slice_rows(a: ArrayLike, start: int, stop: int):
    """Contiguous row block a[start:stop]; the gradient zero-pads the rest."""
    av = value_of(a)
    if not 0 <= start <= stop <= av.shape[0]:
        raise ValueError(f"slice_rows: [{start}, {stop}) outside {av.shape[0]} rows")
    tape = _tape_of(a)
    if tape is None:
        return av[start:stop].copy()

    def pull(g):
        full = np.zeros_like(av)
        full[start:stop] = g
        return [(a.idx, full)]

    return tape._record(av[start:stop].copy(), pull, "slice_rows")


def spd_solve(a: ArrayLike, b: ArrayLike):
    """Solve S X = B with S the symmetrized (A + A^T)/2, S positive definite.

    The factorization reads one triangle only, so the input is
    symmetrized explicitly; gradients are exact for the symmetrized map.
    """
    tape = _tape_of(a, b)
    av, bv = value_of(a), value_of(b)
    sym = 0.5 * (av + av.T)
    try:
        factor = cho_factor(sym, lower=True)
    except np.linalg.LinAlgError as err:
        raise FactorizationError(f"spd_solve: {err}") from err
    x = cho_solve(factor, bv)
    if tape is None:
        return x

    def pull(g):
        # X = S^-1 B: grad_B = S^-1 G;  grad_A = -sym(grad_B X^T).
        grad_b = cho_solve(factor, g)
        contribs = []
        if isinstance(a, Var):
            outer = grad_b @ x.T
            contribs.append((a.idx, -0.5 * (outer + outer.T)))
        if isinstance(b, Var):
            contribs.append((b.idx, grad_b))
        return contribs

    return tape._record(x, pull, "spd_solve")


def logdet_spd(a: ArrayLike):
    """log det of the symmetrized (A + A^T)/2, which must be positive definite."""
    tape = _tape_of(a)
    av = value_of(a)
    sym = 0.5 * (av + av.T)
    try:
        chol = np.linalg.cholesky(sym)
    except np.linalg.LinAlgError as err:
        raise FactorizationError(f"logdet_spd: {err}") from err
    out = np.asarray(2.0 * np.sum(np.log(np.diag(chol))))
    if tape is None:
        return out

    def pull(g):
        identity = np.eye(sym.shape[0])
        inv = cho_solve((chol, True), identity)
        return [(a.idx, float(g) * inv)]

    return tape._record(out, pull, "logdet_spd")


@dataclass(eq=False)
class ParamVector:
    """Flat double-precision parameters with a named-segment layout.

    Segment offsets partition the flat vector exactly; `segment` returns
    a reshaped view into it.
    """

    names: tuple[str, ...]
    shapes: tuple[tuple[int, ...], ...]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if len(self.names) != len(self.shapes):
            raise ValueError("names and shapes must align")
        if len(set(self.names)) != len(self.names):
            raise ValueError("segment names must be unique")
        bounds = {}
        lo = 0
        for n, s in zip(self.names, self.shapes):
            size = 1
            for d in s:
                size *= int(d)
            bounds[n] = (lo, lo + size, tuple(int(d) for d in s))
            lo += size
        if lo != self.values.size:
            raise ValueError(
                f"layout covers {lo} values, vector has {self.values.size}"
            )
        self._bounds_by_name = bounds

    @classmethod
    def from_segments(cls, segments: "Mapping[str, np.ndarray]") -> "ParamVector":
        names = tuple(segments)
        shapes = tuple(np.asarray(segments[n]).shape for n in names)
        flat = np.concatenate(
            [np.asarray(segments[n], dtype=float).ravel() for n in names]
        ) if names else np.zeros(0)
        return cls(names, shapes, flat)

    def segment(self, name: str) -> np.ndarray:
        lo, hi, shape = self._bounds_by_name[name]
        return self.values[lo:hi].reshape(shape)

    def replace(self, values: np.ndarray) -> "ParamVector":
        if values.size != self.values.size:
            raise ValueError("replacement vector has the wrong size")
        return ParamVector(self.names, self.shapes, np.asarray(values, float).copy())

    def copy(self) -> "ParamVector":
        return self.replace(self.values)

    @property
    def size(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class Graph:
    """A re-evaluable scalar function of a ParamVector.

    ``build`` receives one leaf Var per parameter segment and returns the
    single-element output Var; it is replayed on a fresh tape for every
    evaluation, so the structure may depend only on segment layout.
    """

    build: Callable[[Mapping[str, Var]], Var]


def _run(g: Graph, theta: ParamVector) -> tuple[Tape, dict[str, Var], Var]:
    tape = Tape()
    leaves = {n: tape.leaf(theta.segment(n), name=n) for n in theta.names}
    out = g.build(leaves)
    if not isinstance(out, Var) or out.value.size != 1:
        raise ValueError("graph must produce a single-element Var")
    return tape, leaves, out


def evaluate(g: Graph, theta: ParamVector) -> float:
    """Forward value of the graph's scalar output."""
    _, _, out = _run(g, theta)
    return float(out.value)


def gradient(g: Graph, theta: ParamVector) -> ParamVector:
    """Gradient of the scalar output with respect to every parameter."""
    return value_and_gradient(g, theta)[1]


def value_and_gradient(g: Graph, theta: ParamVector) -> tuple[float, ParamVector]:
    """Forward value and full parameter gradient from a single tape pass."""
    tape, leaves, out = _run(g, theta)
    grads = tape.backprop(out)
    parts = []
    for name in theta.names:
        leaf = leaves[name]
        grad = grads.get(leaf.idx)
        if grad is None:
            grad = np.zeros_like(leaf.value)
        parts.append(grad.ravel())
    flat = np.concatenate(parts) if parts else np.zeros(0)
    return float(out.value), theta.replace(flat)


def numeric_value(g: Graph, theta: ParamVector) -> float:
    """Forward value through the untaped numpy path of the same builder.

    Builders are polymorphic over Vars and arrays, so this computes the
    identical value as `evaluate` without recording overhead; finite
    difference probing uses it.
    """
    out = g.build({n: theta.segment(n) for n in theta.names})
    arr = np.asarray(out.value if isinstance(out, Var) else out)
    if arr.size != 1:
        raise ValueError("graph must produce a single-element output")
    return float(arr)


def check_gradient(g: Graph, theta: ParamVector, step: float = 1e-5) -> float:
    """Max relative error of the tape gradient against central differences."""
    if step <= 0:
        raise ValueError("step must be positive")
    auto = gradient(g, theta).values
    worst = 0.0
    base = theta.values.copy()
    for i in range(base.size):
        shifted = base.copy()
        shifted[i] = base[i] + step
        up = numeric_value(g, theta.replace(shifted))
        shifted[i] = base[i] - step
        down = numeric_value(g, theta.replace(shifted))
        numeric = (up - down) / (2.0 * step)
        err = abs(auto[i] - numeric) / (abs(numeric) + 1e-12)
        worst = max(worst, err)
    return worst
