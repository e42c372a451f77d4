"""Reverse-mode autodiff over truncated Taylor jets.

A :class:`Jet` is a node on a :class:`Tape` that carries a value together with
its first ``order`` derivatives with respect to one designated scalar input
(the *seed*).  Components are numpy arrays of a common shape, so a single node
holds a whole batch of points or a whole layer of hidden units.  Forward
propagation uses the Leibniz and Faa di Bruno rules up to third order; the
reverse sweep differentiates those rules, which yields gradients with respect
to both parameters and seeded inputs.

Nodes whose ``order`` is 0 are plain arrays (no derivative components).  When a
plain node meets a higher-order jet it is treated as independent of the seed.
"""

from __future__ import annotations

from math import comb
from typing import Callable, Sequence

import numpy as np
from scipy import linalg as sla

from .errors import InvalidInput, NumericOverflow, ShapeError, TapeError

MAX_ORDER = 3
RELU_KINK_TOL = 1e-12

__all__ = [
    "MAX_ORDER",
    "Jet",
    "Tape",
    "jet_lift_input",
    "jet_apply",
    "reverse_grad",
]


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _faa(g: Sequence[np.ndarray], u: Sequence[np.ndarray], order: int) -> list:
    """Jet of ``phi(u)`` from derivatives ``g[j] = phi^(j)(u0)``."""
    out = [g[0]]
    if order >= 1:
        out.append(g[1] * u[1])
    if order >= 2:
        out.append(g[2] * u[1] * u[1] + g[1] * u[2])
    if order >= 3:
        out.append(g[3] * u[1] ** 3 + 3.0 * g[2] * u[1] * u[2] + g[1] * u[3])
    return out


def _faa_vjp(g, u, ybar, order: int) -> list:
    """Adjoints of the jet components of ``u`` given adjoints of ``phi(u)``.

    ``g`` must hold derivatives up to ``order + 1``.
    """
    # d y_n / d u0 is the same rule with every g shifted by one derivative
    dy_du0 = _faa(g[1:], u, order)
    ubar = [None] * (order + 1)
    acc = None
    for n in range(order + 1):
        if ybar[n] is not None:
            t = ybar[n] * dy_du0[n]
            acc = t if acc is None else acc + t
    ubar[0] = acc
    if order >= 1:
        acc = _mul_opt(ybar[1], g[1])
        if order >= 2:
            acc = _add_opt(acc, _mul_opt(ybar[2], 2.0 * g[2] * u[1]))
        if order >= 3:
            acc = _add_opt(acc, _mul_opt(ybar[3], 3.0 * g[3] * u[1] * u[1] + 3.0 * g[2] * u[2]))
        ubar[1] = acc
    if order >= 2:
        acc = _mul_opt(ybar[2], g[1])
        if order >= 3:
            acc = _add_opt(acc, _mul_opt(ybar[3], 3.0 * g[2] * u[1]))
        ubar[2] = acc
    if order >= 3:
        ubar[3] = _mul_opt(ybar[3], g[1])
    return ubar


def _mul_opt(a, b):
    if a is None:
        return None
    return a * b


def _add_opt(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _tanh_derivs(u0: np.ndarray, n: int) -> list:
    t = np.tanh(u0)
    g1 = 1.0 - t * t
    g = [t, g1]
    if n >= 2:
        g.append(-2.0 * t * g1)
    if n >= 3:
        g.append(-2.0 * g1 * g1 + 4.0 * t * t * g1)
    if n >= 4:
        g2 = g[2]
        g.append(-4.0 * g1 * g2 + 8.0 * t * g1 * g1 + 4.0 * t * t * g2)
    return g


def _exp_derivs(u0: np.ndarray, n: int) -> list:
    e = np.exp(u0)
    return [e] * (n + 1)


def _log_derivs(u0: np.ndarray, n: int) -> list:
    inv = 1.0 / u0
    g = [np.log(u0), inv]
    if n >= 2:
        g.append(-inv * inv)
    if n >= 3:
        g.append(2.0 * inv**3)
    if n >= 4:
        g.append(-6.0 * inv**4)
    return g


def _reciprocal_derivs(u0: np.ndarray, n: int) -> list:
    inv = 1.0 / u0
    g, coef, powr = [], 1.0, inv
    for j in range(n + 1):
        g.append(coef * powr)
        coef *= -(j + 1)
        powr = powr * inv
    return g


def _power_derivs(p: int) -> Callable:
    def derivs(u0: np.ndarray, n: int) -> list:
        g = []
        for j in range(n + 1):
            coef = 1.0
            for i in range(j):
                coef *= p - i
            if coef == 0.0:
                g.append(np.zeros_like(u0))
            else:
                g.append(coef * u0 ** (p - j))
        return g

    return derivs


class Jet:
    """A recorded tape node: value plus derivatives w.r.t. the seeded input."""

    __slots__ = ("tape", "index", "comps")
    __array_priority__ = 1000

    def __init__(self, tape: "Tape", index: int, comps: list):
        self.tape = tape
        self.index = index
        self.comps = comps

    @property
    def order(self) -> int:
        return len(self.comps) - 1

    @property
    def shape(self) -> tuple:
        return self.comps[0].shape

    def d(self, k: int) -> np.ndarray:
        """Component ``k`` as a plain array (zeros beyond the stored order)."""
        if k <= self.order:
            return self.comps[k]
        return np.zeros_like(self.comps[0])

    @property
    def v(self) -> np.ndarray:
        return self.comps[0]

    @property
    def d1(self) -> np.ndarray:
        return self.d(1)

    @property
    def d2(self) -> np.ndarray:
        return self.d(2)

    @property
    def d3(self) -> np.ndarray:
        return self.d(3)

    def as_tuple(self) -> tuple:
        return tuple(self.d(k) for k in range(MAX_ORDER + 1))

    def comp(self, k: int) -> "Jet":
        return self.tape.comp(self, k)

    def sum(self, axis=None) -> "Jet":
        return self.tape.sum(self, axis)

    def __add__(self, other):
        return self.tape.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return self.tape.add(self, -other if not isinstance(other, Jet) else self.tape.neg(other))

    def __rsub__(self, other):
        return self.tape.add(self.tape.neg(self), other)

    def __neg__(self):
        return self.tape.neg(self)

    def __mul__(self, other):
        if isinstance(other, Jet):
            return self.tape.mul(self, other)
        return self.tape.scale(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            raise TapeError("division by a tape node is not supported")
        return self.tape.scale(self, 1.0 / np.asarray(other, dtype=float))

    def __pow__(self, p):
        return self.tape.power(self, p)

    def __matmul__(self, other):
        return self.tape.matmul(self, other)

    def __repr__(self) -> str:
        return f"Jet(order={self.order}, shape={self.shape}, index={self.index})"


class Tape:
    """Single-owner recording of jet operations for one reverse sweep."""

    def __init__(self):
        self._kinds: list[str] = []
        self._parents: list[tuple] = []
        self._backward: list = []
        self._nodes: list[Jet] = []
        self.leaves: dict[str, Jet] = {}

    def __len__(self) -> int:
        return len(self._nodes)

    def _record(self, kind: str, comps: list, parents: tuple, backward) -> Jet:
        node = Jet(self, len(self._nodes), comps)
        self._kinds.append(kind)
        self._parents.append(parents)
        self._backward.append(backward)
        self._nodes.append(node)
        return node

    def _check(self, *nodes):
        for n in nodes:
            if isinstance(n, Jet) and n.tape is not self:
                raise TapeError("operand belongs to a different tape")

    # -- leaves ---------------------------------------------------------
    def variable(self, value, name: str | None = None) -> Jet:
        """Differentiable leaf with no derivative components.

        Named leaves are registered in ``self.leaves``.
        """
        arr = np.array(value, dtype=np.float64)
        node = self._record("variable", [arr], (), None)
        if name is not None:
            if name in self.leaves:
                raise TapeError(f"leaf {name!r} already recorded")
            self.leaves[name] = node
        return node

    def lift(self, x, order: int = MAX_ORDER) -> Jet:
        """Seed jet ``(x, 1, 0, 0)`` truncated at ``order``.

        ``x`` may be an order-0 node (its gradient then flows back) or an
        array, in which case a leaf variable is created first.
        """
        if not 0 <= order <= MAX_ORDER:
            raise InvalidInput(f"jet order must lie in [0, {MAX_ORDER}]")
        if not isinstance(x, Jet):
            arr = np.asarray(x, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise InvalidInput("cannot lift a non-finite input")
            x = self.variable(arr)
        self._check(x)
        if x.order != 0:
            raise TapeError("only plain (order-0) nodes can be lifted")
        v = x.comps[0]
        comps = [v]
        if order >= 1:
            comps.append(np.ones_like(v))
        for _ in range(2, order + 1):
            comps.append(np.zeros_like(v))

        def backward(ybar):
            return [[ybar[0]]]

        return self._record("lift", comps, (x,), backward)

    # -- elementwise ----------------------------------------------------
    def add(self, a, b) -> Jet:
        if not isinstance(a, Jet):
            a, b = b, a
        self._check(a, b)
        if not isinstance(b, Jet):
            c = np.asarray(b, dtype=np.float64)
            shape = np.broadcast_shapes(a.shape, c.shape)
            comps = [a.comps[0] + c] + [
                ak if ak.shape == shape else np.broadcast_to(ak, shape) for ak in a.comps[1:]
            ]
            shape_a = a.shape

            def backward(ybar):
                return [[None if g is None else _unbroadcast(g, shape_a) for g in ybar]]

            return self._record("add", comps, (a,), backward)
        order = max(a.order, b.order)
        comps = []
        for k in range(order + 1):
            if k <= a.order and k <= b.order:
                comps.append(a.comps[k] + b.comps[k])
            else:
                src = a.comps[k] if k <= a.order else b.comps[k]
                shape = a.shape if a.shape == b.shape else np.broadcast_shapes(a.shape, b.shape)
                comps.append(src if src.shape == shape else np.broadcast_to(src, shape))
        sa, sb, oa, ob = a.shape, b.shape, a.order, b.order

        def backward(ybar):
            ga = [None if g is None else _unbroadcast(g, sa) for g in ybar[: oa + 1]]
            gb = [None if g is None else _unbroadcast(g, sb) for g in ybar[: ob + 1]]
            return [ga, gb]

        return self._record("add", comps, (a, b), backward)

    def neg(self, a: Jet) -> Jet:
        return self.scale(a, -1.0)

    def scale(self, a: Jet, c) -> Jet:
        """Multiply by a constant (scalar or broadcastable array)."""
        self._check(a)
        c = np.asarray(c, dtype=np.float64)
        comps = [c * ak for ak in a.comps]
        sa = a.shape

        def backward(ybar):
            return [[None if g is None else _unbroadcast(g * c, sa) for g in ybar]]

        return self._record("scale", comps, (a,), backward)

    def mul(self, a: Jet, b: Jet) -> Jet:
        """Product of two nodes via the Leibniz rule."""
        if not isinstance(b, Jet):
            return self.scale(a, b)
        if not isinstance(a, Jet):
            return self.scale(b, a)
        self._check(a, b)
        order = max(a.order, b.order)
        A, B = a.comps, b.comps
        comps = []
        for n in range(order + 1):
            acc = None
            for j in range(n + 1):
                if j <= a.order and n - j <= b.order:
                    t = A[j] * B[n - j]
                    if comb(n, j) != 1:
                        t = comb(n, j) * t
                    acc = t if acc is None else acc + t
            if acc is None:
                acc = np.zeros(np.broadcast_shapes(a.shape, b.shape))
            comps.append(acc)
        sa, sb, oa, ob = a.shape, b.shape, a.order, b.order

        def backward(ybar):
            ga = []
            for j in range(oa + 1):
                acc = None
                for n in range(j, order + 1):
                    if ybar[n] is not None and n - j <= ob:
                        t = comb(n, j) * ybar[n] * B[n - j]
                        acc = t if acc is None else acc + t
                ga.append(None if acc is None else _unbroadcast(acc, sa))
            gb = []
            for m in range(ob + 1):
                acc = None
                for n in range(m, order + 1):
                    if ybar[n] is not None and n - m <= oa:
                        t = comb(n, m) * ybar[n] * A[n - m]
                        acc = t if acc is None else acc + t
                gb.append(None if acc is None else _unbroadcast(acc, sb))
            return [ga, gb]

        return self._record("mul", comps, (a, b), backward)

    def unary(self, a: Jet, derivs: Callable, kind: str = "unary") -> Jet:
        """Apply a smooth elementwise function given its derivative generator.

        ``derivs(u0, n)`` must return ``[phi(u0), phi'(u0), ..., phi^(n)(u0)]``.
        """
        self._check(a)
        k = a.order
        g = derivs(a.comps[0], k + 1)
        comps = _faa(g, a.comps, k)
        u = a.comps

        def backward(ybar):
            return [_faa_vjp(g, u, ybar, k)]

        return self._record(kind, comps, (a,), backward)

    def tanh(self, a: Jet) -> Jet:
        return self.unary(a, _tanh_derivs, "tanh")

    def exp(self, a: Jet) -> Jet:
        return self.unary(a, _exp_derivs, "exp")

    def log(self, a: Jet) -> Jet:
        if np.any(a.comps[0] <= 0):
            raise InvalidInput("log of a non-positive value")
        return self.unary(a, _log_derivs, "log")

    def reciprocal(self, a: Jet) -> Jet:
        if np.any(a.comps[0] == 0):
            raise NumericOverflow("reciprocal of zero")
        return self.unary(a, _reciprocal_derivs, "reciprocal")

    def power(self, a: Jet, p: int) -> Jet:
        if int(p) != p or p < 0:
            raise InvalidInput("only non-negative integer powers are supported")
        return self.unary(a, _power_derivs(int(p)), "power")

    def square(self, a: Jet) -> Jet:
        return self.power(a, 2)

    def relu(self, a: Jet) -> Jet:
        """ReLU with subgradient 0 at the kink and zero higher derivatives.

        Propagating nonzero derivative components through a point within
        ``RELU_KINK_TOL`` of the kink is rejected.
        """
        self._check(a)
        u0 = a.comps[0]
        mask = u0 > 0.0
        if a.order > 0:
            near = np.abs(u0) <= RELU_KINK_TOL
            if np.any(near):
                for uk in a.comps[1:]:
                    if np.any(np.broadcast_to(uk, u0.shape)[near] != 0.0):
                        raise InvalidInput("derivative jet through relu at its kink")
        comps = [np.where(mask, u0, 0.0)] + [np.where(mask, uk, 0.0) for uk in a.comps[1:]]

        def backward(ybar):
            return [[None if g is None else np.where(mask, g, 0.0) for g in ybar]]

        return self._record("relu", comps, (a,), backward)

    # -- linear algebra -------------------------------------------------
    def matmul(self, a: Jet, w) -> Jet:
        """``a @ w`` where ``w`` is a constant array or an order-0 node."""
        self._check(a, w)
        if isinstance(w, Jet):
            if w.order != 0:
                raise TapeError("right matmul operand must not depend on the seed")
            W = w.comps[0]
        else:
            W = np.asarray(w, dtype=np.float64)
        if a.shape[-1] != W.shape[0]:
            raise ShapeError(f"matmul shapes {a.shape} and {W.shape} do not align")
        A = a.comps
        comps = [ak @ W for ak in A]
        is_node = isinstance(w, Jet)

        def backward(ybar):
            ga = [None if g is None else g @ W.T for g in ybar]
            if not is_node:
                return [ga]
            gw = None
            for ak, g in zip(A, ybar):
                if g is not None:
                    t = ak.T @ g
                    gw = t if gw is None else gw + t
            return [ga, [gw]]

        parents = (a, w) if is_node else (a,)
        return self._record("matmul", comps, parents, backward)

    def affine(self, a: Jet, w, b=None) -> Jet:
        """``a @ w + b`` for a 2-D ``a``; the bias enters the value component only.

        All jet components go through a single stacked matmul.
        """
        if b is None or a.comps[0].ndim != 2:
            out = self.matmul(a, w)
            return out if b is None else self.add(out, b)
        self._check(a, w, b)
        W = w.comps[0] if isinstance(w, Jet) else np.asarray(w, dtype=np.float64)
        B = b.comps[0] if isinstance(b, Jet) else np.asarray(b, dtype=np.float64)
        if isinstance(w, Jet) and w.order != 0 or isinstance(b, Jet) and b.order != 0:
            raise TapeError("affine weights must not depend on the seed")
        n, d = a.shape
        if d != W.shape[0]:
            raise ShapeError(f"affine shapes {a.shape} and {W.shape} do not align")
        k = a.order
        X = np.concatenate(a.comps, axis=0) if k else a.comps[0]
        # value rows on their own so they match a plain forward pass bit for bit
        comps = [a.comps[0] @ W + B]
        if k:
            Y = X[n:] @ W
            comps += [Y[j * n:(j + 1) * n] for j in range(k)]
        parents = (a,) + tuple(p for p in (w, b) if isinstance(p, Jet))
        w_node, b_node = isinstance(w, Jet), isinstance(b, Jet)

        def backward(ybar):
            G = np.concatenate([np.zeros((n, W.shape[1])) if g is None else g for g in ybar], axis=0) \
                if k else ybar[0]
            GX = G @ W.T
            out = [[GX[j * n:(j + 1) * n] for j in range(k + 1)]]
            if w_node:
                out.append([X.T @ G])
            if b_node:
                out.append([_unbroadcast(ybar[0], B.shape) if ybar[0] is not None else None])
            return out

        return self._record("affine", comps, parents, backward)

    def transpose(self, a: Jet) -> Jet:
        self._check(a)
        comps = [ak.T for ak in a.comps]

        def backward(ybar):
            return [[None if g is None else g.T for g in ybar]]

        return self._record("transpose", comps, (a,), backward)

    # -- reductions and indexing ----------------------------------------
    def sum(self, a: Jet, axis=None) -> Jet:
        self._check(a)
        comps = [np.asarray(ak.sum(axis=axis)) for ak in a.comps]
        shape = a.shape

        def backward(ybar):
            out = []
            for g in ybar:
                if g is None:
                    out.append(None)
                    continue
                if axis is not None:
                    g = np.expand_dims(g, axis)
                out.append(np.broadcast_to(g, shape))
            return [out]

        return self._record("sum", comps, (a,), backward)

    def take(self, a: Jet, idx, axis: int = 0) -> Jet:
        self._check(a)
        idx = np.asarray(idx, dtype=np.intp)
        comps = [np.take(ak, idx, axis=axis) for ak in a.comps]
        shape = a.shape

        def backward(ybar):
            out = []
            for g in ybar:
                if g is None:
                    out.append(None)
                    continue
                full = np.zeros(shape)
                moved = np.moveaxis(full, axis, 0)
                np.add.at(moved, idx, np.moveaxis(g, axis, 0))
                out.append(full)
            return [out]

        return self._record("take", comps, (a,), backward)

    def reshape(self, a: Jet, shape) -> Jet:
        self._check(a)
        comps = [ak.reshape(shape) for ak in a.comps]
        old = a.shape

        def backward(ybar):
            return [[None if g is None else g.reshape(old) for g in ybar]]

        return self._record("reshape", comps, (a,), backward)

    def comp(self, a: Jet, k: int) -> Jet:
        """Extract derivative component ``k`` as a plain node."""
        self._check(a)
        if not 0 <= k <= a.order:
            raise TapeError(f"component {k} not available on an order-{a.order} jet")
        order = a.order

        def backward(ybar):
            out = [None] * (order + 1)
            out[k] = ybar[0]
            return [out]

        return self._record("comp", [a.comps[k]], (a,), backward)

    def gaussian_logpdf(self, x: Jet, mean, chol: np.ndarray) -> Jet:
        """Multivariate normal log-density of an order-0 vector node."""
        self._check(x)
        if x.order != 0:
            raise TapeError("gaussian_logpdf expects a plain node")
        r = x.comps[0] - mean
        z = sla.solve_triangular(chol, r, lower=True)
        d = r.shape[0]
        val = -0.5 * float(z @ z) - float(np.sum(np.log(np.diag(chol)))) - 0.5 * d * np.log(2.0 * np.pi)
        prec_r = sla.solve_triangular(chol.T, z, lower=False)

        def backward(ybar):
            return [[-ybar[0] * prec_r]]

        return self._record("gaussian_logpdf", [np.asarray(val)], (x,), backward)

    # -- reverse sweep --------------------------------------------------
    def gradient(self, objective: Jet, wrt: Sequence[Jet]) -> list[np.ndarray]:
        """Adjoints of the value components of ``wrt`` for a scalar objective."""
        if not isinstance(objective, Jet) or objective.tape is not self:
            raise TapeError("objective is not recorded on this tape")
        if objective.comps[0].size != 1:
            raise TapeError("objective must be a scalar node")
        for w in wrt:
            self._check(w)
        adj: list = [None] * len(self._nodes)
        adj[objective.index] = [np.ones_like(objective.comps[0])] + [None] * objective.order
        stop = min((w.index for w in wrt), default=0)
        keep = {w.index for w in wrt}
        for i in range(objective.index, stop - 1, -1):
            ybar = adj[i]
            if ybar is None:
                continue
            back = self._backward[i]
            if back is None:
                continue
            contribs = back(ybar)
            for parent, pg in zip(self._parents[i], contribs):
                j = parent.index
                cur = adj[j]
                if cur is None:
                    cur = [None] * (parent.order + 1)
                    adj[j] = cur
                for k, g in enumerate(pg):
                    if g is None:
                        continue
                    cur[k] = g if cur[k] is None else cur[k] + g
            if i not in keep:
                adj[i] = None
        out = []
        for w in wrt:
            a = adj[w.index]
            g = None if a is None else a[0]
            out.append(np.zeros_like(w.comps[0]) if g is None else np.array(g, dtype=np.float64).reshape(w.shape))
        return out


def jet_lift_input(x: float, tape: Tape | None = None, order: int = MAX_ORDER) -> Jet:
    """Record the derivative seed ``(x, 1, 0, 0)`` for a finite scalar ``x``."""
    if not np.isfinite(x):
        raise InvalidInput(f"non-finite input {x!r}")
    tape = Tape() if tape is None else tape
    return tape.lift(np.float64(x), order)


_OPS = {
    "add": lambda t, a, b: t.add(a, b),
    "mul": lambda t, a, b: t.mul(a, b),
    "tanh": lambda t, a: t.tanh(a),
    "relu": lambda t, a: t.relu(a),
    "neg": lambda t, a: t.neg(a),
    "scale": lambda t, a, c: t.scale(a, c),
    "affine": lambda t, a, w, b=None: t.affine(a, w, b),
}


def jet_apply(op: str, *args) -> Jet:
    """Apply a named elementwise operation to jets sharing one tape."""
    if op not in _OPS:
        raise InvalidInput(f"unknown jet operation {op!r}")
    tapes = {id(a.tape): a.tape for a in args if isinstance(a, Jet)}
    if len(tapes) != 1:
        raise TapeError("operands must live on exactly one tape")
    (tape,) = tapes.values()
    # non-finite results are reported below as NumericOverflow
    with np.errstate(all="ignore"):
        out = _OPS[op](tape, *args)
    for c in out.comps:
        if not np.all(np.isfinite(c)):
            raise NumericOverflow(f"non-finite jet component after {op}")
    return out


def reverse_grad(objective: Jet, wrt: Sequence[Jet]) -> list[np.ndarray]:
    """Gradient of a scalar tape node with respect to leaf nodes ``wrt``."""
    if not isinstance(objective, Jet):
        raise TapeError("objective is not a tape node")
    grads = objective.tape.gradient(objective, wrt)
    if not np.isfinite(objective.comps[0]).all():
        raise NumericOverflow("objective is not finite")
    return grads
