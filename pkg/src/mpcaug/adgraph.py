"""Scalar expression graphs with exact symbolic derivatives.

Expressions are built with ordinary Python operators on :class:`Expr`
nodes::

    x, y = symbols("x y")
    f = x**2 * sin(y)

Nodes are hash-consed, so structurally identical subexpressions share a
single node.  Derivatives are produced by reverse-mode source
transformation: :func:`gradient` returns new expressions, which can be
differentiated again.  Evaluation goes through straight-line Python code
generated once per output set (see :class:`CompiledFunction`).
"""
from __future__ import annotations

import math
import weakref
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Expr", "ExprGraph", "CompiledFunction", "DomainError", "UnsupportedNode",
    "DimensionError", "symbol", "symbols", "const", "sin", "cos", "exp", "sqrt",
    "log", "gradient", "evaluate", "jacobian", "hessian_lagrangian",
]

SUPPORTED_OPS = frozenset(
    {"const", "var", "add", "sub", "mul", "div", "neg", "pow", "sin", "cos",
     "exp", "sqrt", "log"}
)


class DimensionError(ValueError):
    """Input vector length does not match a graph's input block."""


class DomainError(ArithmeticError):
    """A node was evaluated outside its domain (e.g. sqrt of a negative)."""

    def __init__(self, node_index: int, op: str, arg: float):
        super().__init__(f"domain error at node {node_index} ({op} of {arg!r})")
        self.node_index = node_index
        self.op = op
        self.arg = arg


class UnsupportedNode(TypeError):
    """Node kind outside the differentiable primitive set."""


_INTERN: "weakref.WeakValueDictionary[tuple, Expr]" = weakref.WeakValueDictionary()


class Expr:
    """An immutable, interned scalar expression node."""

    __slots__ = ("op", "args", "value", "__weakref__")

    def __init__(self, op: str, args: tuple, value):
        self.op = op
        self.args = args
        self.value = value

    # -- construction helpers -------------------------------------------------

    def __repr__(self) -> str:
        if self.op == "const":
            return repr(self.value)
        if self.op == "var":
            return str(self.value)
        if self.op == "pow":
            return f"pow({self.args[0]!r}, {self.value!r})"
        return f"{self.op}({', '.join(repr(a) for a in self.args)})"

    @property
    def is_const(self) -> bool:
        return self.op == "const"

    def __add__(self, other):
        return _add(self, _wrap(other))

    def __radd__(self, other):
        return _add(_wrap(other), self)

    def __sub__(self, other):
        return _sub(self, _wrap(other))

    def __rsub__(self, other):
        return _sub(_wrap(other), self)

    def __mul__(self, other):
        return _mul(self, _wrap(other))

    def __rmul__(self, other):
        return _mul(_wrap(other), self)

    def __truediv__(self, other):
        return _div(self, _wrap(other))

    def __rtruediv__(self, other):
        return _div(_wrap(other), self)

    def __neg__(self):
        return _neg(self)

    def __pos__(self):
        return self

    def __pow__(self, exponent):
        if isinstance(exponent, Expr):
            if not exponent.is_const:
                raise UnsupportedNode("pow only supports constant exponents")
            exponent = exponent.value
        return _pow(self, float(exponent))


def _node(op: str, args: tuple = (), value=None) -> Expr:
    key = (op, tuple(id(a) for a in args), value)
    node = _INTERN.get(key)
    if node is None:
        node = Expr(op, args, value)
        _INTERN[key] = node
    return node


def const(value: float) -> Expr:
    return _node("const", (), float(value))


def symbol(name: str) -> Expr:
    return _node("var", (), str(name))


def symbols(names: str | Iterable[str]) -> list[Expr]:
    if isinstance(names, str):
        names = names.split()
    return [symbol(n) for n in names]


def _wrap(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, (int, float, np.floating, np.integer)):
        return const(float(x))
    raise TypeError(f"cannot use {type(x).__name__} in an expression")


ZERO = const(0.0)
ONE = const(1.0)


def _is(x: Expr, v: float) -> bool:
    return x.op == "const" and x.value == v


def _add(a: Expr, b: Expr) -> Expr:
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    if a.is_const and b.is_const:
        return const(a.value + b.value)
    if b.op == "neg":
        return _sub(a, b.args[0])
    return _node("add", (a, b))


def _sub(a: Expr, b: Expr) -> Expr:
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return _neg(b)
    if a is b:
        return ZERO
    if a.is_const and b.is_const:
        return const(a.value - b.value)
    if b.op == "neg":
        return _add(a, b.args[0])
    return _node("sub", (a, b))


def _mul(a: Expr, b: Expr) -> Expr:
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    if _is(a, -1.0):
        return _neg(b)
    if _is(b, -1.0):
        return _neg(a)
    if a.is_const and b.is_const:
        return const(a.value * b.value)
    return _node("mul", (a, b))


def _div(a: Expr, b: Expr) -> Expr:
    if _is(a, 0.0):
        return ZERO
    if _is(b, 1.0):
        return a
    if a.is_const and b.is_const and b.value != 0.0:
        return const(a.value / b.value)
    return _node("div", (a, b))


def _neg(a: Expr) -> Expr:
    if a.is_const:
        return const(-a.value)
    if a.op == "neg":
        return a.args[0]
    return _node("neg", (a,))


def _pow(a: Expr, c: float) -> Expr:
    if c == 0.0:
        return ONE
    if c == 1.0:
        return a
    if a.is_const:
        try:
            return const(a.value ** c)
        except (ValueError, ZeroDivisionError, OverflowError):
            pass
    return _node("pow", (a,), c)


def _unary(op: str, fn):
    def build(x) -> Expr:
        x = _wrap(x)
        if x.is_const:
            try:
                return const(fn(x.value))
            except (ValueError, OverflowError):
                pass
        return _node(op, (x,))
    build.__name__ = op
    return build


sin = _unary("sin", math.sin)
cos = _unary("cos", math.cos)
exp = _unary("exp", math.exp)
sqrt = _unary("sqrt", math.sqrt)
log = _unary("log", math.log)


# -- traversal and differentiation ------------------------------------------


def topological_order(roots: Iterable[Expr]) -> list[Expr]:
    """Children-first ordering of every node reachable from ``roots``."""
    seen: set[int] = set()
    order: list[Expr] = []
    for root in roots:
        if id(root) in seen:
            continue
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for arg in reversed(node.args):
                if id(arg) not in seen:
                    stack.append((arg, False))
    return order


def _local_partials(node: Expr) -> tuple[Expr, ...]:
    op, args = node.op, node.args
    if op == "add":
        return ONE, ONE
    if op == "sub":
        return ONE, const(-1.0)
    if op == "mul":
        return args[1], args[0]
    if op == "div":
        return _div(ONE, args[1]), _neg(_div(node, args[1]))
    if op == "neg":
        return (const(-1.0),)
    if op == "pow":
        c = node.value
        return (_mul(const(c), _pow(args[0], c - 1.0)),)
    if op == "sin":
        return (cos(args[0]),)
    if op == "cos":
        return (_neg(sin(args[0])),)
    if op == "exp":
        return (node,)
    if op == "sqrt":
        return (_div(const(0.5), node),)
    if op == "log":
        return (_div(ONE, args[0]),)
    raise UnsupportedNode(f"cannot differentiate node kind {op!r}")


def gradient(y: Expr, wrt: Sequence[Expr]) -> list[Expr]:
    """Symbolic gradient of scalar ``y`` with respect to variables ``wrt``."""
    adjoint: dict[int, Expr] = {id(y): ONE}
    for node in reversed(topological_order([y])):
        bar = adjoint.get(id(node))
        if bar is None or not node.args:
            continue
        for arg, partial in zip(node.args, _local_partials(node)):
            contrib = _mul(bar, partial)
            prev = adjoint.get(id(arg))
            adjoint[id(arg)] = contrib if prev is None else _add(prev, contrib)
    return [adjoint.get(id(v), ZERO) for v in wrt]


# -- code generation --------------------------------------------------------

_CODE = {
    "add": "{0} + {1}",
    "sub": "{0} - {1}",
    "mul": "{0} * {1}",
    "div": "{0} / {1}",
    "neg": "-{0}",
    "sin": "_sin({0})",
    "cos": "_cos({0})",
    "exp": "_exp({0})",
    "sqrt": "_sqrt({0})",
    "log": "_log({0})",
}


class CompiledFunction:
    """Straight-line evaluator for a list of scalar expressions.

    Parameters
    ----------
    outputs : sequence of Expr
        Expressions to evaluate.
    blocks : sequence of sequence of Expr
        Ordered input variables, one sequence per positional argument of
        :meth:`__call__`.
    """

    def __init__(self, outputs: Sequence[Expr], blocks: Sequence[Sequence[Expr]]):
        self.outputs = list(outputs)
        self.blocks = [list(b) for b in blocks]
        self.sizes = [len(b) for b in self.blocks]
        self.nodes = topological_order(self.outputs)
        self._source = self._generate()
        namespace = {"inf": math.inf, "nan": math.nan, "_sin": math.sin, "_cos": math.cos, "_exp": math.exp,
                     "_sqrt": math.sqrt, "_log": math.log}
        exec(compile(self._source, "<adgraph>", "exec"), namespace)
        self._fn = namespace["_f"]

    def _generate(self) -> str:
        location: dict[str, str] = {}
        for k, block in enumerate(self.blocks):
            for i, v in enumerate(block):
                location[v.value] = f"a{k}[{i}]"
        names: dict[int, str] = {}
        lines = [f"def _f({', '.join(f'a{k}' for k in range(len(self.blocks)))}):"]
        for idx, node in enumerate(self.nodes):
            op = node.op
            if op == "const":
                names[id(node)] = repr(node.value)
                continue
            if op == "var":
                if node.value not in location:
                    raise ValueError(f"variable {node.value!r} is not an input")
                names[id(node)] = location[node.value]
                continue
            name = f"t{idx}"
            names[id(node)] = name
            args = [names[id(a)] for a in node.args]
            if op == "pow":
                c = node.value
                if c == 2.0:
                    expr = f"{args[0]} * {args[0]}"
                elif c == -1.0:
                    expr = f"1.0 / {args[0]}"
                elif c == 0.5:
                    expr = f"_sqrt({args[0]})"
                elif float(c).is_integer() and c > 0:
                    expr = f"{args[0]} ** {int(c)}"
                else:
                    expr = f"{args[0]} ** {c!r}"
            elif op in _CODE:
                expr = _CODE[op].format(*[f"({a})" if a[0] == "-" else a for a in args])
            else:
                raise UnsupportedNode(f"unsupported node kind {op!r}")
            lines.append(f"    {name} = {expr}")
        outs = ", ".join(names[id(o)] for o in self.outputs)
        lines.append(f"    return ({outs}{',' if len(self.outputs) == 1 else ''})")
        return "\n".join(lines) + "\n"

    def __call__(self, *arrays) -> np.ndarray:
        if len(arrays) != len(self.blocks):
            raise DimensionError(f"expected {len(self.blocks)} input blocks")
        lists = []
        for arr, n in zip(arrays, self.sizes):
            arr = np.asarray(arr, dtype=float).ravel()
            if arr.shape[0] != n:
                raise DimensionError(f"input block has length {arr.shape[0]}, expected {n}")
            lists.append(arr.tolist())
        try:
            return np.array(self._fn(*lists), dtype=float)
        except (ValueError, ZeroDivisionError, OverflowError, TypeError):
            self._locate_failure(lists)
            raise

    def _locate_failure(self, lists) -> None:
        env: dict[str, float] = {}
        for block, vals in zip(self.blocks, lists):
            env.update(zip((v.value for v in block), vals))
        interpret(self.nodes, env)


def _apply(node: Expr, vals: list) -> float:
    op = node.op
    if op == "add":
        return vals[0] + vals[1]
    if op == "sub":
        return vals[0] - vals[1]
    if op == "mul":
        return vals[0] * vals[1]
    if op == "div":
        return vals[0] / vals[1]
    if op == "neg":
        return -vals[0]
    if op == "pow":
        return vals[0] ** node.value
    return getattr(math, op)(vals[0])


def interpret(nodes: Sequence[Expr], env: dict[str, float]) -> dict[int, float]:
    """Node-by-node evaluation; raises :class:`DomainError` with the node index."""
    values: dict[int, float] = {}
    for idx, node in enumerate(nodes):
        if node.op == "const":
            values[id(node)] = node.value
        elif node.op == "var":
            values[id(node)] = env[node.value]
        elif node.op in SUPPORTED_OPS:
            vals = [values[id(a)] for a in node.args]
            try:
                out = _apply(node, vals)
            except (ValueError, ZeroDivisionError, OverflowError) as err:
                raise DomainError(idx, node.op, vals[-1]) from err
            if isinstance(out, complex):
                raise DomainError(idx, node.op, vals[0])
            values[id(node)] = out
        else:
            raise UnsupportedNode(f"unsupported node kind {node.op!r}")
    return values


# -- graphs -------------------------------------------------------------------


class ExprGraph:
    """A vector of scalar expressions of a decision block ``w`` and parameter block ``p``.

    ``nodes`` lists ``(kind, child_indices, payload)`` triples in topological
    order; ``output_indices`` points into it.
    """

    def __init__(self, outputs: Sequence[Expr] | Expr, w: Sequence[Expr], p: Sequence[Expr]):
        if isinstance(outputs, Expr):
            outputs = [outputs]
        self.outputs = tuple(_wrap(o) for o in outputs)
        self.w = tuple(w)
        self.p = tuple(p)
        for v in self.w + self.p:
            if v.op != "var":
                raise ValueError("graph inputs must be symbols")
        names_w = [v.value for v in self.w]
        names_p = [v.value for v in self.p]
        if len(set(names_w)) != len(names_w) or len(set(names_p)) != len(names_p):
            raise ValueError("duplicate input symbol")
        if set(names_w) & set(names_p):
            raise ValueError("symbol appears in both the w and p blocks")
        order = topological_order(self.outputs)
        index = {id(n): i for i, n in enumerate(order)}
        known = set(names_w) | set(names_p)
        for n in order:
            if n.op not in SUPPORTED_OPS:
                raise UnsupportedNode(f"unsupported node kind {n.op!r}")
            if n.op == "var" and n.value not in known:
                raise ValueError(f"symbol {n.value!r} is not a declared input")
        self._order = order
        self.nodes = tuple((n.op, tuple(index[id(a)] for a in n.args), n.value) for n in order)
        self.output_indices = tuple(index[id(o)] for o in self.outputs)
        self._compiled: CompiledFunction | None = None

    @property
    def n_out(self) -> int:
        return len(self.outputs)

    @property
    def n_w(self) -> int:
        return len(self.w)

    @property
    def n_p(self) -> int:
        return len(self.p)

    def compiled(self) -> CompiledFunction:
        if self._compiled is None:
            self._compiled = CompiledFunction(self.outputs, [self.w, self.p])
        return self._compiled

    def __call__(self, w, p) -> np.ndarray:
        return self.compiled()(w, p)

    def interpret(self, w, p) -> np.ndarray:
        """Reference evaluation without code generation."""
        w = _check(w, self.n_w)
        p = _check(p, self.n_p)
        env = dict(zip((v.value for v in self.w), w.tolist()))
        env.update(zip((v.value for v in self.p), p.tolist()))
        values = interpret(self._order, env)
        return np.array([values[id(o)] for o in self.outputs])

    def __getstate__(self):
        return {"outputs": self.outputs, "w": self.w, "p": self.p}

    def __setstate__(self, state):
        self.__init__(state["outputs"], state["w"], state["p"])


def _check(x, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != n:
        raise DimensionError(f"input has length {x.shape[0]}, expected {n}")
    return x


def evaluate(graph: ExprGraph, w, p) -> np.ndarray:
    """Evaluate every output of ``graph`` at ``(w, p)``."""
    return graph(w, p)


class MatrixEvaluator:
    """Evaluates a dense matrix from a sparse set of entry expressions."""

    def __init__(self, shape: tuple[int, int], entries: list[tuple[int, int, Expr]],
                 blocks: Sequence[Sequence[Expr]], symmetric: bool = False):
        self.shape = shape
        self.symmetric = symmetric
        self.rows = np.array([e[0] for e in entries], dtype=int)
        self.cols = np.array([e[1] for e in entries], dtype=int)
        self.entries = [e[2] for e in entries]
        self.sizes = [len(b) for b in blocks]
        self._fn = CompiledFunction(self.entries, blocks) if entries else None

    @property
    def nnz(self) -> int:
        return len(self.entries)

    def __call__(self, *arrays) -> np.ndarray:
        out = np.zeros(self.shape)
        if self._fn is None:
            for arr, n in zip(arrays, self.sizes):
                _check(arr, n)
            return out
        vals = self._fn(*arrays)
        out[self.rows, self.cols] = vals
        if self.symmetric:
            out[self.cols, self.rows] = vals
        return out


def jacobian(graph: ExprGraph, block: str = "w") -> MatrixEvaluator:
    """Evaluator of the ``n_out x n_block`` Jacobian of ``graph``.

    The returned callable takes ``(w, p)``.
    """
    wrt = _block(graph, block)
    entries = []
    for i, out in enumerate(graph.outputs):
        for j, d in enumerate(gradient(out, wrt)):
            if not _is(d, 0.0):
                entries.append((i, j, d))
    return MatrixEvaluator((graph.n_out, len(wrt)), entries, [graph.w, graph.p])


def _block(graph: ExprGraph, block: str) -> tuple[Expr, ...]:
    if block == "w":
        return graph.w
    if block == "p":
        return graph.p
    raise ValueError(f"block must be 'w' or 'p', got {block!r}")


def lagrangian(objective: ExprGraph, equalities: ExprGraph | None,
               inequalities: ExprGraph | None) -> tuple[Expr, list[Expr], list[Expr]]:
    """Symbolic ``J + lam.c + mu.g`` with fresh multiplier symbols."""
    L = objective.outputs[0]
    lam = [symbol(f"__lam{i}") for i in range(equalities.n_out if equalities else 0)]
    mu = [symbol(f"__mu{j}") for j in range(inequalities.n_out if inequalities else 0)]
    terms = []
    if equalities is not None:
        terms += [_mul(l, c) for l, c in zip(lam, equalities.outputs)]
    if inequalities is not None:
        terms += [_mul(m, g) for m, g in zip(mu, inequalities.outputs)]
    for t in terms:
        L = _add(L, t)
    return L, lam, mu


def hessian_lagrangian(objective: ExprGraph, equalities: ExprGraph | None = None,
                       inequalities: ExprGraph | None = None,
                       block: str = "ww") -> MatrixEvaluator:
    """Evaluator of a second-derivative block of the Lagrangian.

    ``block`` is ``"ww"`` (symmetric ``n_w x n_w``) or ``"wp"``
    (``n_w x n_p``).  The evaluator takes ``(w, p, lam, mu)``.
    """
    if block not in ("ww", "wp"):
        raise ValueError(f"block must be 'ww' or 'wp', got {block!r}")
    w, p = objective.w, objective.p
    L, lam, mu = lagrangian(objective, equalities, inequalities)
    grad_w = gradient(L, w)
    entries = []
    if block == "ww":
        for i, gi in enumerate(grad_w):
            if _is(gi, 0.0):
                continue
            for j, hij in enumerate(gradient(gi, w[: i + 1])):
                if not _is(hij, 0.0):
                    entries.append((i, j, hij))
        shape = (len(w), len(w))
    else:
        for i, gi in enumerate(grad_w):
            if _is(gi, 0.0):
                continue
            for j, hij in enumerate(gradient(gi, p)):
                if not _is(hij, 0.0):
                    entries.append((i, j, hij))
        shape = (len(w), len(p))
    return MatrixEvaluator(shape, entries, [w, p, lam, mu], symmetric=(block == "ww"))
