"""Expression-tree programs with trainable edge weights.

A program is an immutable tree of operator nodes and leaves plus a flat
array of edge weights owned by the :class:`Program` wrapper.  Every edge
from an operator to one of its children carries a weight that multiplies
the child's output before the operator is applied.  Trees may share node
objects freely because all per-program state lives in the weight array.

Weight slots are numbered in pre-order (the edge into a child comes just
before all edges inside that child), so the internal weights of any
subtree occupy a contiguous span.  Node rows in the compiled form are in
post-order as required by the evaluation kernels.
"""

import re
from dataclasses import dataclass
from typing import NamedTuple, Optional, Union

import numpy as np

from . import _kernels
from .operators import (
    ATTR_CODE,
    CONST_CODE,
    OPERATOR_ORDER,
    OPERATORS,
    Operator,
)


@dataclass(frozen=True)
class AttrLeaf:
    """Reference to an input column (0-based)."""

    index: int


@dataclass(frozen=True)
class ConstLeaf:
    value: float


@dataclass(frozen=True)
class OpNode:
    op: Operator
    children: tuple


Node = Union[AttrLeaf, ConstLeaf, OpNode]


def node_count(node: Node) -> int:
    if isinstance(node, OpNode):
        return 1 + sum(node_count(c) for c in node.children)
    return 1


def depth(node: Node) -> int:
    """Depth of the tree rooted here; a bare leaf has depth 0."""
    if isinstance(node, OpNode):
        return 1 + max(depth(c) for c in node.children)
    return 0


def positions(root: Node) -> list:
    """All tree positions in pre-order as (path, node) pairs.

    ``path`` is the tuple of child indices from the root.  Shared node
    objects appear once per position.
    """
    out = []

    def walk(node, path):
        out.append((path, node))
        if isinstance(node, OpNode):
            for k, child in enumerate(node.children):
                walk(child, path + (k,))

    walk(root, ())
    return out


def position_spans(root: Node) -> list:
    """Pre-order (node, start, stop) with the internal weight span per position.

    ``weights[start:stop]`` are exactly the edges inside the subtree at
    that position, which is what subtree splicing needs.
    """
    out = []

    def walk(node, start):
        entry = len(out)
        out.append(None)
        cursor = start
        if isinstance(node, OpNode):
            for child in node.children:
                # the edge into the child takes slot ``cursor``
                cursor = walk(child, cursor + 1)
        out[entry] = (node, start, cursor)
        return cursor

    walk(root, 0)
    return out


def replace_at(root: Node, path: tuple, new_node: Node) -> Node:
    if not path:
        return new_node
    k = path[0]
    children = list(root.children)
    children[k] = replace_at(children[k], path[1:], new_node)
    return OpNode(root.op, tuple(children))


class FlatProgram(NamedTuple):
    ops: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    consts: np.ndarray
    n_weights: int


def _compile(root: Node) -> FlatProgram:
    ops, a1, a2, w1, w2 = [], [], [], [], []
    consts = []
    slot = [0]

    def visit(node):
        if isinstance(node, AttrLeaf):
            ops.append(ATTR_CODE)
            a1.append(node.index)
            a2.append(-1)
            w1.append(-1)
            w2.append(-1)
        elif isinstance(node, ConstLeaf):
            ops.append(CONST_CODE)
            a1.append(len(consts))
            consts.append(node.value)
            a2.append(-1)
            w1.append(-1)
            w2.append(-1)
        else:
            child_ix, child_slot = [], []
            for child in node.children:
                child_slot.append(slot[0])
                slot[0] += 1
                child_ix.append(visit(child))
            ops.append(node.op.opcode)
            a1.append(child_ix[0])
            a2.append(child_ix[1] if len(child_ix) == 2 else -1)
            w1.append(child_slot[0])
            w2.append(child_slot[1] if len(child_slot) == 2 else -1)
        return len(ops) - 1

    visit(root)
    return FlatProgram(
        np.asarray(ops, dtype=np.int64),
        np.asarray(a1, dtype=np.int64),
        np.asarray(a2, dtype=np.int64),
        np.asarray(w1, dtype=np.int64),
        np.asarray(w2, dtype=np.int64),
        np.asarray(consts, dtype=np.float64),
        slot[0],
    )


class Program:
    """A weighted expression tree evaluable on a data matrix."""

    __slots__ = ("root", "weights", "_flat")

    def __init__(self, root: Node, weights: Optional[np.ndarray] = None,
                 _flat: Optional[FlatProgram] = None):
        self.root = root
        self._flat = _flat if _flat is not None else _compile(root)
        if weights is None:
            weights = np.ones(self._flat.n_weights)
        else:
            weights = np.array(weights, dtype=np.float64)
            if weights.shape != (self._flat.n_weights,):
                raise ValueError(
                    f"expected {self._flat.n_weights} weights, got {weights.shape}")
        self.weights = weights

    @property
    def flat(self) -> FlatProgram:
        return self._flat

    @property
    def node_count(self) -> int:
        return int(self._flat.ops.shape[0])

    @property
    def depth(self) -> int:
        return depth(self.root)

    @property
    def n_weights(self) -> int:
        return self._flat.n_weights

    def clone(self) -> "Program":
        # node objects are immutable, only the weights need copying
        return Program(self.root, self.weights.copy(), _flat=self._flat)

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _kernels.forward(self._flat, self.weights, X)[-1]

    def evaluate_table(self, X: np.ndarray) -> np.ndarray:
        """Forward pass keeping all node values, for reuse by :meth:`gradient`."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _kernels.forward(self._flat, self.weights, X)

    def gradient(self, X: np.ndarray,
                 values: Optional[np.ndarray] = None) -> np.ndarray:
        """Jacobian of the program output w.r.t. its weights, shape (N, n_weights).

        Where an input or output was clipped to keep evaluation finite the
        corresponding derivative is zero.
        """
        X = np.ascontiguousarray(X, dtype=np.float64)
        if values is None:
            values = _kernels.forward(self._flat, self.weights, X)
        return _kernels.backward(self._flat, self.weights, X, values)

    def is_constant(self) -> bool:
        """True when no input column is referenced anywhere in the tree."""
        return not bool(np.any(self._flat.ops == ATTR_CODE))

    def __repr__(self):
        return f"Program({render(self)})"


def random_program(rng: np.random.Generator, n_features: int, max_depth: int,
                   method: str = "grow", p_internal: float = 0.6,
                   p_attr: float = 0.8) -> Program:
    """Generate a random program with all edge weights set to 1.

    ``grow`` may stop early below ``max_depth``; ``full`` expands every
    branch to exactly ``max_depth``.  The root is always an operator so
    generated features are never bare leaves.
    """
    if n_features < 1:
        raise ValueError("n_features must be >= 1")
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    if method not in ("grow", "full"):
        raise ValueError(f"unknown method {method!r}")

    def leaf():
        if rng.random() < p_attr:
            return AttrLeaf(int(rng.integers(n_features)))
        return ConstLeaf(float(rng.uniform(-1.0, 1.0)))

    def build(d):
        at_cap = d >= max_depth
        if at_cap or (d > 0 and method == "grow"
                      and rng.random() >= p_internal):
            return leaf()
        op = OPERATORS[OPERATOR_ORDER[int(rng.integers(len(OPERATOR_ORDER)))]]
        return OpNode(op, tuple(build(d + 1) for _ in range(op.arity)))

    return Program(build(0))


_INFIX = {"add": "+", "sub": "-", "mul": "*"}


def render(program: Program) -> str:
    """Serialize to a string that :func:`parse` restores exactly.

    Weighted children print as ``weight*expr`` with ``repr`` floats, so
    the round trip is bit exact.  add/sub/mul use infix inside parens,
    everything else uses call syntax.
    """
    weights = program.weights

    # slots are positional, so the walk carries a slot cursor
    def walk(node, start):
        if isinstance(node, AttrLeaf):
            return f"x{node.index + 1}", start
        if isinstance(node, ConstLeaf):
            return repr(float(node.value)), start
        parts = []
        cursor = start
        for child in node.children:
            slot = cursor
            text, cursor = walk(child, cursor + 1)
            parts.append(f"{float(weights[slot])!r}*{text}")
        sym = _INFIX.get(node.op.symbol)
        if sym is not None:
            return f"({parts[0]} {sym} {parts[1]})", cursor
        return f"{node.op.symbol}({', '.join(parts)})", cursor

    text, _ = walk(program.root, 0)
    return text


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<punct>[()+\-*,]))")


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            raise ValueError(f"cannot tokenize program text at offset {pos}: "
                             f"{text[pos:pos + 20]!r}")
        kind = m.lastgroup
        tokens.append((kind, m.group(kind)))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0
        self.weights = []

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else (None, None)

    def take(self, kind=None, value=None):
        k, v = self.peek()
        if k is None:
            raise ValueError("unexpected end of program text")
        if (kind is not None and k != kind) or (value is not None and v != value):
            raise ValueError(f"unexpected token {v!r} at position {self.pos}")
        self.pos += 1
        return v

    def number(self):
        k, v = self.peek()
        sign = 1.0
        if k == "punct" and v == "-":
            self.take()
            sign = -1.0
        return sign * float(self.take("num"))

    def weighted(self):
        w = self.number()
        self.take("punct", "*")
        self.weights.append(w)
        return self.primary()

    def primary(self):
        k, v = self.peek()
        if k == "punct" and v == "(":
            self.take()
            left = self.weighted()
            sym = self.take("punct")
            if sym not in ("+", "-", "*"):
                raise ValueError(f"expected an infix operator, got {sym!r}")
            right = self.weighted()
            self.take("punct", ")")
            name = {"+": "add", "-": "sub", "*": "mul"}[sym]
            return OpNode(OPERATORS[name], (left, right))
        if k == "name":
            if re.fullmatch(r"x\d+", v):
                self.take()
                index = int(v[1:]) - 1
                if index < 0:
                    raise ValueError(f"attribute numbers start at x1, got {v!r}")
                return AttrLeaf(index)
            if v in OPERATORS and v not in _INFIX:
                self.take()
                op = OPERATORS[v]
                self.take("punct", "(")
                children = [self.weighted()]
                if op.arity == 2:
                    self.take("punct", ",")
                    children.append(self.weighted())
                self.take("punct", ")")
                return OpNode(op, tuple(children))
            raise ValueError(f"unknown name {v!r} in program text")
        if k == "num" or (k == "punct" and v == "-"):
            return ConstLeaf(self.number())
        raise ValueError(f"unexpected token {v!r} in program text")


def parse(text: str) -> Program:
    """Inverse of :func:`render`."""
    parser = _Parser(_tokenize(text))
    root = parser.primary()
    if parser.pos != len(parser.tokens):
        k, v = parser.peek()
        raise ValueError(f"trailing input {v!r} after program text")
    return Program(root, np.asarray(parser.weights, dtype=np.float64))


@dataclass
class Individual:
    """A set of feature programs plus the state of its fitted linear model.

    The fitted fields are filled in by the model layer; fresh offspring
    carry only ``programs``.  ``train_phi`` caches the raw feature matrix
    on the training inputs so selection and variation never re-evaluate
    trees.
    """

    programs: list
    coefs: Optional[np.ndarray] = None
    intercept: Optional[float] = None
    means: Optional[np.ndarray] = None
    stds: Optional[np.ndarray] = None
    constant_mask: Optional[np.ndarray] = None
    train_mse: Optional[float] = None
    train_phi: Optional[np.ndarray] = None
    train_yhat: Optional[np.ndarray] = None
    train_errors: Optional[np.ndarray] = None

    @property
    def n_features_out(self) -> int:
        return len(self.programs)

    @property
    def complexity(self) -> int:
        return sum(p.node_count for p in self.programs)

    def clone_programs(self) -> list:
        return [p.clone() for p in self.programs]
