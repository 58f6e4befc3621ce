"""Function set for expression-tree features.

All twelve operators are differentiable and total: the classically
partial ones are replaced by protected forms (analytic quotient for
division, signed log1p, square-root of the absolute value, clamped
exp), and node outputs plus weighted child inputs are clipped to
``±OUTPUT_LIMIT`` so arbitrarily nested trees never emit NaN or
infinity on finite data.
"""

from dataclasses import dataclass, field

import numpy as np

# Bound on node outputs and on weighted child inputs.  With inputs of
# magnitude <= OUTPUT_LIMIT, no operator overflows float64 before its
# own output clip (worst case cube: 1e90 << 1.8e308).
OUTPUT_LIMIT = 1e30

# exp argument clamp, exp_c(x) = exp(min(max(x, -20), 20))
EXP_ARG_LIMIT = 20.0

# Operator symbols in opcode order; kernels rely on these positions.
OPERATOR_ORDER = (
    "add", "sub", "mul", "div_aq",
    "sin", "cos", "exp_c", "log_p",
    "sqrt_a", "square", "cube", "tanh",
)

ATTR_CODE = 12
CONST_CODE = 13


def clip(x):
    return np.clip(x, -OUTPUT_LIMIT, OUTPUT_LIMIT)


def _apply_add(u, v):
    return clip(u + v)


def _apply_sub(u, v):
    return clip(u - v)


def _apply_mul(u, v):
    return clip(u * v)


def _apply_div_aq(u, v):
    # analytic quotient: smooth everywhere, equals u/v for large |v|
    return clip(u / np.sqrt(1.0 + v * v))


def _apply_sin(u):
    return np.sin(u)


def _apply_cos(u):
    return np.cos(u)


def _apply_exp_c(u):
    return np.exp(np.clip(u, -EXP_ARG_LIMIT, EXP_ARG_LIMIT))


def _apply_log_p(u):
    return np.sign(u) * np.log1p(np.abs(u))


def _apply_sqrt_a(u):
    return np.sqrt(np.abs(u))


def _apply_square(u):
    return clip(u * u)


def _apply_cube(u):
    return clip(u * u * u)


def _apply_tanh(u):
    return np.tanh(u)


def _d_add(u, v, value):
    one = np.ones_like(u)
    return one, one


def _d_sub(u, v, value):
    one = np.ones_like(u)
    return one, -one


def _d_mul(u, v, value):
    return v, u


def _d_div_aq(u, v, value):
    q = 1.0 + v * v
    s = np.sqrt(q)
    return 1.0 / s, -u * v / (q * s)


def _d_sin(u, value):
    return (np.cos(u),)


def _d_cos(u, value):
    return (-np.sin(u),)


def _d_exp_c(u, value):
    return (np.where(np.abs(u) < EXP_ARG_LIMIT, value, 0.0),)


def _d_log_p(u, value):
    return (1.0 / (1.0 + np.abs(u)),)


def _d_sqrt_a(u, value):
    # value = sqrt(|u|); derivative sign(u) / (2 value), zero at u == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.sign(u) / (2.0 * value)
    return (np.where(u == 0.0, 0.0, d),)


def _d_square(u, value):
    return (2.0 * u,)


def _d_cube(u, value):
    return (3.0 * u * u,)


def _d_tanh(u, value):
    return (1.0 - value * value,)


@dataclass(frozen=True)
class Operator:
    """One member of the function set."""

    symbol: str
    arity: int
    opcode: int
    apply: callable = field(repr=False)
    partials: callable = field(repr=False)
    differentiable: bool = True
    # whether the raw output can exceed OUTPUT_LIMIT (clip derivative
    # must then gate the partials)
    clips_output: bool = False


_DEFS = {
    "add": (2, _apply_add, _d_add, True),
    "sub": (2, _apply_sub, _d_sub, True),
    "mul": (2, _apply_mul, _d_mul, True),
    "div_aq": (2, _apply_div_aq, _d_div_aq, True),
    "sin": (1, _apply_sin, _d_sin, False),
    "cos": (1, _apply_cos, _d_cos, False),
    "exp_c": (1, _apply_exp_c, _d_exp_c, False),
    "log_p": (1, _apply_log_p, _d_log_p, False),
    "sqrt_a": (1, _apply_sqrt_a, _d_sqrt_a, False),
    "square": (1, _apply_square, _d_square, True),
    "cube": (1, _apply_cube, _d_cube, True),
    "tanh": (1, _apply_tanh, _d_tanh, False),
}

OPERATORS: dict[str, Operator] = {
    sym: Operator(
        symbol=sym,
        arity=_DEFS[sym][0],
        opcode=code,
        apply=_DEFS[sym][1],
        partials=_DEFS[sym][2],
        clips_output=_DEFS[sym][3],
    )
    for code, sym in enumerate(OPERATOR_ORDER)
}

BINARY_OPERATORS = tuple(op for op in OPERATORS.values() if op.arity == 2)
UNARY_OPERATORS = tuple(op for op in OPERATORS.values() if op.arity == 1)
