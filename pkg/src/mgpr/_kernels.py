"""Forward and backward kernels over flattened expression trees.

Programs are compiled (in :mod:`mgpr.program`) to flat post-order
arrays; these kernels evaluate them and compute the Jacobian of the
output with respect to the edge weights.  A numba-jitted pair is used
when numba is importable (set ``MGPR_DISABLE_NUMBA=1`` to force the
numpy path); both paths implement the identical arithmetic, and the
opcode switch must stay in sync with ``operators.OPERATOR_ORDER``.
"""

import os

import numpy as np

from .operators import (
    ATTR_CODE,
    CONST_CODE,
    EXP_ARG_LIMIT,
    OPERATORS,
    OPERATOR_ORDER,
    OUTPUT_LIMIT,
)

_C = OUTPUT_LIMIT
_E = EXP_ARG_LIMIT


def _forward_numpy(ops, a1, a2, w1, w2, consts, weights, X):
    n_nodes = ops.shape[0]
    N = X.shape[0]
    values = np.empty((n_nodes, N))
    for i in range(n_nodes):
        op = ops[i]
        if op == ATTR_CODE:
            values[i] = X[:, a1[i]]
        elif op == CONST_CODE:
            values[i] = consts[a1[i]]
        else:
            spec = OPERATORS[OPERATOR_ORDER[op]]
            u = np.clip(weights[w1[i]] * values[a1[i]], -_C, _C)
            if spec.arity == 2:
                v = np.clip(weights[w2[i]] * values[a2[i]], -_C, _C)
                values[i] = spec.apply(u, v)
            else:
                values[i] = spec.apply(u)
    return values


def _backward_numpy(ops, a1, a2, w1, w2, consts, weights, X, values):
    n_nodes = ops.shape[0]
    N = X.shape[0]
    jac = np.zeros((N, weights.shape[0]))
    adj = np.zeros((n_nodes, N))
    adj[n_nodes - 1] = 1.0
    for i in range(n_nodes - 1, -1, -1):
        op = ops[i]
        if op >= ATTR_CODE:
            continue
        spec = OPERATORS[OPERATOR_ORDER[op]]
        a = adj[i]
        if spec.clips_output:
            a = a * (np.abs(values[i]) < _C)
        c1 = values[a1[i]]
        t1 = weights[w1[i]]
        u_raw = t1 * c1
        m1 = np.abs(u_raw) < _C
        u = np.clip(u_raw, -_C, _C)
        if spec.arity == 2:
            c2 = values[a2[i]]
            t2 = weights[w2[i]]
            v_raw = t2 * c2
            m2 = np.abs(v_raw) < _C
            v = np.clip(v_raw, -_C, _C)
            d1, d2 = spec.partials(u, v, values[i])
            jac[:, w1[i]] += a * d1 * c1 * m1
            jac[:, w2[i]] += a * d2 * c2 * m2
            adj[a1[i]] += a * d1 * t1 * m1
            adj[a2[i]] += a * d2 * t2 * m2
        else:
            (d1,) = spec.partials(u, values[i])
            jac[:, w1[i]] += a * d1 * c1 * m1
            adj[a1[i]] += a * d1 * t1 * m1
    return jac


def _make_numba_kernels():
    from numba import njit

    @njit(cache=True)
    def forward(ops, a1, a2, w1, w2, consts, weights, X, values):  # pragma: no cover - jitted
        n_nodes = ops.shape[0]
        N = X.shape[0]
        for i in range(n_nodes):
            op = ops[i]
            if op == 12:
                k = a1[i]
                for n in range(N):
                    values[i, n] = X[n, k]
            elif op == 13:
                c = consts[a1[i]]
                for n in range(N):
                    values[i, n] = c
            elif op <= 3:
                i1 = a1[i]
                i2 = a2[i]
                t1 = weights[w1[i]]
                t2 = weights[w2[i]]
                for n in range(N):
                    u = t1 * values[i1, n]
                    if u > _C:
                        u = _C
                    elif u < -_C:
                        u = -_C
                    v = t2 * values[i2, n]
                    if v > _C:
                        v = _C
                    elif v < -_C:
                        v = -_C
                    if op == 0:
                        r = u + v
                    elif op == 1:
                        r = u - v
                    elif op == 2:
                        r = u * v
                    else:
                        r = u / np.sqrt(1.0 + v * v)
                    if r > _C:
                        r = _C
                    elif r < -_C:
                        r = -_C
                    values[i, n] = r
            else:
                i1 = a1[i]
                t1 = weights[w1[i]]
                for n in range(N):
                    u = t1 * values[i1, n]
                    if u > _C:
                        u = _C
                    elif u < -_C:
                        u = -_C
                    if op == 4:
                        r = np.sin(u)
                    elif op == 5:
                        r = np.cos(u)
                    elif op == 6:
                        ua = u
                        if ua > _E:
                            ua = _E
                        elif ua < -_E:
                            ua = -_E
                        r = np.exp(ua)
                    elif op == 7:
                        if u >= 0.0:
                            r = np.log1p(u)
                        else:
                            r = -np.log1p(-u)
                    elif op == 8:
                        r = np.sqrt(np.abs(u))
                    elif op == 9:
                        r = u * u
                        if r > _C:
                            r = _C
                    elif op == 10:
                        r = u * u * u
                        if r > _C:
                            r = _C
                        elif r < -_C:
                            r = -_C
                    else:
                        r = np.tanh(u)
                    values[i, n] = r

    @njit(cache=True)
    def backward(ops, a1, a2, w1, w2, consts, weights, X, values, adj, jac):  # pragma: no cover - jitted
        n_nodes = ops.shape[0]
        N = X.shape[0]
        for i in range(n_nodes):
            for n in range(N):
                adj[i, n] = 0.0
        for n in range(N):
            adj[n_nodes - 1, n] = 1.0
        for i in range(n_nodes - 1, -1, -1):
            op = ops[i]
            if op >= 12:
                continue
            clips = op <= 3 or op == 9 or op == 10
            i1 = a1[i]
            t1 = weights[w1[i]]
            s1 = w1[i]
            if op <= 3:
                i2 = a2[i]
                t2 = weights[w2[i]]
                s2 = w2[i]
                for n in range(N):
                    a = adj[i, n]
                    if a == 0.0:
                        continue
                    val = values[i, n]
                    if clips and (val >= _C or val <= -_C):
                        continue
                    c1 = values[i1, n]
                    c2 = values[i2, n]
                    ur = t1 * c1
                    vr = t2 * c2
                    m1 = -_C < ur < _C
                    m2 = -_C < vr < _C
                    u = min(max(ur, -_C), _C)
                    v = min(max(vr, -_C), _C)
                    if op == 0:
                        d1 = 1.0
                        d2 = 1.0
                    elif op == 1:
                        d1 = 1.0
                        d2 = -1.0
                    elif op == 2:
                        d1 = v
                        d2 = u
                    else:
                        q = 1.0 + v * v
                        s = np.sqrt(q)
                        d1 = 1.0 / s
                        d2 = -u * v / (q * s)
                    if m1:
                        jac[n, s1] += a * d1 * c1
                        adj[i1, n] += a * d1 * t1
                    if m2:
                        jac[n, s2] += a * d2 * c2
                        adj[i2, n] += a * d2 * t2
            else:
                for n in range(N):
                    a = adj[i, n]
                    if a == 0.0:
                        continue
                    val = values[i, n]
                    if clips and (val >= _C or val <= -_C):
                        continue
                    c1 = values[i1, n]
                    ur = t1 * c1
                    m1 = -_C < ur < _C
                    u = min(max(ur, -_C), _C)
                    if op == 4:
                        d1 = np.cos(u)
                    elif op == 5:
                        d1 = -np.sin(u)
                    elif op == 6:
                        if -_E < u < _E:
                            d1 = val
                        else:
                            d1 = 0.0
                    elif op == 7:
                        d1 = 1.0 / (1.0 + np.abs(u))
                    elif op == 8:
                        if u == 0.0:
                            d1 = 0.0
                        elif u > 0.0:
                            d1 = 1.0 / (2.0 * val)
                        else:
                            d1 = -1.0 / (2.0 * val)
                    elif op == 9:
                        d1 = 2.0 * u
                    elif op == 10:
                        d1 = 3.0 * u * u
                    else:
                        d1 = 1.0 - val * val
                    if m1:
                        jac[n, s1] += a * d1 * c1
                        adj[i1, n] += a * d1 * t1

    return forward, backward


USING_NUMBA = False
_nb_forward = None
_nb_backward = None

if not os.environ.get("MGPR_DISABLE_NUMBA"):
    try:
        _nb_forward, _nb_backward = _make_numba_kernels()
        USING_NUMBA = True
    except ImportError:  # pragma: no cover - numba always present in CI
        pass


def forward(flat, weights, X):
    """Evaluate a compiled program; returns the (n_nodes, N) value table."""
    if USING_NUMBA:
        values = np.empty((flat.ops.shape[0], X.shape[0]))
        _nb_forward(flat.ops, flat.a1, flat.a2, flat.w1, flat.w2,
                    flat.consts, weights, X, values)
        return values
    return _forward_numpy(flat.ops, flat.a1, flat.a2, flat.w1, flat.w2,
                          flat.consts, weights, X)


def backward(flat, weights, X, values):
    """Jacobian d(root output)/d(weights), shape (N, n_weights)."""
    if USING_NUMBA:
        n_nodes = flat.ops.shape[0]
        N = X.shape[0]
        jac = np.zeros((N, weights.shape[0]))
        adj = np.empty((n_nodes, N))
        _nb_backward(flat.ops, flat.a1, flat.a2, flat.w1, flat.w2,
                     flat.consts, weights, X, values, adj, jac)
        return jac
    return _backward_numpy(flat.ops, flat.a1, flat.a2, flat.w1, flat.w2,
                           flat.consts, weights, X, values)
