"""Reverse-mode automatic differentiation over a dynamically recorded graph.

Nodes hold either a Python float or a 1-D numpy array; array nodes let a
computation carry a whole batch (e.g. prediction samples, or the segments
of a polyline) through one graph instead of one node per scalar.  Every
function in this module accepts plain numbers as well as Var nodes and
falls back to ordinary evaluation when no Var is involved, so the same
model code serves both the differentiated and the undifferentiated path,
bit for bit.

Selection ops (minimum/maximum/reduce_min/reduce_max) are hard selections:
the gradient flows only to the selected operand, ties resolved to the
lowest index.  atan2 and norm2 define a zero gradient at the origin.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "Var", "Tape", "record", "backward", "grad", "finite_diff_check",
    "value", "sin", "cos", "atan2", "sqrt", "log", "norm2", "absolute",
    "minimum", "maximum", "where", "vsum", "vmean", "reduce_min",
    "reduce_max", "fold_min", "fold_max", "clamp_pass",
]


class Var:
    """One node of the computation graph.

    parents is a tuple of (parent, local_partial) pairs; local partials are
    computed eagerly during the forward pass.  Arithmetic with plain numbers
    produces nodes whose constant operand contributes no parent edge.
    """

    __slots__ = ("value", "parents", "adj")

    # Keep numpy from absorbing Var into object arrays; with this set,
    # ndarray <op> Var defers to the reflected operator below.
    __array_ufunc__ = None

    def __init__(self, value, parents=()):
        self.value = value
        self.parents = parents
        self.adj = 0.0

    def __add__(self, other):
        if isinstance(other, Var):
            return Var(self.value + other.value, ((self, 1.0), (other, 1.0)))
        return Var(self.value + other, ((self, 1.0),))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Var):
            return Var(self.value - other.value, ((self, 1.0), (other, -1.0)))
        return Var(self.value - other, ((self, 1.0),))

    def __rsub__(self, other):
        return Var(other - self.value, ((self, -1.0),))

    def __mul__(self, other):
        if isinstance(other, Var):
            return Var(self.value * other.value,
                       ((self, other.value), (other, self.value)))
        return Var(self.value * other, ((self, other),))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            inv = 1.0 / other.value
            q = self.value * inv
            return Var(q, ((self, inv), (other, -q * inv)))
        inv = 1.0 / other
        return Var(self.value * inv, ((self, inv),))

    def __rtruediv__(self, other):
        inv = 1.0 / self.value
        q = other * inv
        return Var(q, ((self, -q * inv),))

    def __neg__(self):
        return Var(-self.value, ((self, -1.0),))

    def __float__(self):
        raise TypeError(
            "implicit float(Var) would drop the gradient; use value(x)")

    def __repr__(self):
        return f"Var({self.value!r})"


class Tape:
    """Recorded computation: the leaf nodes and the scalar root."""

    __slots__ = ("leaves", "root")

    def __init__(self, leaves, root):
        self.leaves = leaves
        self.root = root


def value(x):
    """Primal value of x, whether it is a Var or a plain number/array."""
    return x.value if isinstance(x, Var) else x


def record(f, x0):
    """Evaluate f on leaf variables initialized at x0.

    Returns (value, tape).  The recorded value equals the plain evaluation
    of f on x0, bit for bit, because node arithmetic applies the identical
    scalar operations to the stored values.
    """
    leaves = [Var(float(v)) for v in x0]
    root = f(leaves)
    if not isinstance(root, Var):
        # f did not depend on its inputs at all; wrap so backward still works
        root = Var(float(root))
    return root.value, Tape(leaves, root)


def _topo(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        nid = id(node)
        if nid in seen:
            continue
        seen.add(nid)
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order  # parents precede children; root is last


def grad(root, leaves):
    """Adjoints of root with respect to each leaf (list of floats).

    Adjoints are zero-initialized on every call; leaves the root does not
    depend on get gradient 0.
    """
    if not isinstance(root, Var):
        return [0.0] * len(leaves)
    order = _topo(root)
    for node in order:
        node.adj = 0.0
    for leaf in leaves:
        leaf.adj = 0.0
    root.adj = 1.0
    for node in reversed(order):
        a = node.adj
        if type(a) is float and a == 0.0:
            continue
        for parent, d in node.parents:
            contrib = a * d
            if isinstance(parent.value, np.ndarray):
                parent.adj = parent.adj + contrib
            elif isinstance(contrib, np.ndarray):
                parent.adj = parent.adj + contrib.sum()
            else:
                parent.adj = parent.adj + contrib
    return [float(leaf.adj) for leaf in leaves]


def backward(tape, root=None):
    """Gradient of the tape's root (or an explicit root node) per leaf."""
    return np.array(grad(tape.root if root is None else root, tape.leaves))


def finite_diff_check(f, x0, h=1e-5):
    """Max relative disagreement between tape and central-difference gradients.

    Error metric per coordinate: |g_tape - g_fd| / max(1, |g_fd|).  f must
    accept a list of Vars (for recording) or floats (for the difference
    quotients) and return a scalar.
    """
    x0 = [float(v) for v in x0]
    _, tape = record(f, x0)
    g = backward(tape)
    worst = 0.0
    for i in range(len(x0)):
        xp = list(x0)
        xm = list(x0)
        xp[i] += h
        xm[i] -= h
        fd = (float(value(f(xp))) - float(value(f(xm)))) / (2.0 * h)
        err = abs(g[i] - fd) / max(1.0, abs(fd))
        if err > worst:
            worst = err
    return worst


# ---------------------------------------------------------------------------
# elementwise functions (Var or plain; scalars use math, arrays use numpy)

def _is_arr(v):
    return isinstance(v, np.ndarray)


def sin(x):
    if isinstance(x, Var):
        v = x.value
        if _is_arr(v):
            return Var(np.sin(v), ((x, np.cos(v)),))
        return Var(math.sin(v), ((x, math.cos(v)),))
    return np.sin(x) if _is_arr(x) else math.sin(x)


def cos(x):
    if isinstance(x, Var):
        v = x.value
        if _is_arr(v):
            return Var(np.cos(v), ((x, -np.sin(v)),))
        return Var(math.cos(v), ((x, -math.sin(v)),))
    return np.cos(x) if _is_arr(x) else math.cos(x)


def sqrt(x):
    if isinstance(x, Var):
        v = x.value
        r = np.sqrt(v) if _is_arr(v) else math.sqrt(v)
        return Var(r, ((x, 0.5 / r),))
    return np.sqrt(x) if _is_arr(x) else math.sqrt(x)


def log(x):
    if isinstance(x, Var):
        v = x.value
        r = np.log(v) if _is_arr(v) else math.log(v)
        return Var(r, ((x, 1.0 / v),))
    return np.log(x) if _is_arr(x) else math.log(x)


def absolute(x):
    """|x|; subgradient 0 at the kink."""
    if isinstance(x, Var):
        v = x.value
        if _is_arr(v):
            return Var(np.abs(v), ((x, np.sign(v)),))
        return Var(abs(v), ((x, float(np.sign(v))),))
    return np.abs(x) if _is_arr(x) else abs(x)


def atan2(y, x):
    """Four-quadrant arctangent; gradient defined as 0 at the origin."""
    yv = value(y)
    xv = value(x)
    arr = _is_arr(yv) or _is_arr(xv)
    r = np.arctan2(yv, xv) if arr else math.atan2(yv, xv)
    if not (isinstance(y, Var) or isinstance(x, Var)):
        return r
    d = xv * xv + yv * yv
    if arr:
        safe = np.where(d == 0.0, 1.0, d)
        dy = np.where(d == 0.0, 0.0, xv / safe)
        dx = np.where(d == 0.0, 0.0, -yv / safe)
    else:
        dy = xv / d if d != 0.0 else 0.0
        dx = -yv / d if d != 0.0 else 0.0
    parents = []
    if isinstance(y, Var):
        parents.append((y, dy))
    if isinstance(x, Var):
        parents.append((x, dx))
    return Var(r, tuple(parents))


def norm2(x, y):
    """Euclidean norm of the 2-vector (x, y); gradient 0 at zero length."""
    xv = value(x)
    yv = value(y)
    arr = _is_arr(xv) or _is_arr(yv)
    n = np.hypot(xv, yv) if arr else math.hypot(xv, yv)
    if not (isinstance(x, Var) or isinstance(y, Var)):
        return n
    if arr:
        safe = np.where(n == 0.0, 1.0, n)
        dx = np.where(n == 0.0, 0.0, xv / safe)
        dy = np.where(n == 0.0, 0.0, yv / safe)
    else:
        dx = xv / n if n != 0.0 else 0.0
        dy = yv / n if n != 0.0 else 0.0
    parents = []
    if isinstance(x, Var):
        parents.append((x, dx))
    if isinstance(y, Var):
        parents.append((y, dy))
    return Var(n, tuple(parents))


def minimum(a, b):
    """Elementwise min; on ties the first operand is selected."""
    av = value(a)
    bv = value(b)
    if not (isinstance(a, Var) or isinstance(b, Var)):
        return np.minimum(av, bv) if (_is_arr(av) or _is_arr(bv)) else min(av, bv)
    if _is_arr(av) or _is_arr(bv):
        take_a = (av <= bv).astype(float)
        r = np.where(av <= bv, av, bv)
    else:
        take_a = 1.0 if av <= bv else 0.0
        r = av if av <= bv else bv
    parents = []
    if isinstance(a, Var):
        parents.append((a, take_a))
    if isinstance(b, Var):
        parents.append((b, 1.0 - take_a))
    return Var(r, tuple(parents))


def maximum(a, b):
    """Elementwise max; on ties the first operand is selected."""
    av = value(a)
    bv = value(b)
    if not (isinstance(a, Var) or isinstance(b, Var)):
        return np.maximum(av, bv) if (_is_arr(av) or _is_arr(bv)) else max(av, bv)
    if _is_arr(av) or _is_arr(bv):
        take_a = (av >= bv).astype(float)
        r = np.where(av >= bv, av, bv)
    else:
        take_a = 1.0 if av >= bv else 0.0
        r = av if av >= bv else bv
    parents = []
    if isinstance(a, Var):
        parents.append((a, take_a))
    if isinstance(b, Var):
        parents.append((b, 1.0 - take_a))
    return Var(r, tuple(parents))


def where(cond, a, b):
    """Select a where cond else b.  cond is a plain boolean (array), not a Var."""
    av = value(a)
    bv = value(b)
    if not (isinstance(a, Var) or isinstance(b, Var)):
        return np.where(cond, av, bv)
    r = np.where(cond, av, bv)
    mask = cond.astype(float) if _is_arr(cond) else (1.0 if cond else 0.0)
    parents = []
    if isinstance(a, Var):
        parents.append((a, mask))
    if isinstance(b, Var):
        parents.append((b, 1.0 - mask))
    return Var(r, tuple(parents))


def vsum(x):
    """Sum of an array-valued node (identity on scalars)."""
    if isinstance(x, Var):
        v = x.value
        if not _is_arr(v):
            return x
        return Var(float(np.sum(v)), ((x, np.ones_like(v)),))
    return float(np.sum(x)) if _is_arr(x) else x


def vmean(x):
    """Mean of an array-valued node (identity on scalars)."""
    if isinstance(x, Var):
        v = x.value
        if not _is_arr(v):
            return x
        n = v.shape[0]
        return Var(float(np.sum(v)) / n, ((x, np.full_like(v, 1.0 / n)),))
    return float(np.mean(x)) if _is_arr(x) else x


def reduce_min(x):
    """Min over an array-valued node; gradient routes to the first minimizer."""
    if isinstance(x, Var):
        v = x.value
        if not _is_arr(v):
            return x
        i = int(np.argmin(v))
        hot = np.zeros_like(v)
        hot[i] = 1.0
        return Var(float(v[i]), ((x, hot),))
    return float(np.min(x)) if _is_arr(x) else x


def reduce_max(x):
    """Max over an array-valued node; gradient routes to the first maximizer."""
    if isinstance(x, Var):
        v = x.value
        if not _is_arr(v):
            return x
        i = int(np.argmax(v))
        hot = np.zeros_like(v)
        hot[i] = 1.0
        return Var(float(v[i]), ((x, hot),))
    return float(np.max(x)) if _is_arr(x) else x


def fold_min(items):
    """Min over a sequence of scalars/nodes; ties keep the earliest item."""
    acc = items[0]
    for it in items[1:]:
        acc = minimum(acc, it)
    return acc


def fold_max(items):
    """Max over a sequence of scalars/nodes; ties keep the earliest item."""
    acc = items[0]
    for it in items[1:]:
        acc = maximum(acc, it)
    return acc


def clamp_pass(x, lo, hi):
    """Clamp the value to [lo, hi] but pass the gradient through unchanged."""
    if isinstance(x, Var):
        v = x.value
        r = np.clip(v, lo, hi) if _is_arr(v) else min(max(v, lo), hi)
        return Var(r, ((x, 1.0),))
    return np.clip(x, lo, hi) if _is_arr(x) else min(max(x, lo), hi)
