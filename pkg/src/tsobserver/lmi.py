"""Affine LMI problems: decision variables, block expressions, lowering.

Expressions are built with ordinary matrix syntax on :class:`Affine`
objects, e.g. ``A.T @ P + P @ A - C.T @ K.T - K @ C`` where ``P`` and ``K``
are variables and ``A``, ``C`` numpy arrays. Every expression is kept as a
sum of terms ``L @ op(V) @ R`` (``op`` is identity or transpose), scalar
terms ``v * M`` and constants, so it is affine in the decision entries by
construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import numerics


class LmiError(ValueError):
    pass


class ShapeMismatch(LmiError):
    pass


class MissingVariable(LmiError):
    pass


class InconsistentEqualities(LmiError):
    pass


class PremiseNotMeasured(LmiError):
    pass


class MultipleLeftVertices(LmiError):
    pass


class NonpositiveBounds(LmiError):
    pass


NEG = "negative"
POS = "positive"

# ---------------------------------------------------------------------------
# variables


@dataclass(frozen=True)
class VariableDecl:
    name: str
    shape: str  # "symmetric" | "rectangular" | "scalar"
    rows: int
    cols: int
    positive: bool = False

    __array_ufunc__ = None

    @property
    def size(self) -> int:
        if self.shape == "symmetric":
            return self.rows * (self.rows + 1) // 2
        return self.rows * self.cols

    def _index(self):
        if self.shape == "symmetric":
            return list(zip(*np.triu_indices(self.rows)))
        return [(i, j) for i in range(self.rows) for j in range(self.cols)]

    def unpack(self, vec) -> np.ndarray:
        vec = np.asarray(vec, dtype=float)
        out = np.zeros((self.rows, self.cols))
        for value, (i, j) in zip(vec, self._index()):
            out[i, j] = value
            if self.shape == "symmetric":
                out[j, i] = value
        return out

    def pack(self, value) -> np.ndarray:
        m = np.array(value, dtype=float, ndmin=2)
        if m.shape != (self.rows, self.cols):
            raise ShapeMismatch(f"{self.name}: got shape {m.shape}, expected {(self.rows, self.cols)}")
        if self.shape == "symmetric":
            m = 0.5 * (m + m.T)
        return np.array([m[i, j] for i, j in self._index()])

    def basis(self, k: int) -> np.ndarray:
        e = np.zeros(self.size)
        e[k] = 1.0
        return self.unpack(e)

    def entry_labels(self) -> list[str]:
        return [f"{self.name}[{i},{j}]" for i, j in self._index()]

    # variables used in expressions
    @property
    def x(self) -> "Affine":
        return Affine.variable(self)

    @property
    def T(self) -> "Affine":
        return self.x.T

    def __matmul__(self, other):
        return self.x @ other

    def __rmatmul__(self, other):
        return other @ self.x

    def __mul__(self, other):
        return self.x * other

    __rmul__ = __mul__

    def __neg__(self):
        return -self.x

    def __add__(self, other):
        return self.x + other

    __radd__ = __add__

    def __sub__(self, other):
        return self.x - other

    def __rsub__(self, other):
        return other - self.x


def symmetric(name: str, n: int, positive: bool = False) -> VariableDecl:
    return VariableDecl(name, "symmetric", n, n, positive)


def rectangular(name: str, rows: int, cols: int) -> VariableDecl:
    return VariableDecl(name, "rectangular", rows, cols)


def scalar(name: str, positive: bool = False) -> VariableDecl:
    return VariableDecl(name, "scalar", 1, 1, positive)


# ---------------------------------------------------------------------------
# affine expressions


@dataclass(frozen=True)
class _Term:
    var: str
    left: np.ndarray
    right: np.ndarray | None  # None marks a scalar term: value = v * left
    transpose: bool = False

    def value(self, v: np.ndarray) -> np.ndarray:
        if self.right is None:
            return v[0, 0] * self.left
        return self.left @ (v.T if self.transpose else v) @ self.right

    def T(self) -> "_Term":
        if self.right is None:
            return _Term(self.var, self.left.T, None)
        return _Term(self.var, self.right.T, self.left.T, not self.transpose)


class Affine:
    """Affine matrix expression in the decision variables."""

    __array_ufunc__ = None  # keep numpy from hijacking ndarray @ Affine

    def __init__(self, shape, terms=(), const=None, decls=None):
        self.shape = tuple(shape)
        self.terms: tuple[_Term, ...] = tuple(terms)
        self.const = np.zeros(self.shape) if const is None else np.asarray(const, dtype=float)
        self.decls: dict[str, VariableDecl] = dict(decls or {})

    @classmethod
    def variable(cls, decl: VariableDecl) -> "Affine":
        if decl.shape == "scalar":
            term = _Term(decl.name, np.ones((1, 1)), None)
        else:
            term = _Term(decl.name, np.eye(decl.rows), np.eye(decl.cols))
        return cls((decl.rows, decl.cols), [term], decls={decl.name: decl})

    @classmethod
    def constant(cls, m) -> "Affine":
        m = np.array(m, dtype=float, ndmin=2)
        return cls(m.shape, const=m)

    @staticmethod
    def lift(obj) -> "Affine":
        if isinstance(obj, Affine):
            return obj
        if isinstance(obj, VariableDecl):
            return obj.x
        return Affine.constant(obj)

    # algebra -------------------------------------------------------------
    def _merge(self, other: "Affine", terms, const) -> "Affine":
        decls = {**self.decls, **other.decls}
        return Affine(self.shape, terms, const, decls)

    def __add__(self, other):
        other = Affine.lift(other)
        if other.shape != self.shape:
            raise ShapeMismatch(f"cannot add shapes {self.shape} and {other.shape}")
        return self._merge(other, self.terms + other.terms, self.const + other.const)

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-Affine.lift(other))

    def __rsub__(self, other):
        return Affine.lift(other) + (-self)

    def __mul__(self, c):
        if isinstance(c, (Affine, VariableDecl)):
            raise LmiError("product of two expressions is not affine")
        arr = np.asarray(c, dtype=float)
        if arr.ndim == 0:
            terms = [_Term(t.var, float(arr) * t.left, t.right, t.transpose) for t in self.terms]
            return Affine(self.shape, terms, float(arr) * self.const, self.decls)
        # scalar expression times a constant matrix
        if self.shape != (1, 1):
            raise ShapeMismatch("only 1x1 expressions may scale a matrix")
        m = np.array(arr, ndmin=2)
        terms = []
        for t in self.terms:
            if t.right is None:
                terms.append(_Term(t.var, t.left[0, 0] * m, None))
            else:
                raise ShapeMismatch("use a scalar variable to scale a matrix")
        return Affine(m.shape, terms, self.const[0, 0] * m, self.decls)

    __rmul__ = __mul__

    def __matmul__(self, m):
        if isinstance(m, (Affine, VariableDecl)):
            raise LmiError("product of two expressions is not affine")
        m = np.array(m, dtype=float, ndmin=2)
        if m.shape[0] != self.shape[1]:
            raise ShapeMismatch(f"cannot multiply {self.shape} by {m.shape}")
        terms = []
        for t in self.terms:
            if t.right is None:
                terms.append(_Term(t.var, t.left @ m, None))
            else:
                terms.append(_Term(t.var, t.left, t.right @ m, t.transpose))
        return Affine((self.shape[0], m.shape[1]), terms, self.const @ m, self.decls)

    def __rmatmul__(self, m):
        m = np.array(m, dtype=float, ndmin=2)
        if m.shape[1] != self.shape[0]:
            raise ShapeMismatch(f"cannot multiply {m.shape} by {self.shape}")
        terms = []
        for t in self.terms:
            if t.right is None:
                terms.append(_Term(t.var, m @ t.left, None))
            else:
                terms.append(_Term(t.var, m @ t.left, t.right, t.transpose))
        return Affine((m.shape[0], self.shape[1]), terms, m @ self.const, self.decls)

    @property
    def T(self) -> "Affine":
        return Affine(self.shape[::-1], [t.T() for t in self.terms], self.const.T, self.decls)

    # evaluation ----------------------------------------------------------
    def variables(self) -> set[str]:
        return {t.var for t in self.terms}

    def evaluate(self, assignment: Mapping[str, np.ndarray], constant: bool = True) -> np.ndarray:
        out = self.const.copy() if constant else np.zeros(self.shape)
        for t in self.terms:
            if t.var not in assignment:
                raise MissingVariable(t.var)
            out = out + t.value(np.array(assignment[t.var], dtype=float, ndmin=2))
        return out


def zeros(rows: int, cols: int) -> Affine:
    return Affine((rows, cols))


def block(grid: Sequence[Sequence[object]]) -> Affine:
    """Assemble a block matrix. Entries may be Affine, variables, arrays or
    None (zero; its size is inferred from the rest of the row/column)."""
    nr, nc = len(grid), len(grid[0])
    rows = [None] * nr
    cols = [None] * nc
    lifted = [[None if g is None else Affine.lift(g) for g in row] for row in grid]
    for i in range(nr):
        for j in range(nc):
            g = lifted[i][j]
            if g is None:
                continue
            if rows[i] is not None and rows[i] != g.shape[0] or cols[j] is not None and cols[j] != g.shape[1]:
                raise ShapeMismatch(f"block ({i},{j}) has inconsistent shape {g.shape}")
            rows[i], cols[j] = g.shape
    if None in rows or None in cols:
        raise ShapeMismatch("every block row and column needs at least one sized entry")
    r_off = np.concatenate([[0], np.cumsum(rows)])
    c_off = np.concatenate([[0], np.cumsum(cols)])
    total = (int(r_off[-1]), int(c_off[-1]))
    out = Affine(total)
    for i in range(nr):
        for j in range(nc):
            g = lifted[i][j]
            if g is None:
                continue
            sel_r = np.zeros((total[0], rows[i]))
            sel_r[r_off[i]:r_off[i + 1]] = np.eye(rows[i])
            sel_c = np.zeros((cols[j], total[1]))
            sel_c[:, c_off[j]:c_off[j + 1]] = np.eye(cols[j])
            out = out + sel_r @ g @ sel_c
    out.block_sizes = (tuple(rows), tuple(cols))
    return out


def sym_block(lower: Sequence[Sequence[object]]) -> Affine:
    """Symmetric block matrix from its lower triangle (row i has i+1 entries);
    the upper triangle is filled with transposes."""
    n = len(lower)
    grid = [[None] * n for _ in range(n)]
    for i, row in enumerate(lower):
        if len(row) != i + 1:
            raise ShapeMismatch(f"row {i} of a symmetric block needs {i + 1} entries")
        for j, g in enumerate(row):
            grid[i][j] = g
            if i != j and g is not None:
                grid[j][i] = Affine.lift(g).T
    return block(grid)


# ---------------------------------------------------------------------------
# constraints and problems


@dataclass(frozen=True)
class LmiConstraint:
    name: str
    expr: Affine
    sense: str = NEG  # NEG: expr < 0, POS: expr > 0
    strict: bool = True

    def matrix(self, assignment) -> np.ndarray:
        """Evaluated block, sign-adjusted so that ``< 0`` means satisfied."""
        m = self.expr.evaluate(assignment)
        m = 0.5 * (m + m.T)
        return -m if self.sense == POS else m


@dataclass(frozen=True)
class LinearInequality:
    """``expr >= 0`` (``> 0`` with the problem's margin when strict)."""

    name: str
    expr: Affine
    strict: bool = False


@dataclass(frozen=True)
class LinearEquality:
    name: str
    expr: Affine


@dataclass
class AffineLmiProblem:
    variables: list[VariableDecl]
    lmis: list[LmiConstraint] = field(default_factory=list)
    inequalities: list[LinearInequality] = field(default_factory=list)
    equalities: list[LinearEquality] = field(default_factory=list)
    strict_margin: float = 1e-6
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise LmiError("variable names must be unique")
        known = set(names)
        for c in (*self.lmis, *self.inequalities, *self.equalities):
            missing = c.expr.variables() - known
            if missing:
                raise MissingVariable(f"{c.name} uses undeclared {sorted(missing)}")
        for c in self.lmis:
            if c.expr.shape[0] != c.expr.shape[1]:
                raise ShapeMismatch(f"{c.name} is not square")
        for c in self.inequalities:
            if c.expr.shape != (1, 1):
                raise ShapeMismatch(f"{c.name} is not scalar")

    def decl(self, name: str) -> VariableDecl:
        for v in self.variables:
            if v.name == name:
                return v
        raise MissingVariable(name)

    def all_lmis(self) -> list[LmiConstraint]:
        """Explicit LMIs followed by those implied by positivity flags."""
        out = list(self.lmis)
        for v in self.variables:
            if v.positive and v.shape == "symmetric":
                out.append(LmiConstraint(f"{v.name}>0", v.x, POS, True))
        return out

    def all_inequalities(self) -> list[LinearInequality]:
        out = list(self.inequalities)
        for v in self.variables:
            if v.positive and v.shape == "scalar":
                out.append(LinearInequality(f"{v.name}>0", v.x, True))
        return out

    def check_assignment(self, assignment: Mapping[str, object]) -> dict[str, np.ndarray]:
        out = {}
        for v in self.variables:
            if v.name not in assignment:
                raise MissingVariable(v.name)
            m = np.array(assignment[v.name], dtype=float, ndmin=2)
            if m.shape != (v.rows, v.cols):
                raise ShapeMismatch(f"{v.name}: got shape {m.shape}, expected {(v.rows, v.cols)}")
            out[v.name] = m
        return out


@dataclass(frozen=True)
class Residual:
    name: str
    kind: str  # "lmi" | "inequality" | "equality"
    value: float

    def passed(self, tol: float = 0.0) -> bool:
        if self.kind == "equality":
            return self.value <= max(tol, 1e-9)
        return self.value < tol


def evaluate(problem: AffineLmiProblem, assignment: Mapping[str, object]) -> list[Residual]:
    """Residual per constraint; negative means satisfied (equalities report
    the largest absolute entry)."""
    a = problem.check_assignment(assignment)
    out = [Residual(c.name, "lmi", numerics.max_eig(c.matrix(a))) for c in problem.all_lmis()]
    out += [Residual(c.name, "inequality", -float(c.expr.evaluate(a)[0, 0])) for c in problem.all_inequalities()]
    out += [Residual(c.name, "equality", float(np.abs(c.expr.evaluate(a)).max(initial=0.0)))
            for c in problem.equalities]
    return out


# ---------------------------------------------------------------------------
# lowering to standard form


@dataclass(frozen=True)
class SdpBlock:
    """Constraint ``F0 + sum_j y_j F[j] + eps*I < 0``."""

    name: str
    F0: np.ndarray
    F: np.ndarray  # shape (d, s, s)
    eps: float = 0.0

    @property
    def size(self) -> int:
        return self.F0.shape[0]

    def value(self, y) -> np.ndarray:
        return self.F0 + np.tensordot(np.asarray(y, dtype=float), self.F, axes=1)


@dataclass(frozen=True)
class SdpRow:
    """Constraint ``a0 + a @ y >= eps``."""

    name: str
    a0: float
    a: np.ndarray
    eps: float = 0.0

    def value(self, y) -> float:
        return float(self.a0 + self.a @ np.asarray(y, dtype=float))


@dataclass(frozen=True)
class StandardSdp:
    d: int
    blocks: tuple[SdpBlock, ...]
    rows: tuple[SdpRow, ...] = ()
    objective: np.ndarray | None = None
    # provenance: full coordinate vector x = offset + basis @ y
    offset: np.ndarray | None = None
    basis: np.ndarray | None = None
    layout: tuple[tuple[VariableDecl, int], ...] = ()

    def __post_init__(self):
        for b in self.blocks:
            if b.F0.ndim != 2 or b.F0.shape[0] != b.F0.shape[1]:
                raise ShapeMismatch(f"block {b.name}: F0 not square")
            if b.F.shape != (self.d, *b.F0.shape):
                raise ShapeMismatch(f"block {b.name}: coefficient array has shape {b.F.shape}")
        for r in self.rows:
            if r.a.shape != (self.d,):
                raise ShapeMismatch(f"row {r.name}: coefficient length {r.a.shape}")

    def recover_full(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.basis is None:
            return y
        return self.offset + self.basis @ y

    def recover(self, y) -> dict[str, np.ndarray]:
        """Variable values for a reduced coordinate vector."""
        x = self.recover_full(y)
        return {decl.name: decl.unpack(x[start:start + decl.size]) for decl, start in self.layout}

    def reduce(self, assignment: Mapping[str, object]) -> np.ndarray:
        """Reduced coordinates of an assignment (least squares onto the
        equality-constrained parametrization)."""
        x = np.zeros(self.offset.size)
        for decl, start in self.layout:
            x[start:start + decl.size] = decl.pack(assignment[decl.name])
        if self.basis is None or self.basis.shape[1] == 0:
            return np.zeros(self.d)
        y, *_ = np.linalg.lstsq(self.basis, x - self.offset, rcond=None)
        return y


def _layout(problem: AffineLmiProblem):
    layout, start = [], 0
    for v in problem.variables:
        layout.append((v, start))
        start += v.size
    return tuple(layout), start


def _linear_maps(expr: Affine, layout, total: int) -> tuple[np.ndarray, np.ndarray]:
    """Constant part and per-coordinate coefficient matrices of ``expr``."""
    coeffs = np.zeros((total, *expr.shape))
    by_var: dict[str, list[_Term]] = {}
    for t in expr.terms:
        by_var.setdefault(t.var, []).append(t)
    for decl, start in layout:
        terms = by_var.get(decl.name)
        if not terms:
            continue
        for k in range(decl.size):
            e = decl.basis(k)
            acc = np.zeros(expr.shape)
            for t in terms:
                acc = acc + t.value(e)
            coeffs[start + k] = acc
    return expr.const.copy(), coeffs


def _nullspace_parametrization(A: np.ndarray, b: np.ndarray, tol_rel: float = 1e-10):
    """Solve ``A x = b`` by Gauss-Jordan with partial pivoting.

    Returns ``(x_p, N)`` with every solution equal to ``x_p + N y``.
    """
    m, D = A.shape
    R = np.hstack([A.astype(float), b.reshape(-1, 1).astype(float)])
    scale = max(np.abs(A).max(initial=0.0), 1.0)
    tol = tol_rel * scale
    pivots: list[int] = []
    row = 0
    for col in range(D):
        if row >= m:
            break
        p = row + int(np.argmax(np.abs(R[row:, col])))
        if abs(R[p, col]) <= tol:
            R[row:, col] = 0.0
            continue
        R[[row, p]] = R[[p, row]]
        R[row] /= R[row, col]
        others = [i for i in range(m) if i != row]
        R[others] -= np.outer(R[others, col], R[row])
        pivots.append(col)
        row += 1
    if row < m and np.abs(R[row:, -1]).max(initial=0.0) > tol * max(1.0, np.abs(b).max(initial=0.0)):
        raise InconsistentEqualities("linear equalities have no solution")
    free = [c for c in range(D) if c not in pivots]
    x_p = np.zeros(D)
    for i, c in enumerate(pivots):
        x_p[c] = R[i, -1]
    N = np.zeros((D, len(free)))
    for k, f in enumerate(free):
        N[f, k] = 1.0
        for i, c in enumerate(pivots):
            N[c, k] = -R[i, f]
    return x_p, N


def lower(problem: AffineLmiProblem) -> StandardSdp:
    """Vectorize variables, eliminate equalities, and emit ``F(y) < 0`` blocks
    and ``a(y) >= eps`` rows over the reduced coordinates."""
    layout, D = _layout(problem)
    eps = problem.strict_margin

    if problem.equalities:
        rows_A, rows_b = [], []
        for c in problem.equalities:
            const, coeffs = _linear_maps(c.expr, layout, D)
            rows_A.append(coeffs.reshape(D, -1).T)
            rows_b.append(-const.ravel())
        x_p, N = _nullspace_parametrization(np.vstack(rows_A), np.concatenate(rows_b))
    else:
        x_p, N = np.zeros(D), np.eye(D)
    d = N.shape[1]

    blocks = []
    for c in problem.all_lmis():
        const, coeffs = _linear_maps(c.expr, layout, D)
        const = 0.5 * (const + const.T)
        coeffs = 0.5 * (coeffs + coeffs.transpose(0, 2, 1))
        if c.sense == POS:
            const, coeffs = -const, -coeffs
        F0 = const + np.tensordot(x_p, coeffs, axes=1)
        F = np.tensordot(N.T, coeffs, axes=1)
        blocks.append(SdpBlock(c.name, F0, F, eps if c.strict else 0.0))

    rows = []
    for c in problem.all_inequalities():
        const, coeffs = _linear_maps(c.expr, layout, D)
        a = coeffs[:, 0, 0]
        rows.append(SdpRow(c.name, float(const[0, 0] + a @ x_p), N.T @ a, eps if c.strict else 0.0))

    return StandardSdp(d=d, blocks=tuple(blocks), rows=tuple(rows), objective=np.zeros(d),
                       offset=x_p, basis=N, layout=layout)


def sdp_residuals(sdp: StandardSdp, y) -> list[float]:
    """Residuals of the standard form at ``y`` in the order of
    :func:`evaluate` (blocks, then rows)."""
    return [numerics.max_eig(b.value(y)) for b in sdp.blocks] + [-r.value(y) for r in sdp.rows]


# ---------------------------------------------------------------------------
# the two observer theorems


def assemble_theorem1(model) -> AffineLmiProblem:
    """Measured-premise descriptor observer conditions.

    One ``2n x 2n`` block per rule pair (i, k) in the variables P1 (> 0),
    P3 and Y3_i = P3^T L_i, plus the explicit block P1 > 0.
    """
    if not model.premise_measured:
        raise PremiseNotMeasured("theorem 1 needs measurable premise variables")
    n, q = model.n, model.q
    C = model.C
    P1 = symmetric("P1", n, positive=True)
    P3 = rectangular("P3", n, n)
    Y = [rectangular(f"Y3_{i + 1}", n, q) for i in range(model.r)]
    lmis = []
    for i, A in enumerate(model.A):
        for k, E in enumerate(model.E):
            b11 = A.T @ P3.x + P3.T @ A - C.T @ Y[i].T - Y[i] @ C
            b21 = P1.x - E.T @ P3.x + P3.T @ A - Y[i] @ C
            b22 = -(E.T @ P3.x) - P3.T @ E
            lmis.append(LmiConstraint(f"T1[i={i + 1},k={k + 1}]", sym_block([[b11], [b21, b22]])))
    lmis.append(LmiConstraint("P1", P1.x, POS))
    return AffineLmiProblem([P1, P3, *Y], lmis, strict_margin=1e-6 * model.scale(),
                            meta={"theorem": 1, "r": model.r, "l": model.l})


EQUALITY_MODES = ("descriptor", "none")


def assemble_theorem2(model, decomp, bounds, equality_mode: str = "descriptor") -> AffineLmiProblem:
    """Unmeasured-premise (Lipschitz) observer conditions around the
    decomposition ``A_i = A0 + Abar_i``, ``B_i = B0 + Bbar_i``."""
    E = model.single_E()
    if E is None:
        raise MultipleLeftVertices("theorem 2 needs a single descriptor matrix E")
    if equality_mode not in EQUALITY_MODES:
        raise LmiError(f"unknown equality mode {equality_mode!r}")
    m = np.asarray(bounds.m, dtype=float)
    nb = np.asarray(bounds.n, dtype=float)
    if m.shape != (model.r,) or nb.shape != (model.r,):
        raise ShapeMismatch("Lipschitz constants must have one entry per rule")
    if np.any(m < 0) or np.any(nb < 0) or not bounds.beta1 or bounds.beta1 <= 0:
        raise NonpositiveBounds("Lipschitz constants must be >= 0 and beta1 > 0")
    n, q, mu = model.n, model.q, model.m_u
    C = model.C
    A0 = decomp.A0
    I = np.eye(n)
    P = symmetric("P", n, positive=True)
    Q = symmetric("Q", n, positive=True)
    K = [rectangular(f"K_{i + 1}", n, q) for i in range(model.r)]
    lam1 = scalar("lambda1", positive=True)
    lam2 = scalar("lambda2", positive=True)
    gamma = scalar("gamma")

    lmis = []
    for i in range(model.r):
        lyap = A0.T @ P.x + P.x @ A0 - C.T @ K[i].T - K[i] @ C + Q.x
        lmis.append(LmiConstraint(f"T2a[i={i + 1}]", lyap))
    for i in range(model.r):
        d11 = -Q.x + lam1 * (m[i] ** 2 * I)
        PA = P.x @ decomp.Abar[i]
        PB = P.x @ decomp.Bbar[i]
        coupling = gamma * (nb[i] * I)
        big = sym_block([
            [d11],
            [PA.T, lam1 * -np.eye(n)],
            [PB.T, None, lam2 * -np.eye(mu)],
            [coupling, None, None, lam2 * -np.eye(n)],
        ])
        lmis.append(LmiConstraint(f"T2b[i={i + 1}]", big))
    ineq = [LinearInequality("gamma-beta1*lambda2", gamma.x - lam2 * float(bounds.beta1))]
    eqs = []
    if equality_mode == "descriptor":
        eqs.append(LinearEquality("E^T P = P E", E.T @ P.x - P.x @ E))
        ep = E.T @ P.x
        lmis.append(LmiConstraint("sym(E^T P)", 0.5 * (ep + ep.T), POS))
    return AffineLmiProblem([P, Q, *K, lam1, lam2, gamma], lmis, ineq, eqs,
                            strict_margin=1e-6 * model.scale(),
                            meta={"theorem": 2, "r": model.r, "equality_mode": equality_mode})
