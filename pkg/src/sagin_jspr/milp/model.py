"""Solver-agnostic MILP container with sparse rows."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence, Union

import numpy as np
import scipy.sparse as sp


class VarKind(str, Enum):
    CONTINUOUS = "continuous"
    INTEGER = "integer"
    BINARY = "binary"


class Sense(str, Enum):
    LE = "<="
    EQ = "="
    GE = ">="


@dataclass(frozen=True)
class Variable:
    id: int
    kind: VarKind
    lb: float
    ub: float
    name: str = ""

    def __post_init__(self):
        if self.kind is VarKind.BINARY and (self.lb < 0 or self.ub > 1):
            raise ValueError(f"binary variable {self.name!r} must have bounds within [0, 1]")
        if self.lb > self.ub:
            raise ValueError(f"variable {self.name!r}: lower bound {self.lb} > upper bound {self.ub}")
        if math.isnan(self.lb) or math.isnan(self.ub):
            raise ValueError(f"variable {self.name!r}: NaN bound")

    @property
    def is_integer(self) -> bool:
        return self.kind is not VarKind.CONTINUOUS

    # arithmetic sugar so small models read like algebra
    def _expr(self) -> "LinearExpr":
        return LinearExpr({self.id: 1.0})

    def __add__(self, other):
        return self._expr() + other

    __radd__ = __add__

    def __sub__(self, other):
        return self._expr() - other

    def __rsub__(self, other):
        return (-1.0) * self._expr() + other

    def __mul__(self, k):
        return self._expr() * k

    __rmul__ = __mul__

    def __neg__(self):
        return self._expr() * -1.0

    def __le__(self, other):
        return self._expr() <= other

    def __ge__(self, other):
        return self._expr() >= other

    def __eq__(self, other):  # type: ignore[override]
        if isinstance(other, Variable):
            return self.id == other.id and self.kind == other.kind and self.name == other.name
        return self._expr() == other

    def __hash__(self):
        return hash(("var", self.id))


Operand = Union["LinearExpr", Variable, float, int]


class LinearExpr:
    """Sparse linear expression: {variable id: coefficient} plus a constant."""

    __slots__ = ("terms", "constant")

    def __init__(self, terms: Mapping[int, float] | None = None, constant: float = 0.0):
        self.terms: dict[int, float] = {}
        if terms:
            for vid, coef in terms.items():
                if not math.isfinite(coef):
                    raise ValueError(f"non-finite coefficient for variable {vid}")
                if coef != 0.0:
                    self.terms[vid] = float(coef)
        if not math.isfinite(constant):
            raise ValueError("non-finite constant")
        self.constant = float(constant)

    @classmethod
    def sum(cls, items: Iterable[Operand]) -> "LinearExpr":
        out = cls()
        for item in items:
            out._iadd(item, 1.0)
        return out

    def _iadd(self, other: Operand, scale: float) -> None:
        if isinstance(other, Variable):
            c = self.terms.get(other.id, 0.0) + scale
            if c == 0.0:
                self.terms.pop(other.id, None)
            else:
                self.terms[other.id] = c
        elif isinstance(other, LinearExpr):
            for vid, coef in other.terms.items():
                c = self.terms.get(vid, 0.0) + scale * coef
                if c == 0.0:
                    self.terms.pop(vid, None)
                else:
                    self.terms[vid] = c
            self.constant += scale * other.constant
        elif isinstance(other, (int, float, np.floating, np.integer)):
            self.constant += scale * float(other)
        else:
            return NotImplemented  # type: ignore[return-value]

    def copy(self) -> "LinearExpr":
        e = LinearExpr()
        e.terms = dict(self.terms)
        e.constant = self.constant
        return e

    def __add__(self, other: Operand) -> "LinearExpr":
        e = self.copy()
        e._iadd(other, 1.0)
        return e

    __radd__ = __add__

    def __sub__(self, other: Operand) -> "LinearExpr":
        e = self.copy()
        e._iadd(other, -1.0)
        return e

    def __rsub__(self, other: Operand) -> "LinearExpr":
        return self * -1.0 + other

    def __mul__(self, k) -> "LinearExpr":
        k = float(k)
        if k == 0.0:
            return LinearExpr()
        return LinearExpr({v: c * k for v, c in self.terms.items()}, self.constant * k)

    __rmul__ = __mul__

    def __neg__(self) -> "LinearExpr":
        return self * -1.0

    def _relation(self, other: Operand, sense: Sense) -> "Constraint":
        diff = self - other
        rhs = -diff.constant
        diff.constant = 0.0
        return Constraint(diff, sense, rhs)

    def __le__(self, other: Operand) -> "Constraint":
        return self._relation(other, Sense.LE)

    def __ge__(self, other: Operand) -> "Constraint":
        return self._relation(other, Sense.GE)

    def __eq__(self, other: Operand) -> "Constraint":  # type: ignore[override]
        return self._relation(other, Sense.EQ)

    __hash__ = None  # type: ignore[assignment]

    def value(self, values: Sequence[float] | np.ndarray) -> float:
        return self.constant + sum(c * values[v] for v, c in self.terms.items())

    def __repr__(self) -> str:
        parts = [f"{c:+g}*v{v}" for v, c in sorted(self.terms.items())]
        if self.constant:
            parts.append(f"{self.constant:+g}")
        return "LinearExpr(" + " ".join(parts or ["0"]) + ")"


@dataclass
class Constraint:
    expr: LinearExpr
    sense: Sense
    rhs: float
    name: str = ""
    family: str = ""

    def __post_init__(self):
        if not math.isfinite(self.rhs):
            raise ValueError(f"constraint {self.name!r}: non-finite rhs")
        if self.expr.constant:
            self.rhs -= self.expr.constant
            self.expr = self.expr.copy()
            self.expr.constant = 0.0


@dataclass
class MatrixForm:
    """Column-indexed arrays for LP engines: lb_row <= A x <= ub_row."""

    c: np.ndarray
    c0: float
    A: sp.csr_matrix
    row_lb: np.ndarray
    row_ub: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    integer: np.ndarray


@dataclass
class MilpModel:
    name: str = "model"
    variables: list[Variable] = field(default_factory=list)
    constraints: list[Constraint] = field(default_factory=list)
    objective: LinearExpr = field(default_factory=LinearExpr)
    _matrix: MatrixForm | None = field(default=None, repr=False, compare=False)

    def add_var(
        self,
        name: str = "",
        kind: VarKind = VarKind.CONTINUOUS,
        lb: float = 0.0,
        ub: float = math.inf,
    ) -> Variable:
        if kind is VarKind.BINARY:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        var = Variable(len(self.variables), kind, float(lb), float(ub), name or f"v{len(self.variables)}")
        self.variables.append(var)
        self._matrix = None
        return var

    def add_constr(self, constr: Constraint, name: str = "", family: str = "") -> Constraint:
        if not isinstance(constr, Constraint):
            raise TypeError("expected a Constraint (did a comparison collapse to bool?)")
        n = len(self.variables)
        for vid in constr.expr.terms:
            if not 0 <= vid < n:
                raise KeyError(f"constraint {name!r} references undeclared variable {vid}")
        constr.name = name or constr.name or f"c{len(self.constraints)}"
        constr.family = family or constr.family
        self.constraints.append(constr)
        self._matrix = None
        return constr

    def add_row(
        self,
        terms: Mapping[int, float] | Iterable[tuple[int, float]],
        sense: Sense,
        rhs: float,
        name: str = "",
        family: str = "",
    ) -> Constraint:
        """Fast path for builders: terms keyed by variable id (duplicates summed)."""
        if isinstance(terms, Mapping):
            expr = LinearExpr(terms)
        else:
            acc: dict[int, float] = {}
            for vid, coef in terms:
                acc[vid] = acc.get(vid, 0.0) + coef
            expr = LinearExpr(acc)
        return self.add_constr(Constraint(expr, sense, float(rhs)), name=name, family=family)

    def set_objective(self, expr: LinearExpr | Variable) -> None:
        if isinstance(expr, Variable):
            expr = LinearExpr({expr.id: 1.0})
        for vid in expr.terms:
            if not 0 <= vid < len(self.variables):
                raise KeyError(f"objective references undeclared variable {vid}")
        self.objective = expr
        self._matrix = None

    def family_counts(self) -> Counter:
        return Counter(c.family for c in self.constraints)

    @property
    def num_integer(self) -> int:
        return sum(v.is_integer for v in self.variables)

    def matrix_form(self) -> MatrixForm:
        if self._matrix is not None:
            return self._matrix
        n = len(self.variables)
        m = len(self.constraints)
        indptr = np.zeros(m + 1, dtype=np.int64)
        cols: list[int] = []
        vals: list[float] = []
        row_lb = np.empty(m)
        row_ub = np.empty(m)
        for i, con in enumerate(self.constraints):
            cols.extend(con.expr.terms.keys())
            vals.extend(con.expr.terms.values())
            indptr[i + 1] = len(cols)
            if con.sense is Sense.LE:
                row_lb[i], row_ub[i] = -np.inf, con.rhs
            elif con.sense is Sense.GE:
                row_lb[i], row_ub[i] = con.rhs, np.inf
            else:
                row_lb[i] = row_ub[i] = con.rhs
        A = sp.csr_matrix(
            (np.asarray(vals, dtype=float), np.asarray(cols, dtype=np.int64), indptr), shape=(m, n)
        )
        c = np.zeros(n)
        for vid, coef in self.objective.terms.items():
            c[vid] = coef
        self._matrix = MatrixForm(
            c=c,
            c0=self.objective.constant,
            A=A,
            row_lb=row_lb,
            row_ub=row_ub,
            lb=np.array([v.lb for v in self.variables], dtype=float),
            ub=np.array([v.ub for v in self.variables], dtype=float),
            integer=np.array([v.is_integer for v in self.variables], dtype=bool),
        )
        return self._matrix

    def evaluate_objective(self, values: Sequence[float] | np.ndarray) -> float:
        return self.objective.value(values)

    def to_lp_text(self) -> str:
        return to_lp_text(self)


_LP_NAME_BAD = re.compile(r"[^A-Za-z0-9_.\[\]()#]")


def _lp_name(raw: str) -> str:
    s = _LP_NAME_BAD.sub("_", raw)
    if not s or s[0].isdigit() or s[0] in ".":
        s = "_" + s
    return s[:255]


def _lp_terms(expr: LinearExpr, names: list[str]) -> str:
    if not expr.terms:
        return "0 " + names[0] if names else "0"
    chunks = []
    for vid, coef in sorted(expr.terms.items()):
        sign = "-" if coef < 0 else "+"
        chunks.append(f"{sign} {abs(coef):.17g} {names[vid]}")
    text = " ".join(chunks)
    return text[2:] if text.startswith("+ ") else text


def to_lp_text(model: MilpModel) -> str:
    """Render the model in CPLEX LP format (readable by most MILP solvers)."""
    names = [_lp_name(v.name) for v in model.variables]
    seen: Counter = Counter()
    for i, nm in enumerate(names):
        seen[nm] += 1
        if seen[nm] > 1:
            names[i] = f"{nm}#{i}"
    lines = [f"\\ {model.name}", "Minimize"]
    obj = _lp_terms(model.objective, names)
    if model.objective.constant:
        obj += f" + {model.objective.constant:.17g} __const"
    lines.append(f" obj: {obj}")
    lines.append("Subject To")
    op = {Sense.LE: "<=", Sense.GE: ">=", Sense.EQ: "="}
    for i, con in enumerate(model.constraints):
        cname = _lp_name(con.name or f"c{i}")
        lines.append(f" {cname}#{i}: {_lp_terms(con.expr, names)} {op[con.sense]} {con.rhs:.17g}")
    lines.append("Bounds")
    for v, nm in zip(model.variables, names):
        if v.kind is VarKind.BINARY and v.lb == 0 and v.ub == 1:
            continue
        lo = "-inf" if math.isinf(v.lb) else f"{v.lb:.17g}"
        hi = "+inf" if math.isinf(v.ub) else f"{v.ub:.17g}"
        if v.lb == v.ub:
            lines.append(f" {nm} = {lo}")
        else:
            lines.append(f" {lo} <= {nm} <= {hi}")
    if model.objective.constant:
        lines.append(" __const = 1")
    generals = [nm for v, nm in zip(model.variables, names) if v.kind is VarKind.INTEGER]
    binaries = [nm for v, nm in zip(model.variables, names) if v.kind is VarKind.BINARY]
    if generals:
        lines.append("Generals")
        lines.extend(f" {nm}" for nm in generals)
    if binaries:
        lines.append("Binaries")
        lines.extend(f" {nm}" for nm in binaries)
    lines.append("End")
    return "\n".join(lines) + "\n"
