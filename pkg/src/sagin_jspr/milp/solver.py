"""LP relaxation via HiGHS dual simplex and a deterministic best-first
branch-and-bound on top of it."""

from __future__ import annotations

import heapq
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Protocol, Sequence

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

from .model import MatrixForm, MilpModel, Sense, Variable

log = logging.getLogger(__name__)

GAP_EPS = 1e-9


class Status(str, Enum):
    OPTIMAL = "optimal"
    GAP_REACHED = "gap_reached"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    LIMIT_HIT = "limit_hit"

    @property
    def has_solution(self) -> bool:
        return self in (Status.OPTIMAL, Status.GAP_REACHED)


class SolverError(RuntimeError):
    """The LP engine failed numerically; never papered over."""


@dataclass
class SolveParams:
    rel_gap: float = 0.05
    time_limit_s: float | None = None
    node_limit: int | None = None
    feasibility_tol: float = 1e-7
    integrality_tol: float = 1e-6

    def __post_init__(self):
        if self.rel_gap < 0:
            raise ValueError("rel_gap must be >= 0")


@dataclass
class Violation:
    kind: str  # "bound", "integrality" or "constraint"
    name: str
    residual: float

    def __str__(self) -> str:
        return f"{self.kind} {self.name}: residual {self.residual:.3g}"


@dataclass
class Solution:
    status: Status
    values: dict[int, float] | None
    objective: float
    best_bound: float
    gap: float
    wall_time_s: float
    nodes: int = 0
    backend: str = "bnb"
    violations: list[Violation] = field(default_factory=list)

    def __getitem__(self, var: Variable | int) -> float:
        if self.values is None:
            raise KeyError("solution carries no values")
        return self.values[var.id if isinstance(var, Variable) else var]

    def array(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        for k, v in (self.values or {}).items():
            out[k] = v
        return out


def relative_gap(objective: float, best_bound: float) -> float:
    if not math.isfinite(objective) or not math.isfinite(best_bound):
        return math.inf
    return max(0.0, (objective - best_bound) / max(abs(objective), GAP_EPS))


def _values_array(model: MilpModel, values) -> np.ndarray:
    n = len(model.variables)
    if isinstance(values, np.ndarray):
        if values.shape != (n,):
            raise KeyError(f"expected {n} values, got shape {values.shape}")
        return values.astype(float)
    out = np.empty(n)
    if isinstance(values, Mapping):
        for v in model.variables:
            key = v.id if v.id in values else v
            if key not in values:
                raise KeyError(f"missing value for variable {v.name!r}")
            out[v.id] = values[key]
        return out
    seq = list(values)
    if len(seq) != n:
        raise KeyError(f"expected {n} values, got {len(seq)}")
    return np.asarray(seq, dtype=float)


def validate_solution(model: MilpModel, values, tol: float = 1e-6, integrality_tol: float = 1e-6) -> list[Violation]:
    """Check bounds, integrality and every constraint.

    A row is violated when its residual exceeds ``tol * (1 + |rhs|)``; the
    reported residual is the raw amount.
    """
    x = _values_array(model, values)
    out: list[Violation] = []
    for v in model.variables:
        val = x[v.id]
        if val < v.lb - tol * (1 + abs(v.lb)):
            out.append(Violation("bound", v.name, v.lb - val))
        elif val > v.ub + tol * (1 + abs(v.ub)):
            out.append(Violation("bound", v.name, val - v.ub))
        if v.is_integer and abs(val - round(val)) > integrality_tol:
            out.append(Violation("integrality", v.name, abs(val - round(val))))
    mf = model.matrix_form()
    lhs = mf.A @ x if mf.A.shape[0] else np.zeros(0)
    for i, con in enumerate(model.constraints):
        if con.sense is Sense.LE:
            r = lhs[i] - con.rhs
        elif con.sense is Sense.GE:
            r = con.rhs - lhs[i]
        else:
            r = abs(lhs[i] - con.rhs)
        if r > tol * (1 + abs(con.rhs)):
            out.append(Violation("constraint", con.name, float(r)))
    return out


class LpEngine:
    """Re-solvable LP relaxation of one model; only column bounds change."""

    def __init__(self, model: MilpModel):
        self.model = model
        self.mf: MatrixForm = model.matrix_form()
        mf = self.mf
        A = mf.A
        eq = np.isfinite(mf.row_lb) & (mf.row_lb == mf.row_ub)
        up = np.isfinite(mf.row_ub) & ~eq
        lo = np.isfinite(mf.row_lb) & ~eq
        blocks, rhs = [], []
        if up.any():
            blocks.append(A[up])
            rhs.append(mf.row_ub[up])
        if lo.any():
            blocks.append(-A[lo])
            rhs.append(-mf.row_lb[lo])
        import scipy.sparse as sp

        self.A_ub = sp.vstack(blocks).tocsr() if blocks else None
        self.b_ub = np.concatenate(rhs) if rhs else None
        self.A_eq = A[eq] if eq.any() else None
        self.b_eq = mf.row_lb[eq] if eq.any() else None
        self.solves = 0

    def solve(self, lb: np.ndarray, ub: np.ndarray, time_limit: float | None = None):
        """Return (status, x, objective); status in {'optimal','infeasible','unbounded','limit'}."""
        if np.any(lb > ub):
            return "infeasible", None, math.inf
        mf = self.mf
        if len(mf.c) == 0:
            return "optimal", np.zeros(0), mf.c0
        options = {"presolve": True}
        if time_limit is not None:
            options["time_limit"] = max(time_limit, 1e-3)
        bounds = np.column_stack([np.where(np.isinf(lb), -np.inf, lb), np.where(np.isinf(ub), np.inf, ub)])
        self.solves += 1
        res = linprog(
            mf.c,
            A_ub=self.A_ub,
            b_ub=self.b_ub,
            A_eq=self.A_eq,
            b_eq=self.b_eq,
            bounds=bounds,
            method="highs-ds",
            options=options,
        )
        if res.status == 0:
            return "optimal", np.asarray(res.x, dtype=float), float(res.fun) + mf.c0
        if res.status == 2:
            return "infeasible", None, math.inf
        if res.status == 3:
            return "unbounded", None, -math.inf
        if res.status == 1:
            return "limit", None, math.nan
        raise SolverError(f"LP engine failure (status {res.status}): {res.message}")


def solve_lp(model: MilpModel, params: SolveParams | None = None) -> Solution:
    """Solve the continuous relaxation (integrality dropped)."""
    params = params or SolveParams()
    start = time.perf_counter()
    eng = LpEngine(model)
    status, x, obj = eng.solve(eng.mf.lb.copy(), eng.mf.ub.copy(), params.time_limit_s)
    wall = time.perf_counter() - start
    if status == "optimal":
        return Solution(Status.OPTIMAL, dict(enumerate(x.tolist())), obj, obj, 0.0, wall, backend="lp")
    st = {"infeasible": Status.INFEASIBLE, "unbounded": Status.UNBOUNDED, "limit": Status.LIMIT_HIT}[status]
    return Solution(st, None, math.nan, math.nan, math.inf, wall, backend="lp")


class Backend(Protocol):
    name: str

    def solve(self, model: MilpModel, params: SolveParams) -> Solution: ...


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    changes: tuple = field(compare=False)  # ((var, lo, hi), ...)
    depth: int = field(compare=False, default=0)


class BranchAndBound:
    """Best-first branch and bound, most-fractional branching (ties: lowest id).

    Incumbents are polished by fixing the integer columns at their rounded
    values and re-solving the LP for the continuous ones.
    """

    name = "bnb"

    def __init__(self, dive: bool = True):
        self.dive = dive

    def solve(self, model: MilpModel, params: SolveParams) -> Solution:
        start = time.perf_counter()
        eng = LpEngine(model)
        mf = eng.mf
        int_idx = np.flatnonzero(mf.integer)
        base_lb = mf.lb.copy()
        base_ub = mf.ub.copy()
        # integer bounds are integral
        base_lb[int_idx] = np.ceil(base_lb[int_idx] - params.integrality_tol)
        base_ub[int_idx] = np.floor(base_ub[int_idx] + params.integrality_tol)
        if len(int_idx) and np.any(~np.isfinite(base_ub[int_idx]) | ~np.isfinite(base_lb[int_idx])):
            raise ValueError("branch and bound requires every integer variable to be bounded")

        inc_x: np.ndarray | None = None
        inc_obj = math.inf
        nodes = 0

        def elapsed() -> float:
            return time.perf_counter() - start

        def remaining() -> float | None:
            if params.time_limit_s is None:
                return None
            return params.time_limit_s - elapsed()

        def prune_level() -> float:
            if not math.isfinite(inc_obj):
                return math.inf
            slack = max(params.rel_gap * abs(inc_obj), GAP_EPS * max(1.0, abs(inc_obj)))
            return inc_obj - slack

        def apply(changes) -> tuple[np.ndarray, np.ndarray]:
            lb = base_lb.copy()
            ub = base_ub.copy()
            for j, lo, hi in changes:
                lb[j] = max(lb[j], lo)
                ub[j] = min(ub[j], hi)
            return lb, ub

        def fractional(x: np.ndarray) -> np.ndarray:
            xi = x[int_idx]
            return np.abs(xi - np.round(xi))

        def try_incumbent(x: np.ndarray, lb: np.ndarray, ub: np.ndarray) -> None:
            nonlocal inc_x, inc_obj
            lb2, ub2 = lb.copy(), ub.copy()
            r = np.round(x[int_idx])
            lb2[int_idx] = r
            ub2[int_idx] = r
            if len(int_idx) == len(x):
                cand = r.astype(float)
                full = np.empty_like(x)
                full[int_idx] = cand
                cand_obj = float(mf.c @ full) + mf.c0
                cand_x = full
            else:
                st, xp, _ = eng.solve(lb2, ub2, remaining())
                if st != "optimal":
                    return
                xp = np.asarray(xp, dtype=float)
                xp[int_idx] = r
                cand_x = xp
                cand_obj = float(mf.c @ xp) + mf.c0
            if validate_solution(model, cand_x, tol=params.feasibility_tol * 10, integrality_tol=params.integrality_tol):
                log.debug("rounded candidate rejected by validator")
                return
            if cand_obj < inc_obj - GAP_EPS * max(1.0, abs(cand_obj)):
                inc_obj, inc_x = cand_obj, cand_x
                log.debug("incumbent %.6f after %d nodes", inc_obj, nodes)

        def pick_branch(x: np.ndarray) -> int | None:
            f = fractional(x)
            mask = f > params.integrality_tol
            if not mask.any():
                return None
            score = np.where(mask, np.minimum(f, 1.0 - f), -1.0)
            score = np.round(score, 9)
            return int(int_idx[int(np.argmax(score))])

        def dive(x: np.ndarray, lb: np.ndarray, ub: np.ndarray, budget: int = 60) -> None:
            """Depth-first rounding dive from a node for an early incumbent."""
            nonlocal nodes
            lb, ub = lb.copy(), ub.copy()
            for _ in range(budget):
                j = pick_branch(x)
                if j is None:
                    try_incumbent(x, lb, ub)
                    return
                # fix the least fractional entries first to keep the LP close
                f = fractional(x)
                cand = f > params.integrality_tol
                near = np.where(cand, np.minimum(f, 1 - f), np.inf)
                j = int(int_idx[int(np.argmin(near))])
                v = math.floor(x[j] + 0.5)
                if x[j] > 0 and v == 0:
                    v = 1  # rounding up activates resources; down rarely stays feasible
                lb[j] = ub[j] = v
                rem = remaining()
                if rem is not None and rem <= 0:
                    return
                st, xn, obj = eng.solve(lb, ub, rem)
                if st != "optimal" or obj >= prune_level():
                    return
                x = xn

        heap: list[_Node] = []
        seq = 0
        root_st, root_x, root_obj = eng.solve(base_lb, base_ub, remaining())
        nodes = 1
        if root_st == "infeasible":
            return self._finish(model, Status.INFEASIBLE, None, math.nan, math.nan, start, nodes)
        if root_st == "unbounded":
            return self._finish(model, Status.UNBOUNDED, None, -math.inf, -math.inf, start, nodes)
        if root_st == "limit":
            return self._finish(model, Status.LIMIT_HIT, None, math.nan, math.nan, start, nodes)

        global_bound = root_obj
        if pick_branch(root_x) is None:
            try_incumbent(root_x, base_lb, base_ub)
            if inc_x is None:
                # integral LP point failed polishing; fall through to branching on nothing
                return self._finish(model, Status.INFEASIBLE, None, math.nan, math.nan, start, nodes)
            return self._finish(model, Status.OPTIMAL, inc_x, inc_obj, min(root_obj, inc_obj), start, nodes)

        if self.dive:
            dive(root_x, base_lb, base_ub)
        heap.append(_Node(root_obj, seq, (), 0))
        # the root LP is re-used by the first pop instead of re-solving
        cached = {0: (root_x, root_obj)}
        limit_hit = False
        next_report = 10.0

        while heap:
            global_bound = heap[0].bound
            if elapsed() >= next_report:
                next_report += 10.0
                log.info("bnb %5d nodes  open %5d  bound %.4f  incumbent %.4f  gap %.4f",
                         nodes, len(heap), global_bound, inc_obj, relative_gap(inc_obj, global_bound))
            if inc_x is not None and relative_gap(inc_obj, global_bound) <= params.rel_gap:
                break
            rem = remaining()
            if (rem is not None and rem <= 0) or (params.node_limit is not None and nodes >= params.node_limit):
                limit_hit = True
                break
            node = heapq.heappop(heap)
            if node.bound >= prune_level():
                continue
            lb, ub = apply(node.changes)
            if node.seq in cached:
                x, obj = cached.pop(node.seq)
            else:
                st, x, obj = eng.solve(lb, ub, rem)
                nodes += 1
                if st == "limit":
                    heapq.heappush(heap, node)
                    limit_hit = True
                    break
                if st == "unbounded":
                    return self._finish(model, Status.UNBOUNDED, None, -math.inf, -math.inf, start, nodes)
                if st != "optimal":
                    continue
            if obj >= prune_level():
                continue
            j = pick_branch(x)
            if j is None:
                try_incumbent(x, lb, ub)
                continue
            if self.dive and nodes % 50 == 0:
                dive(x, lb, ub, budget=30)
            fl = math.floor(x[j])
            for lo, hi in ((lb[j], float(fl)), (float(fl + 1), ub[j])):
                if lo > hi:
                    continue
                seq += 1
                heapq.heappush(heap, _Node(obj, seq, node.changes + ((j, lo, hi),), node.depth + 1))

        if heap:
            global_bound = min(heap[0].bound, inc_obj)
        else:
            global_bound = inc_obj
        if inc_x is None:
            if limit_hit:
                return self._finish(model, Status.LIMIT_HIT, None, math.nan, global_bound, start, nodes)
            return self._finish(model, Status.INFEASIBLE, None, math.nan, math.nan, start, nodes)
        gap = relative_gap(inc_obj, min(global_bound, inc_obj))
        if gap <= params.rel_gap and not (limit_hit and gap > params.rel_gap):
            status = Status.OPTIMAL if gap <= GAP_EPS or not heap else Status.GAP_REACHED
        else:
            status = Status.LIMIT_HIT
        return self._finish(model, status, inc_x, inc_obj, min(global_bound, inc_obj), start, nodes)

    def _finish(self, model, status, x, obj, bound, start, nodes) -> Solution:
        values = None if x is None else dict(enumerate(np.asarray(x, dtype=float).tolist()))
        if status is Status.OPTIMAL and x is not None and bound >= obj - GAP_EPS * max(1.0, abs(obj)):
            bound = obj
        gap = relative_gap(obj, bound) if x is not None else math.inf
        return Solution(status, values, obj, bound, gap, time.perf_counter() - start, nodes, self.name)


class HighsMilp:
    """Adapter for the HiGHS MILP engine shipped with SciPy."""

    name = "highs"

    def solve(self, model: MilpModel, params: SolveParams) -> Solution:
        start = time.perf_counter()
        mf = model.matrix_form()
        options = {"mip_rel_gap": params.rel_gap, "disp": False}
        if params.time_limit_s is not None:
            options["time_limit"] = params.time_limit_s
        if params.node_limit is not None:
            options["node_limit"] = params.node_limit
        cons = [LinearConstraint(mf.A, mf.row_lb, mf.row_ub)] if mf.A.shape[0] else []
        res = milp(
            mf.c,
            integrality=mf.integer.astype(int),
            bounds=Bounds(mf.lb, mf.ub),
            constraints=cons,
            options=options,
        )
        wall = time.perf_counter() - start
        if res.x is None:
            st = {2: Status.INFEASIBLE, 3: Status.UNBOUNDED}.get(res.status, Status.LIMIT_HIT)
            return Solution(st, None, math.nan, math.nan, math.inf, wall, backend=self.name)
        x = np.asarray(res.x, dtype=float)
        x[mf.integer] = np.round(x[mf.integer])
        obj = float(mf.c @ x) + mf.c0
        bound = getattr(res, "mip_dual_bound", None)
        bound = obj if bound is None or not math.isfinite(bound) else min(float(bound) + mf.c0, obj)
        gap = relative_gap(obj, bound)
        if res.status == 0:
            st = Status.OPTIMAL if gap <= GAP_EPS else Status.GAP_REACHED
        else:
            st = Status.LIMIT_HIT
        return Solution(st, dict(enumerate(x.tolist())), obj, bound, gap, wall, backend=self.name)


BACKENDS: dict[str, type] = {"bnb": BranchAndBound, "highs": HighsMilp}


def solve_milp(model: MilpModel, params: SolveParams | None = None, backend: Backend | str | None = None) -> Solution:
    """Solve a MILP; every returned incumbent is re-checked by the validator."""
    params = params or SolveParams()
    if backend is None:
        backend = BranchAndBound()
    elif isinstance(backend, str):
        backend = BACKENDS[backend]()
    sol = backend.solve(model, params)
    if sol.values is not None:
        sol.violations = validate_solution(
            model, sol.values, tol=params.feasibility_tol * 10, integrality_tol=params.integrality_tol
        )
        if sol.violations:
            log.warning("%s returned %d violations, first: %s", backend.name, len(sol.violations), sol.violations[0])
    return sol
