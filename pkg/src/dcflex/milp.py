"""Backend-neutral MILP container, piecewise linearisation and solver backends.

A :class:`ModelInstance` collects variables, linear constraints, piecewise
groups and a linear objective.  Backends translate it into whatever their engine
needs; the bundled :class:`HighsBackend` goes through ``scipy.optimize.milp``.
"""

from __future__ import annotations

import enum
import io
import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

import numpy as np
from scipy import optimize, sparse

logger = logging.getLogger(__name__)

INF = math.inf


class ModelError(ValueError):
    """Raised for malformed models (unknown variables, bad breakpoints, ...)."""


# ---------------------------------------------------------------------------
# Expressions
# ---------------------------------------------------------------------------


class _ExprMixin:
    def _as_expr(self) -> "LinExpr":
        raise NotImplementedError

    def __add__(self, other):
        out = self._as_expr().copy()
        out.iadd(other)
        return out

    __radd__ = __add__

    def __sub__(self, other):
        out = self._as_expr().copy()
        out.iadd(other, -1.0)
        return out

    def __rsub__(self, other):
        out = self._as_expr() * -1.0
        out.iadd(other)
        return out

    def __mul__(self, k):
        if not isinstance(k, (int, float, np.floating, np.integer)):
            raise TypeError("only scalar multiplication keeps expressions linear")
        e = self._as_expr()
        k = float(k)
        return LinExpr({i: c * k for i, c in e.terms.items()}, e.const * k)

    __rmul__ = __mul__

    def __truediv__(self, k):
        return self * (1.0 / float(k))

    def __neg__(self):
        return self * -1.0

    def __le__(self, other):
        return Constraint.build(self, "<=", other)

    def __ge__(self, other):
        return Constraint.build(self, ">=", other)

    def __eq__(self, other):  # type: ignore[override]
        return Constraint.build(self, "==", other)


class Var(_ExprMixin):
    """Handle to a model variable.  Only the index matters to the model."""

    __slots__ = ("index", "name")

    def __init__(self, index: int, name: str):
        self.index = index
        self.name = name

    def _as_expr(self) -> "LinExpr":
        return LinExpr({self.index: 1.0})

    def __hash__(self):
        return hash(("var", self.index))

    def __repr__(self):
        return f"Var({self.name})"


class LinExpr(_ExprMixin):
    """Sparse affine expression ``sum(coef * var) + const``."""

    __slots__ = ("terms", "const")
    __hash__ = None  # type: ignore[assignment]

    def __init__(self, terms: dict[int, float] | None = None, const: float = 0.0):
        self.terms = dict(terms) if terms else {}
        self.const = float(const)

    def _as_expr(self) -> "LinExpr":
        return self

    def copy(self) -> "LinExpr":
        return LinExpr(self.terms, self.const)

    def iadd(self, other, scale: float = 1.0) -> "LinExpr":
        """In-place ``self += scale * other``; returns self."""
        if isinstance(other, Var):
            self.terms[other.index] = self.terms.get(other.index, 0.0) + scale
        elif isinstance(other, LinExpr):
            for i, c in other.terms.items():
                self.terms[i] = self.terms.get(i, 0.0) + scale * c
            self.const += scale * other.const
        elif isinstance(other, (int, float, np.floating, np.integer)):
            self.const += scale * float(other)
        else:
            raise TypeError(f"cannot add {type(other).__name__} to a linear expression")
        return self

    def value(self, x: np.ndarray) -> float:
        return self.const + sum(c * x[i] for i, c in self.terms.items())

    def __repr__(self):
        parts = [f"{c:+g}*x{i}" for i, c in sorted(self.terms.items())]
        return f"LinExpr({' '.join(parts)} {self.const:+g})"


def lin_sum(items: Iterable) -> LinExpr:
    """Sum expressions without the quadratic cost of chained ``+``."""
    out = LinExpr()
    for it in items:
        out.iadd(it)
    return out


def as_expr(x) -> LinExpr:
    if isinstance(x, (Var, LinExpr)):
        return x._as_expr()
    return LinExpr(const=float(x))


@dataclass
class Constraint:
    terms: dict[int, float]
    sense: str
    rhs: float
    name: str = ""

    @classmethod
    def build(cls, lhs, sense: str, rhs) -> "Constraint":
        e = as_expr(lhs).copy()
        e.iadd(rhs, -1.0)
        terms = {i: c for i, c in e.terms.items() if c != 0.0}
        return cls(terms, sense, -e.const)

    def __bool__(self):
        # Guards against `if x == y:` silently treating a Constraint as truthy.
        raise TypeError("Constraint has no truth value; pass it to ModelInstance.add")


# ---------------------------------------------------------------------------
# Piecewise curves
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PiecewiseCurve:
    """Breakpoints sampling ``p(u) = p_idle + (p_max - p_idle) * u**exponent``."""

    u: tuple[float, ...]
    p: tuple[float, ...]
    max_abs_error: float

    @property
    def n_segments(self) -> int:
        return len(self.u) - 1

    def __call__(self, x):
        return np.interp(x, self.u, self.p)


def power_law(u, p_idle: float, p_max: float, exponent: float):
    u = np.asarray(u, dtype=float)
    return p_idle + (p_max - p_idle) * np.power(np.clip(u, 0.0, None), exponent)


SPACINGS = ("equal-error", "uniform")


def _chord_error(a: float, b: float, k: float) -> float:
    """Largest gap between the chord of ``u**k`` on [a, b] and the curve (k > 1)."""
    if b <= a:
        return 0.0
    slope = (b**k - a**k) / (b - a)
    x = min(max((slope / k) ** (1.0 / (k - 1.0)), a), b)
    return a**k + slope * (x - a) - x**k


def _equal_error_breaks(n: int, u_max: float, k: float) -> np.ndarray:
    """Breakpoints giving every segment the same chord error (minimax placement)."""

    def cover(e: float) -> list[float]:
        # greedy: stretch each segment until its error reaches e
        pts = [0.0]
        while pts[-1] < u_max and len(pts) <= n + 1:
            a = pts[-1]
            if _chord_error(a, u_max, k) <= e:
                pts.append(u_max)
                break
            lo, hi = a, u_max
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if _chord_error(a, mid, k) <= e:
                    lo = mid
                else:
                    hi = mid
            pts.append(lo)
        return pts

    lo, hi = 0.0, _chord_error(0.0, u_max, k)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if len(cover(mid)) - 1 <= n and cover(mid)[-1] >= u_max:
            hi = mid
        else:
            lo = mid
    pts = cover(hi)
    # pad if fewer pieces came out (only at tiny tolerances)
    while len(pts) - 1 < n:
        i = int(np.argmax(np.diff(pts)))
        pts.insert(i + 1, 0.5 * (pts[i] + pts[i + 1]))
    pts[-1] = u_max
    return np.array(pts)


def linearize_power_curve(params, n_segments: int = 16, spacing: str | None = None,
                          n_samples: int = 20001) -> PiecewiseCurve:
    """Chord approximation of the server power curve on ``[0, u_max]``.

    Breakpoints lie on the curve, so for the convex power law every chord
    over-estimates.  ``spacing`` is ``"uniform"`` (equal steps in u) or
    ``"equal-error"``, which crowds breakpoints near u = 0 where the curvature
    of ``u**k`` blows up.  ``max_abs_error`` is the larger of the per-segment
    analytic maximum and a dense-sampling check.
    """
    if n_segments < 1:
        raise ValueError("n_segments must be >= 1")
    spacing = spacing or getattr(params, "segment_spacing", "uniform")
    k, span = params.exponent, params.p_max_kw - params.p_idle_kw
    if spacing == "uniform":
        u = np.linspace(0.0, params.u_max, n_segments + 1)
    elif spacing == "equal-error":
        u = _equal_error_breaks(n_segments, params.u_max, k)
    else:
        raise ValueError(f"unknown spacing {spacing!r}; choose from {SPACINGS}")
    p = power_law(u, params.p_idle_kw, params.p_max_kw, k)
    # exact endpoints, no float drift
    p[0] = params.p_idle_kw
    if params.u_max == 1.0:
        p[-1] = params.p_max_kw
    grid = np.union1d(np.linspace(0.0, params.u_max, n_samples), u)
    sampled = np.max(np.abs(np.interp(grid, u, p) - power_law(grid, params.p_idle_kw, params.p_max_kw, k)))
    analytic = span * max(_chord_error(a, b, k) for a, b in zip(u[:-1], u[1:]))
    return PiecewiseCurve(tuple(float(v) for v in u), tuple(float(v) for v in p), float(max(sampled, analytic)))


@dataclass
class PiecewiseGroup:
    input: Var
    output: Var
    curve: PiecewiseCurve
    weights: list[Var]
    binaries: list[Var]


# ---------------------------------------------------------------------------
# Model container
# ---------------------------------------------------------------------------


class ModelInstance:
    """Variables, linear rows, piecewise groups and a minimisation objective."""

    def __init__(self, name: str = "model"):
        self.name = name
        self.names: list[str] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.is_int: list[bool] = []
        self.constraints: list[Constraint] = []
        self.piecewise: list[PiecewiseGroup] = []
        self.objective = LinExpr()
        self.components: dict[str, object] = {}

    @property
    def n_vars(self) -> int:
        return len(self.names)

    def add_var(self, name: str, lb: float = 0.0, ub: float = INF, binary: bool = False) -> Var:
        if binary:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        v = Var(len(self.names), name)
        self.names.append(name)
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.is_int.append(bool(binary))
        return v

    def add_vars(self, name: str, n: int, lb=0.0, ub=INF, binary: bool = False) -> list[Var]:
        lbs = np.broadcast_to(np.asarray(lb, dtype=float), (n,))
        ubs = np.broadcast_to(np.asarray(ub, dtype=float), (n,))
        return [self.add_var(f"{name}[{i}]", lbs[i], ubs[i], binary) for i in range(n)]

    def add(self, con: Constraint, name: str = "") -> Constraint:
        if not isinstance(con, Constraint):
            raise ModelError("expected a Constraint (did a comparison collapse to bool?)")
        for i in con.terms:
            if not 0 <= i < self.n_vars:
                raise ModelError(f"constraint references unknown variable index {i}")
        con.name = name
        self.constraints.append(con)
        return con

    def fix(self, v: Var, value: float) -> None:
        self.lb[v.index] = self.ub[v.index] = float(value)

    def minimize(self, expr) -> None:
        self.objective = as_expr(expr).copy()

    def register(self, key: str, handles) -> None:
        if key in self.components:
            raise ModelError(f"component {key!r} already added to this model")
        self.components[key] = handles

    # -- piecewise --------------------------------------------------------

    def add_piecewise(self, input_var: Var, curve: PiecewiseCurve, name: str = "pw") -> Var:
        """Constrain a new output variable to the piecewise image of ``input_var``.

        Uses the incremental (delta) encoding: fill fractions ``d_i`` in [0, 1]
        with binaries ``y_i`` enforcing ``d_{i+1} <= y_i <= d_i``.  That gives
        the same feasible set as an SOS2 convex combination.
        """
        u, p = curve.u, curve.p
        if len(u) < 2 or any(b <= a for a, b in zip(u, u[1:])):
            raise ModelError("piecewise breakpoints must be >= 2 and strictly increasing")
        lo, hi = self.lb[input_var.index], self.ub[input_var.index]
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ModelError(f"piecewise input {input_var.name} must be bounded")
        if lo < u[0] - 1e-12 or hi > u[-1] + 1e-12:
            raise ModelError(f"piecewise input {input_var.name} bounds exceed breakpoint range")
        n = len(u) - 1
        d = self.add_vars(f"{name}.fill", n, 0.0, 1.0)
        y = self.add_vars(f"{name}.seg", n - 1, binary=True)
        out = self.add_var(f"{name}.out", -INF, INF)
        self.add(input_var == u[0] + lin_sum(d[i] * (u[i + 1] - u[i]) for i in range(n)), f"{name}.x")
        self.add(out == p[0] + lin_sum(d[i] * (p[i + 1] - p[i]) for i in range(n)), f"{name}.y")
        for i in range(n - 1):
            self.add(d[i + 1] <= y[i], f"{name}.ord_hi[{i}]")
            self.add(y[i] <= d[i], f"{name}.ord_lo[{i}]")
        self.piecewise.append(PiecewiseGroup(input_var, out, curve, d, y))
        return out

    # -- export -----------------------------------------------------------

    def to_arrays(self):
        """Return (c, A csr, row_lb, row_ub, lb, ub, integrality, obj_const)."""
        n = self.n_vars
        c = np.zeros(n)
        for i, coef in self.objective.terms.items():
            c[i] += coef
        rows, cols, vals = [], [], []
        rlb = np.empty(len(self.constraints))
        rub = np.empty(len(self.constraints))
        for r, con in enumerate(self.constraints):
            for i, coef in con.terms.items():
                rows.append(r)
                cols.append(i)
                vals.append(coef)
            if con.sense == "<=":
                rlb[r], rub[r] = -INF, con.rhs
            elif con.sense == ">=":
                rlb[r], rub[r] = con.rhs, INF
            else:
                rlb[r] = rub[r] = con.rhs
        A = sparse.csr_matrix((vals, (rows, cols)), shape=(len(self.constraints), n))
        return (c, A, rlb, rub, np.array(self.lb), np.array(self.ub),
                np.array(self.is_int, dtype=int), self.objective.const)

    def write_lp(self, path_or_buf) -> None:
        """Dump in CPLEX-LP-like text.  Piecewise groups appear as their encoding."""
        buf = io.StringIO()
        nm = self.names

        def fmt(terms):
            if not terms:
                return "0 " + nm[0] if nm else "0"
            return " ".join(f"{c:+.12g} {nm[i]}" for i, c in sorted(terms.items()))

        buf.write(f"\\ model {self.name}\nMinimize\n obj: {fmt(self.objective.terms)}")
        if self.objective.const:
            buf.write(f" {self.objective.const:+.12g}")
        buf.write("\nSubject To\n")
        for r, con in enumerate(self.constraints):
            sense = "=" if con.sense == "==" else con.sense
            buf.write(f" {con.name or 'c'}#{r}: {fmt(con.terms)} {sense} {con.rhs:.12g}\n")
        buf.write("Bounds\n")
        for i, name in enumerate(nm):
            lo = "-inf" if self.lb[i] == -INF else f"{self.lb[i]:.12g}"
            hi = "+inf" if self.ub[i] == INF else f"{self.ub[i]:.12g}"
            buf.write(f" {lo} <= {name} <= {hi}\n")
        bins = [nm[i] for i in range(self.n_vars) if self.is_int[i]]
        if bins:
            buf.write("Binaries\n " + " ".join(bins) + "\n")
        buf.write("End\n")
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(buf.getvalue())
        else:
            with open(path_or_buf, "w") as fh:
                fh.write(buf.getvalue())


# ---------------------------------------------------------------------------
# Solving
# ---------------------------------------------------------------------------


class SolutionStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible-within-gap"
    INFEASIBLE = "infeasible"
    TIME_LIMIT = "time-limit"
    ERROR = "error"

    @property
    def has_solution(self) -> bool:
        return self in (SolutionStatus.OPTIMAL, SolutionStatus.FEASIBLE)


@dataclass
class SolveResult:
    status: SolutionStatus
    x: np.ndarray | None = None
    objective: float | None = None
    mip_gap: float | None = None
    runtime_s: float = 0.0
    message: str = ""
    backend: str = ""

    def value(self, v) -> float:
        if self.x is None:
            raise RuntimeError(f"no solution available (status {self.status.value})")
        if isinstance(v, Var):
            return float(self.x[v.index])
        return float(as_expr(v).value(self.x))

    def values(self, vs: Sequence) -> np.ndarray:
        return np.array([self.value(v) for v in vs])


class SolverBackend(Protocol):
    name: str
    mip_rel_gap: float
    feasibility_tol: float

    def solve(self, model: ModelInstance, time_limit: float | None = None) -> SolveResult: ...


@dataclass
class HighsBackend:
    """HiGHS through ``scipy.optimize.milp``.  Deterministic for fixed options."""

    mip_rel_gap: float = 1e-4
    feasibility_tol: float = 1e-7
    presolve: bool = True
    name: str = field(default="highs-scipy", init=False)

    def solve(self, model: ModelInstance, time_limit: float | None = None) -> SolveResult:
        t0 = time.perf_counter()
        c, A, rlb, rub, lb, ub, integrality, const = model.to_arrays()
        if np.any(lb > ub):
            bad = model.names[int(np.argmax(lb > ub))]
            return SolveResult(SolutionStatus.INFEASIBLE, message=f"contradictory bounds on {bad}",
                               backend=self.name, runtime_s=time.perf_counter() - t0)
        if model.n_vars == 0:
            if any((con.sense == "<=" and con.rhs < 0) or (con.sense == ">=" and con.rhs > 0)
                   or (con.sense == "==" and con.rhs != 0) for con in model.constraints):
                return SolveResult(SolutionStatus.INFEASIBLE, backend=self.name)
            return SolveResult(SolutionStatus.OPTIMAL, np.zeros(0), const, 0.0, backend=self.name)
        options = {"disp": False, "presolve": self.presolve, "mip_rel_gap": self.mip_rel_gap}
        if time_limit is not None:
            options["time_limit"] = float(time_limit)
        constraints = [optimize.LinearConstraint(A, rlb, rub)] if A.shape[0] else []
        try:
            res = optimize.milp(c, integrality=integrality, bounds=optimize.Bounds(lb, ub),
                                constraints=constraints, options=options)
        except Exception as exc:  # engine failure must not crash callers
            logger.exception("HiGHS failed")
            return SolveResult(SolutionStatus.ERROR, message=str(exc), backend=self.name,
                               runtime_s=time.perf_counter() - t0)
        elapsed = time.perf_counter() - t0
        gap = getattr(res, "mip_gap", None)
        if res.status == 0:
            status = SolutionStatus.OPTIMAL
            if gap is not None and gap > self.mip_rel_gap + 1e-12:
                status = SolutionStatus.FEASIBLE
        elif res.status == 1:
            status = SolutionStatus.TIME_LIMIT
        elif res.status == 2:
            status = SolutionStatus.INFEASIBLE
        else:
            status = SolutionStatus.ERROR
        x = None if res.x is None else np.asarray(res.x, dtype=float)
        obj = None if x is None else float(c @ x + const)
        return SolveResult(status, x, obj, gap, elapsed, str(res.message), self.name)


BACKENDS = {"highs": HighsBackend}


def default_backend(**kwargs) -> SolverBackend:
    """Backend named by ``DCFLEX_SOLVER`` (default ``highs``)."""
    key = os.environ.get("DCFLEX_SOLVER", "highs").lower()
    try:
        return BACKENDS[key](**kwargs)
    except KeyError:
        raise ValueError(f"unknown solver backend {key!r}; choose from {sorted(BACKENDS)}") from None


def solve(model: ModelInstance, backend: SolverBackend | None = None,
          time_limit: float | None = None) -> SolveResult:
    backend = backend or default_backend()
    result = backend.solve(model, time_limit)
    logger.debug("%s: %s in %.2fs (obj=%s)", model.name, result.status.value,
                 result.runtime_s, result.objective)
    return result
