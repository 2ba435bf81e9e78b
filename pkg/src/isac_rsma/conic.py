"""Small conic modelling layer: linear, second-order cone and PSD constraints.

Complex Hermitian matrix variables are stored as a real symmetric part and a
real skew-symmetric part; PSD constraints on them go through the real
embedding ``[[Re X, -Im X], [Im X, Re X]]``. Problems are handed to cvxpy and
solved by an interior-point conic solver (Clarabel by default).
"""
from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical-failure"
ITERATION_LIMIT = "iteration-limit"

DEFAULT_TOL = 1e-8


def default_tolerance() -> float:
    return float(os.environ.get("ISAC_SOLVER_TOL", DEFAULT_TOL))


class ConicError(ValueError):
    pass


@dataclass
class HermitianExpr:
    """Affine Hermitian matrix expression ``re + j*im``."""

    re: object
    im: object

    @property
    def n(self) -> int:
        return self.re.shape[0]

    def __add__(self, other: "HermitianExpr") -> "HermitianExpr":
        return HermitianExpr(self.re + other.re, self.im + other.im)

    def trace(self):
        return cp.trace(self.re)

    def inner(self, H):
        """tr(X H) for a constant Hermitian H (real-valued)."""
        H = np.asarray(H, dtype=complex)
        return self.inner_parts(H.real, H.imag)

    def inner_parts(self, h_re, h_im):
        """tr(X H) with H given by real and imaginary parts (constants or parameters)."""
        return cp.sum(cp.multiply(self.re, h_re)) + cp.sum(cp.multiply(self.im, h_im))

    def diag(self):
        return cp.diag(self.re)


def embed_hermitian(X) -> np.ndarray:
    """Real 2n x 2n embedding of a numeric Hermitian matrix."""
    X = np.asarray(X, dtype=complex)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise ConicError(f"expected a square matrix, got shape {X.shape}")
    return np.block([[X.real, -X.imag], [X.imag, X.real]])


def embed_hermitian_psd(X: HermitianExpr):
    """Constraint equivalent to X >= 0 for an affine Hermitian expression."""
    if X.re.shape != X.im.shape or X.re.shape[0] != X.re.shape[1]:
        raise ConicError("Hermitian expression must be square with matching parts")
    return cp.bmat([[X.re, -X.im], [X.im, X.re]]) >> 0


@dataclass
class ConicSolution:
    status: str
    objective_value: float = float("nan")
    values: dict = field(default_factory=dict)
    solver_status: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


_STATUS = {
    cp.OPTIMAL: OPTIMAL,
    cp.INFEASIBLE: INFEASIBLE,
    cp.INFEASIBLE_INACCURATE: INFEASIBLE,
    cp.UNBOUNDED: NUMERICAL_FAILURE,
    cp.UNBOUNDED_INACCURATE: NUMERICAL_FAILURE,
    cp.OPTIMAL_INACCURATE: NUMERICAL_FAILURE,
    cp.USER_LIMIT: ITERATION_LIMIT,
    cp.SOLVER_ERROR: NUMERICAL_FAILURE,
}


class ConicProblem:
    """Maximisation problem over named real scalars/vectors and Hermitian matrices."""

    KINDS = ("eq", "ineq", "soc", "psd")

    def __init__(self):
        self.scalar_vars: dict[str, cp.Variable] = {}
        self.hermitian_vars: dict[str, tuple[cp.Variable, cp.Variable, HermitianExpr]] = {}
        self.constraints: dict[str, list] = {k: [] for k in self.KINDS}
        self.parameters: dict[str, cp.Parameter] = {}
        self.objective = None
        self._cvx_vars: set[int] = set()
        self._compiled: cp.Problem | None = None

    def scalar(self, name: str, shape=()) -> cp.Variable:
        self._check_new(name)
        v = cp.Variable(shape, name=name)
        self.scalar_vars[name] = v
        self._cvx_vars.add(v.id)
        return v

    def hermitian(self, name: str, n: int) -> HermitianExpr:
        self._check_new(name)
        re = cp.Variable((n, n), symmetric=True, name=f"{name}.re")
        m = n * (n - 1) // 2
        lo = cp.Variable(max(m, 1), name=f"{name}.im")
        # skew part from strictly-upper entries
        iu, ju = np.triu_indices(n, 1)
        S = np.zeros((n * n, max(m, 1)))
        for p, (i, j) in enumerate(zip(iu, ju)):
            S[i * n + j, p] = 1.0
            S[j * n + i, p] = -1.0
        im = cp.reshape(S @ lo, (n, n), order="C")
        X = HermitianExpr(re, im)
        self.hermitian_vars[name] = (re, lo, X)
        self._cvx_vars.update({re.id, lo.id})
        return X

    def parameter(self, name: str, shape=()) -> cp.Parameter:
        """Data slot whose value may change between solves without recompiling."""
        if name in self.parameters:
            raise ConicError(f"parameter {name!r} already declared")
        p = cp.Parameter(shape, name=name)
        self.parameters[name] = p
        return p

    def _check_new(self, name):
        if name in self.scalar_vars or name in self.hermitian_vars:
            raise ConicError(f"variable {name!r} already declared")

    def _add(self, kind, constraint):
        self.constraints[kind].append(constraint)
        self._compiled = None

    def _check_refs(self, expr):
        for v in expr.variables():
            if v.id not in self._cvx_vars:
                raise ConicError(f"expression references undeclared variable {v.name()}")

    def add_eq(self, lhs, rhs=0.0):
        self._check_refs(lhs - rhs)
        self._add("eq", lhs == rhs)

    def add_ineq(self, lhs, rhs):
        """lhs <= rhs."""
        self._check_refs(lhs - rhs)
        self._add("ineq", lhs <= rhs)

    def add_soc(self, t, x):
        """||x||_2 <= t."""
        self._check_refs(cp.hstack([cp.reshape(t, (1,), order="C"), x]))
        self._add("soc", cp.SOC(t, x))

    def add_psd(self, sym_expr):
        """Real symmetric affine matrix expression is PSD."""
        self._check_refs(sym_expr)
        self._add("psd", sym_expr >> 0)

    def add_hermitian_psd(self, X: HermitianExpr):
        self._check_refs(X.re)
        self._add("psd", embed_hermitian_psd(X))

    def maximize(self, expr):
        self._check_refs(expr)
        self.objective = expr
        self._compiled = None

    def to_cvxpy(self) -> cp.Problem:
        if self.objective is None:
            raise ConicError("objective not set")
        if self._compiled is None:
            cons = [c for k in self.KINDS for c in self.constraints[k]]
            self._compiled = cp.Problem(cp.Maximize(self.objective), cons)
        return self._compiled

    def dump(self, solver: str = "CLARABEL") -> str:
        """Text dump: variables, cone sizes and sparse (row, col, value) triplets."""
        prob = self.to_cvxpy()
        data, _, _ = prob.get_problem_data(solver)
        lines = ["# variables"]
        for name, v in self.scalar_vars.items():
            lines.append(f"scalar {name} shape={v.shape}")
        for name, (re, _, _) in self.hermitian_vars.items():
            lines.append(f"hermitian {name} n={re.shape[0]}")
        dims = data["dims"]
        lines.append("# cones")
        lines.append(f"zero {dims.zero}")
        lines.append(f"nonneg {dims.nonneg}")
        lines.append("soc " + " ".join(str(s) for s in dims.soc))
        lines.append("psd " + " ".join(str(s) for s in dims.psd))
        A = data["A"].tocoo()
        lines.append(f"# A {A.shape[0]} {A.shape[1]} nnz={A.nnz}")
        lines.extend(f"{i} {j} {v:.17g}" for i, j, v in zip(A.row, A.col, A.data))
        lines.append("# b")
        lines.extend(f"{i} {v:.17g}" for i, v in enumerate(data["b"]) if v != 0)
        lines.append("# c (minimise)")
        lines.extend(f"{i} {v:.17g}" for i, v in enumerate(data["c"]) if v != 0)
        return "\n".join(lines) + "\n"


def solve(problem: ConicProblem, tol: float | None = None, max_iter: int = 200,
          solver: str = "CLARABEL") -> ConicSolution:
    tol = default_tolerance() if tol is None else tol
    prob = problem.to_cvxpy()
    opts = {}
    if solver == "CLARABEL":
        opts = dict(tol_gap_abs=tol, tol_gap_rel=tol, tol_feas=tol, max_iter=max_iter)
    elif solver == "SCS":
        opts = dict(eps=tol, max_iters=max_iter * 100)
    try:
        with warnings.catch_warnings():
            # inaccurate solutions are reported through the status instead
            warnings.filterwarnings("ignore", message="Solution may be inaccurate")
            prob.solve(solver=solver, **opts)
    except cp.error.SolverError as exc:
        return ConicSolution(NUMERICAL_FAILURE, solver_status=str(exc))
    status = _STATUS.get(prob.status, NUMERICAL_FAILURE)
    if status != OPTIMAL:
        return ConicSolution(status, solver_status=str(prob.status))
    values = {}
    for name, v in problem.scalar_vars.items():
        values[name] = float(v.value) if v.shape == () else np.asarray(v.value, dtype=float)
    for name, (_, _, X) in problem.hermitian_vars.items():
        Z = np.asarray(X.re.value) + 1j * np.asarray(X.im.value)
        values[name] = 0.5 * (Z + Z.conj().T)
    return ConicSolution(OPTIMAL, float(prob.value), values, str(prob.status))
