"""Solver backends behind a single ``solve`` contract."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .model import ConicProgram, compile_program

DEFAULT_TOL = 1e-7
STATUSES = ("optimal", "infeasible", "inaccurate", "solver-failure")


@dataclass
class ConicSolution:
    status: str
    values: dict = field(default_factory=dict)
    objective: float = float("nan")
    iterations: int = 0
    secs: float = 0.0
    max_violation: float = float("nan")
    backend: str = ""

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "inaccurate")


class SolverError(RuntimeError):
    """A subproblem could not be solved; ``solution`` carries the status."""

    def __init__(self, message, solution: ConicSolution | None = None):
        super().__init__(message)
        self.solution = solution


def _cvxopt_solve(prog: ConicProgram, tol: float, max_iters: int):
    import cvxopt
    from cvxopt import solvers

    form = compile_program(prog)
    opts = {
        "show_progress": False,
        "abstol": tol,
        "reltol": tol,
        "feastol": tol,
        "maxiters": max_iters,
    }
    args = [cvxopt.matrix(form.c), cvxopt.matrix(form.G), cvxopt.matrix(form.h), form.dims]
    if form.A.shape[0]:
        args += [cvxopt.matrix(form.A), cvxopt.matrix(form.b)]
    try:
        # normal-equation KKT solves are much faster on tall constraint stacks
        res = solvers.conelp(*args, kktsolver="chol", options=opts)
    except (ArithmeticError, ValueError):
        try:
            res = solvers.conelp(*args, options=opts)
        except (ArithmeticError, ValueError) as exc:
            return "solver-failure", None, 0, str(exc)
    status = res["status"]
    x = np.array(res["x"]).ravel() if res["x"] is not None else None
    iters = int(res.get("iterations", 0))
    if status == "optimal":
        return "optimal", x, iters, ""
    if status == "primal infeasible":
        return "infeasible", None, iters, ""
    if status == "unknown" and x is not None:
        # stalled: accept as inaccurate if reasonably close, judged by residuals below
        return "inaccurate", x, iters, "stalled"
    return "solver-failure", None, iters, status


def _clarabel_solve(prog: ConicProgram, tol: float, max_iters: int):
    import clarabel
    from scipy import sparse

    form = compile_program(prog)
    # clarabel wants A x + s = b with s in cones; PSD cones in scaled upper-triangular form
    rows_A, rows_b, cones = [], [], []
    if form.A.shape[0]:
        rows_A.append(form.A)
        rows_b.append(form.b)
        cones.append(clarabel.ZeroConeT(form.A.shape[0]))
    off = 0
    l = form.dims["l"]
    if l:
        rows_A.append(form.G[:l])
        rows_b.append(form.h[:l])
        cones.append(clarabel.NonnegativeConeT(l))
    off = l
    for q in form.dims["q"]:
        rows_A.append(form.G[off:off + q])
        rows_b.append(form.h[off:off + q])
        cones.append(clarabel.SecondOrderConeT(q))
        off += q
    for n in form.dims["s"]:
        Gs = form.G[off:off + n * n]
        hs = form.h[off:off + n * n]
        iu = [(i, j) for j in range(n) for i in range(j + 1)]
        idx = [i + j * n for i, j in iu]
        scale = np.array([1.0 if i == j else np.sqrt(2.0) for i, j in iu])
        rows_A.append(Gs[idx] * scale[:, None])
        rows_b.append(hs[idx] * scale)
        cones.append(clarabel.PSDTriangleConeT(n))
        off += n * n
    A = sparse.csc_matrix(np.concatenate(rows_A))
    b = np.concatenate(rows_b)
    nx = form.c.size
    P = sparse.csc_matrix((nx, nx))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    settings.max_iter = max_iters
    solver = clarabel.DefaultSolver(P, form.c, A, b, cones, settings)
    res = solver.solve()
    name = str(res.status)
    x = np.array(res.x)
    if name == "Solved":
        return "optimal", x, int(res.iterations), ""
    if name == "AlmostSolved":
        return "inaccurate", x, int(res.iterations), ""
    if "PrimalInfeasible" in name:
        return "infeasible", None, int(res.iterations), ""
    if name in ("MaxIterations", "InsufficientProgress", "MaxTime") and np.all(np.isfinite(x)):
        return "inaccurate", x, int(res.iterations), name
    return "solver-failure", None, int(res.iterations), name


BACKENDS = {"cvxopt": _cvxopt_solve, "clarabel": _clarabel_solve}


def solve(prog: ConicProgram, tol: float = DEFAULT_TOL, backend: str = "cvxopt",
          max_iters: int = 200, accept_violation: float = 1e-5) -> ConicSolution:
    """Solve and report; never raises on solver trouble (see ``status``).

    Stalled solves are kept as ``inaccurate`` only if the worst constraint
    violation stays below ``accept_violation``.
    """
    if prog.objective is None:
        raise ValueError("program has no objective")
    try:
        fn = BACKENDS[backend]
    except KeyError:
        raise ValueError(f"unknown backend {backend!r}") from None
    t0 = time.perf_counter()
    status, x, iters, _ = fn(prog, tol, max_iters)
    secs = time.perf_counter() - t0
    if x is None:
        return ConicSolution(status, iterations=iters, secs=secs, backend=backend)
    values = prog.unpack(x)
    viol = max(prog.violations(values), default=0.0)
    if status == "inaccurate" and viol > accept_violation:
        status = "solver-failure"
    obj = float(np.real(prog.objective.value(prog.pack(values))))
    return ConicSolution(status, values, obj, iters, secs, viol, backend)
