"""Solver backends behind one narrow contract.

Every linear program, linear-fractional program, and relative-entropy
program in the package is solved through this module, so the modeling
code never names a solver. The LP engine is HiGHS via scipy; the
relative-entropy program is solved by dual ascent with the primal
recovered in closed form.

The environment variable ``CDO_COMPAT_SOLVER`` selects the LP method:
``highs`` (default, dual simplex), ``highs-ds``, or ``highs-ipm``.
Setting ``CDO_COMPAT_LP_DUMP`` to a directory path writes each LP in
CPLEX LP text format before solving (debugging aid).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog, minimize

# Centralized tolerances. Everything downstream quotes these.
FEASIBILITY_TOL = 1e-8     # max constraint violation accepted in a returned solution
EQUALITY_SLACK = 1e-9      # half-width used when equalities are posed as paired inequalities
KKT_TOL = 1e-8             # residual bound for the entropy solver
T_FLOOR = 1e-12            # Charnes-Cooper auxiliary variable lower acceptance
T_CEILING = 1e9            # Charnes-Cooper auxiliary variable upper bound

_METHODS = {"highs": "highs", "highs-ds": "highs-ds", "highs-ipm": "highs-ipm"}


class SolverError(RuntimeError):
    """Numerical failure inside a backend, distinct from model infeasibility."""


class DegenerateDenominator(RuntimeError):
    """The fractional program's denominator collapsed (t below T_FLOOR)."""


class SolveStatus(Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass
class LinearProgram:
    """min/max c'x subject to A_ub x <= b_ub, A_eq x = b_eq, bounds on x.

    ``c`` may be None for pure feasibility questions. ``bounds`` follows the
    scipy convention: a single (lo, hi) pair applied to every variable, or a
    sequence of pairs. Matrices may be dense or scipy.sparse.
    """

    c: np.ndarray | None = None
    A_ub: object | None = None
    b_ub: np.ndarray | None = None
    A_eq: object | None = None
    b_eq: np.ndarray | None = None
    bounds: object = (0, None)
    sense: str = "min"

    def n_vars(self):
        for a in (self.A_eq, self.A_ub):
            if a is not None:
                return a.shape[1]
        if self.c is not None:
            return len(self.c)
        raise ValueError("empty linear program")


@dataclass
class SolveResult:
    status: SolveStatus
    x: np.ndarray | None = None
    objective: float | None = None
    message: str = ""
    duality_gap: float | None = None
    extra: dict = field(default_factory=dict)


def lp_method():
    name = os.environ.get("CDO_COMPAT_SOLVER", "highs")
    if name not in _METHODS:
        raise SolverError(f"unknown solver {name!r}; choose one of {sorted(_METHODS)}")
    return _METHODS[name]


def dump_lp(lp, path):
    """Write ``lp`` in CPLEX LP text format (debugging aid, lossy for sparsity)."""
    c = np.zeros(lp.n_vars()) if lp.c is None else np.asarray(lp.c, float)
    sign = -1.0 if lp.sense == "max" else 1.0

    def row_terms(row):
        row = np.asarray(row).ravel()
        parts = []
        for j in np.nonzero(row)[0]:
            parts.append(f"{row[j]:+.17g} x{j}")
        return " ".join(parts) if parts else "0 x0"

    with open(path, "w") as fh:
        fh.write("\\ cdo-compat LP dump\nMinimize\n obj: ")
        fh.write(row_terms(sign * c))
        fh.write("\nSubject To\n")
        k = 0
        if lp.A_ub is not None:
            a = sp.csr_matrix(lp.A_ub) if sp.issparse(lp.A_ub) else np.atleast_2d(lp.A_ub)
            for i in range(a.shape[0]):
                row = a.getrow(i).toarray() if sp.issparse(a) else a[i]
                fh.write(f" c{k}: {row_terms(row)} <= {lp.b_ub[i]:.17g}\n")
                k += 1
        if lp.A_eq is not None:
            a = sp.csr_matrix(lp.A_eq) if sp.issparse(lp.A_eq) else np.atleast_2d(lp.A_eq)
            for i in range(a.shape[0]):
                row = a.getrow(i).toarray() if sp.issparse(a) else a[i]
                fh.write(f" c{k}: {row_terms(row)} = {lp.b_eq[i]:.17g}\n")
                k += 1
        fh.write("Bounds\n")
        bounds = lp.bounds
        if isinstance(bounds, tuple):
            bounds = [bounds] * lp.n_vars()
        for j, (lo, hi) in enumerate(bounds):
            lo_s = "-inf" if lo is None else f"{lo:.17g}"
            hi_s = "+inf" if hi is None else f"{hi:.17g}"
            fh.write(f" {lo_s} <= x{j} <= {hi_s}\n")
        fh.write("End\n")


_DUMP_COUNTER = [0]


def _maybe_dump(lp):
    dump_dir = os.environ.get("CDO_COMPAT_LP_DUMP")
    if dump_dir:
        _DUMP_COUNTER[0] += 1
        dump_lp(lp, os.path.join(dump_dir, f"lp_{_DUMP_COUNTER[0]:04d}.lp"))


def _duality_gap(res, lp, c):
    """Gap from HiGHS marginals. Only meaningful when no finite nonzero bound binds."""
    try:
        dual = 0.0
        if lp.b_eq is not None and len(lp.b_eq):
            dual += float(np.dot(lp.b_eq, res.eqlin.marginals))
        if lp.b_ub is not None and len(lp.b_ub):
            dual += float(np.dot(lp.b_ub, res.ineqlin.marginals))
        return abs(float(np.dot(c, res.x)) - dual)
    except (AttributeError, TypeError):
        return None


def solve_lp(lp):
    """Solve a LinearProgram; statuses follow SolveStatus semantics.

    Feasibility problems (c is None) report FEASIBLE on success, optimization
    problems report OPTIMAL. Deterministic for fixed inputs and method.
    """
    _maybe_dump(lp)
    n = lp.n_vars()
    c = np.zeros(n) if lp.c is None else np.asarray(lp.c, float)
    sign = -1.0 if lp.sense == "max" else 1.0
    res = linprog(
        sign * c,
        A_ub=lp.A_ub, b_ub=lp.b_ub,
        A_eq=lp.A_eq, b_eq=lp.b_eq,
        bounds=lp.bounds, method=lp_method(),
    )
    if res.status == 0:
        status = SolveStatus.FEASIBLE if lp.c is None else SolveStatus.OPTIMAL
        gap = None if lp.c is None else _duality_gap(res, lp, sign * c)
        return SolveResult(status, np.asarray(res.x), float(sign * res.fun),
                           res.message, gap)
    if res.status == 2:
        return SolveResult(SolveStatus.INFEASIBLE, message=res.message)
    if res.status == 3:
        return SolveResult(SolveStatus.UNBOUNDED, message=res.message)
    return SolveResult(SolveStatus.NUMERICAL_FAILURE, message=res.message)


def relax_equalities(A_eq, b_eq, slack=EQUALITY_SLACK):
    """Pose A_eq x = b_eq as paired inequalities with a small two-sided slack.

    Feasibility solves use this to sidestep degenerate-basis failures; the
    slack is far below every acceptance tolerance downstream.
    """
    A = sp.csr_matrix(A_eq)
    b = np.asarray(b_eq, float)
    A_ub = sp.vstack([A, -A], format="csr")
    b_ub = np.concatenate([b + slack, -(b - slack)])
    return A_ub, b_ub


def solve_lfp(c_num, d_num, c_den, d_den, A_ub=None, b_ub=None,
              A_eq=None, b_eq=None, sense="max"):
    """Optimize (c_num'x + d_num) / (c_den'x + d_den) over x >= 0.

    Constraints are A_ub x <= b_ub and A_eq x = b_eq. The denominator must be
    positive on the feasible region; solved by the Charnes-Cooper substitution
    y = t x, t = 1 / (c_den'x + d_den), which linearizes the ratio. Every
    constraint is homogenized through t, and the denominator normalization
    becomes the extra equality c_den'y + d_den t = 1.

    Raises DegenerateDenominator if the recovered t is at or below T_FLOOR.
    """
    c_num = np.asarray(c_num, float)
    c_den = np.asarray(c_den, float)
    n = len(c_num)

    eq_blocks, eq_rhs = [], []
    if A_eq is not None:
        A = sp.csr_matrix(A_eq)
        eq_blocks.append(sp.hstack([A, sp.csr_matrix(-np.asarray(b_eq, float)[:, None])]))
        eq_rhs.append(np.zeros(A.shape[0]))
    eq_blocks.append(sp.csr_matrix(np.concatenate([c_den, [d_den]])[None, :]))
    eq_rhs.append(np.array([1.0]))
    A_eq_t = sp.vstack(eq_blocks, format="csr")
    b_eq_t = np.concatenate(eq_rhs)

    A_ub_t = b_ub_t = None
    if A_ub is not None:
        A = sp.csr_matrix(A_ub)
        A_ub_t = sp.hstack([A, sp.csr_matrix(-np.asarray(b_ub, float)[:, None])], format="csr")
        b_ub_t = np.zeros(A.shape[0])

    lp = LinearProgram(
        c=np.concatenate([c_num, [d_num]]),
        A_ub=A_ub_t, b_ub=b_ub_t, A_eq=A_eq_t, b_eq=b_eq_t,
        bounds=[(0, None)] * n + [(0, T_CEILING)],
        sense=sense,
    )
    res = solve_lp(lp)
    if res.status is not SolveStatus.OPTIMAL:
        return res
    t = res.x[-1]
    if t <= T_FLOOR:
        raise DegenerateDenominator(f"Charnes-Cooper t = {t:.3e} at optimum")
    x = res.x[:-1] / t
    ratio = (c_num @ x + d_num) / (c_den @ x + d_den)
    return SolveResult(SolveStatus.OPTIMAL, x, float(ratio), res.message,
                       extra={"t": float(t), "lp_objective": res.objective})


def _entropy_dual(v, logref, A_eq, b_eq, A_ub, b_ub, n_eq):
    nu = v[:n_eq]
    expo = -1.0 + logref - (A_eq.T @ nu)
    if A_ub is not None:
        expo = expo - (A_ub.T @ v[n_eq:])
    q = np.exp(np.minimum(expo, 700.0))
    f = q.sum() + float(nu @ b_eq)
    g_eq = b_eq - A_eq @ q
    if A_ub is None:
        return f, g_eq, q
    lam = v[n_eq:]
    f += float(lam @ b_ub)
    g_ub = b_ub - A_ub @ q
    return f, np.concatenate([g_eq, g_ub]), q


def solve_relative_entropy(reference, A_eq, b_eq, A_ub=None, b_ub=None,
                           warm_start=None, max_iter=20000):
    """min sum_k q_k log(q_k / reference_k) s.t. A_eq q = b_eq, A_ub q <= b_ub, q >= 0.

    The reference weights must be strictly positive (callers regularize zeros
    before passing them in). Solved in the dual: stationarity gives
    q = ref * exp(-1 - A_eq'nu - A_ub'lam) with lam >= 0, and the multipliers
    come from a bound-constrained quasi-Newton maximization whose gradient is
    the primal constraint residual, followed by a Newton polish on the
    active-set KKT system (the quasi-Newton line search can stall a couple of
    orders above KKT_TOL; one or two second-order steps close the gap). A
    returned OPTIMAL solution has every residual below KKT_TOL; feasibility
    is re-checked by LP when the dual fails to close, so infeasible
    constraint sets are reported as INFEASIBLE rather than as numerical
    failure.
    """
    reference = np.asarray(reference, float).ravel()
    if np.any(reference <= 0.0):
        raise ValueError("reference weights must be strictly positive")
    logref = np.log(reference)
    A_eq = sp.csr_matrix(A_eq)
    b_eq = np.asarray(b_eq, float)
    n_eq = A_eq.shape[0]
    n_ub = 0
    if A_ub is not None:
        A_ub = sp.csr_matrix(A_ub)
        b_ub = np.asarray(b_ub, float)
        n_ub = A_ub.shape[0]

    def fun(v):
        f, g, _ = _entropy_dual(v, logref, A_eq, b_eq, A_ub, b_ub, n_eq)
        return f, g

    def dual_state(v):
        _, _, q = _entropy_dual(v, logref, A_eq, b_eq, A_ub, b_ub, n_eq)
        eq_res = A_eq @ q - b_eq
        if n_ub:
            slack = b_ub - A_ub @ q
            kkt = max(float(np.max(np.abs(eq_res))),
                      max(0.0, float(np.max(-slack))),
                      float(np.max(np.abs(v[n_eq:] * slack))))
        else:
            slack = np.zeros(0)
            kkt = float(np.max(np.abs(eq_res)))
        return q, eq_res, slack, kkt

    v0 = np.zeros(n_eq + n_ub) if warm_start is None else np.asarray(warm_start, float)
    dual_bounds = [(None, None)] * n_eq + [(0, None)] * n_ub
    best = None
    for attempt, start in enumerate((v0, np.zeros(n_eq + n_ub))):
        res = minimize(fun, start, jac=True, method="L-BFGS-B",
                       bounds=dual_bounds,
                       options={"maxiter": max_iter, "maxfun": 2 * max_iter,
                                "ftol": 1e-16, "gtol": 1e-11})
        _, _, _, kkt = dual_state(res.x)
        if best is None or kkt < best[0]:
            best = (kkt, res.x)
        if kkt < KKT_TOL:
            break
        if attempt == 0 and warm_start is None:
            break  # the second start is identical, skip it

    kkt, v = best
    if kkt >= KKT_TOL:
        v, kkt = _newton_polish(v, dual_state, A_eq, A_ub, n_eq, n_ub)
    q, _, _, kkt = dual_state(v)
    if kkt < KKT_TOL:
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(q > 0.0, q * (np.log(np.maximum(q, 1e-300)) - logref), 0.0)
        return SolveResult(SolveStatus.OPTIMAL, q, float(terms.sum()),
                           f"dual ascent converged, kkt {kkt:.2e}",
                           extra={"kkt": kkt, "duals": v})

    # Dual did not close; decide between infeasible constraints and failure.
    feas = solve_lp(LinearProgram(A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                                  bounds=(0, None)))
    if feas.status is SolveStatus.INFEASIBLE:
        return SolveResult(SolveStatus.INFEASIBLE,
                           message="constraint set infeasible (LP certificate)")
    return SolveResult(SolveStatus.NUMERICAL_FAILURE, q,
                       message=f"dual ascent stalled, kkt {kkt:.2e}",
                       extra={"kkt": kkt})


def _newton_polish(v, dual_state, A_eq, A_ub, n_eq, n_ub, max_steps=40):
    """Second-order cleanup of nearly converged entropy duals.

    Newton steps on the KKT system restricted to the equalities plus the
    inequality rows that are active (positive multiplier or violated slack).
    The Hessian is A diag(q) A' on that row set; steps are damped by halving
    until the KKT residual drops, and multipliers are clipped at zero.
    """
    q, eq_res, slack, kkt = dual_state(v)
    for _ in range(max_steps):
        if kkt < KKT_TOL:
            break
        if n_ub:
            active = np.flatnonzero((v[n_eq:] > 1e-14) | (slack < -1e-12))
            A_act = sp.vstack([A_eq, A_ub[active]], format="csr")
            resid = np.concatenate([eq_res, -slack[active]])
        else:
            active = np.zeros(0, dtype=int)
            A_act = A_eq
            resid = eq_res
        h = (A_act.multiply(q[None, :]) @ A_act.T).toarray()
        h[np.diag_indices_from(h)] += 1e-14 * max(1.0, float(h.diagonal().max()))
        try:
            step = np.linalg.solve(h, resid)
        except np.linalg.LinAlgError:
            step, *_ = np.linalg.lstsq(h, resid, rcond=None)
        t = 1.0
        improved = False
        for _ in range(30):
            v_try = v.copy()
            v_try[:n_eq] += t * step[:n_eq]
            if n_ub:
                v_try[n_eq + active] += t * step[n_eq:]
                np.clip(v_try[n_eq:], 0.0, None, out=v_try[n_eq:])
            q2, eq2, sl2, kkt2 = dual_state(v_try)
            if kkt2 < kkt:
                v, q, eq_res, slack, kkt = v_try, q2, eq2, sl2, kkt2
                improved = True
                break
            t *= 0.5
        if not improved:
            break
    return v, kkt
