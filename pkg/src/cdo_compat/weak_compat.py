"""Weak compatibility as LP feasibility over the DPM polytope.

A quote set is weakly compatible when some valid DPM reprices every quoted
tranche exactly; that is a feasibility question for a linear system in the
matrix entries: pricing equalities, row sums, marginal means, tail
monotonicity, and non-negativity. The same polytope supports bid-ask
verification (pricing inequalities instead of equalities) and model-free
price bounds for non-quoted tranches (LP for up-front quotes, a linear
fractional program for running spreads).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import opt_backend
from .dpm_core import DPM, repair_structure
from .market_model import TrancheSpec, calibrate_hazard
from .opt_backend import (DegenerateDenominator, LinearProgram, SolveResult,
                          SolveStatus, SolverError)
from .tranche_valuation import (TrancheCoefficients, beta_coeffs,
                                coefficients_for, expected_npv, gamma_coeff,
                                lambda_coeffs)


class InvalidQuotes(ValueError):
    """Bid/ask quotes missing or crossed."""


class InfeasibleRegion(RuntimeError):
    """The DPM polytope for this snapshot is empty."""


class UnboundedRatio(RuntimeError):
    """The spread program's denominator can collapse on the feasible region."""


def _curve_or_calibrate(snapshot, curve):
    if curve is not None:
        return curve
    return calibrate_hazard(snapshot.index_spread, snapshot.schedule,
                            snapshot.discount, snapshot.portfolio.recovery)


def monotonicity_block(m, n):
    """Sparse rows for Theta_{i,j} <= Theta_{i+1,j}, i = 1..m-1, j = 1..n."""
    K = n + 1
    rows, cols, vals = [], [], []
    r = 0
    for i in range(m - 1):
        for j in range(1, n + 1):
            span = np.arange(j, n + 1)
            k = len(span)
            rows.append(np.full(2 * k, r))
            cols.append(np.concatenate([i * K + span, (i + 1) * K + span]))
            vals.append(np.concatenate([np.ones(k), -np.ones(k)]))
            r += 1
    if r == 0:
        return sp.csr_matrix((0, m * K)), np.zeros(0)
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(r, m * K)).tocsr()
    return A, np.zeros(r)


def pricing_row(coeffs, m, n):
    """Flattened lambda_i beta_j coefficient row for one tranche."""
    if len(coeffs.lam) != m or len(coeffs.beta) != n + 1:
        raise ValueError("coefficient dimensions disagree with the matrix shape")
    return np.outer(coeffs.lam, coeffs.beta).ravel()


def marginal_blocks(m, n, marginal_means):
    """Row-sum and mean equality rows: sum_j q_ij = 1, sum_j j q_ij = mean_i."""
    K = n + 1
    rows = np.zeros((2 * m, m * K))
    rhs = np.empty(2 * m)
    j = np.arange(K, dtype=float)
    for i in range(m):
        rows[i, i * K:(i + 1) * K] = 1.0
        rhs[i] = 1.0
        rows[m + i, i * K:(i + 1) * K] = j
        rhs[m + i] = marginal_means[i]
    return sp.csr_matrix(rows), rhs


@dataclass
class WeakFeasibilityProblem:
    """Assembled constraint blocks for one snapshot's DPM polytope."""

    A_eq: object
    b_eq: np.ndarray
    A_ub: object
    b_ub: np.ndarray
    m: int
    n: int
    n_tranches: int

    @classmethod
    def from_snapshot(cls, snapshot, curve, include_pricing=True, bid_ask=False):
        m, n = snapshot.schedule.m, snapshot.portfolio.n
        means = snapshot.portfolio.n * curve.grid(snapshot.schedule)
        A_marg, b_marg = marginal_blocks(m, n, means)
        A_mono, b_mono = monotonicity_block(m, n)

        eq_rows, eq_rhs = [A_marg], [b_marg]
        ub_rows, ub_rhs = [A_mono], [b_mono]
        if include_pricing:
            if bid_ask:
                if snapshot.bid is None or snapshot.ask is None:
                    raise InvalidQuotes("snapshot carries no bid/ask quotes")
                for l, tr in enumerate(snapshot.tranches):
                    _check_not_crossed(tr, snapshot.bid, snapshot.ask, l)
                    # seller value is non-negative at the bid, non-positive at the ask
                    cb = TrancheCoefficients.build(tr, snapshot.bid.upfront[l],
                                                  snapshot.bid.spread[l], snapshot)
                    ca = TrancheCoefficients.build(tr, snapshot.ask.upfront[l],
                                                  snapshot.ask.spread[l], snapshot)
                    ub_rows.append(sp.csr_matrix(-pricing_row(cb, m, n)[None, :]))
                    ub_rhs.append(np.array([-cb.gamma]))
                    ub_rows.append(sp.csr_matrix(pricing_row(ca, m, n)[None, :]))
                    ub_rhs.append(np.array([ca.gamma]))
            else:
                for coeffs in coefficients_for(snapshot):
                    eq_rows.append(sp.csr_matrix(pricing_row(coeffs, m, n)[None, :]))
                    eq_rhs.append(np.array([coeffs.gamma]))
        return cls(
            A_eq=sp.vstack(eq_rows, format="csr"),
            b_eq=np.concatenate(eq_rhs),
            A_ub=sp.vstack(ub_rows, format="csr"),
            b_ub=np.concatenate(ub_rhs),
            m=m, n=n, n_tranches=snapshot.n_tranches,
        )


def _check_not_crossed(tranche, bid, ask, l):
    if tranche.quote_kind == "upfront":
        if bid.upfront[l] > ask.upfront[l]:
            raise InvalidQuotes(f"crossed up-front quotes on tranche {l}")
    elif bid.spread[l] > ask.spread[l]:
        raise InvalidQuotes(f"crossed spread quotes on tranche {l}")


@dataclass
class WeakResult:
    """Verification outcome; ``dpm`` is the certificate when feasible."""

    status: SolveStatus
    dpm: DPM | None
    certificate: str

    @property
    def feasible(self):
        return self.status is SolveStatus.FEASIBLE


def _feasibility_solve(problem):
    """Zero-objective solve with equalities posed as paired slack inequalities."""
    A_rel, b_rel = opt_backend.relax_equalities(problem.A_eq, problem.b_eq)
    A_ub = sp.vstack([problem.A_ub, A_rel], format="csr")
    b_ub = np.concatenate([problem.b_ub, b_rel])
    return opt_backend.solve_lp(LinearProgram(A_ub=A_ub, b_ub=b_ub, bounds=(0, None)))


def _result_from_solve(snapshot, problem, res, bid_ask):
    if res.status is SolveStatus.INFEASIBLE:
        return WeakResult(SolveStatus.INFEASIBLE, None, res.message)
    if res.status is not SolveStatus.FEASIBLE:
        return WeakResult(SolveStatus.NUMERICAL_FAILURE, None, res.message)
    q = repair_structure(res.x.reshape(problem.m, problem.n + 1))
    try:
        dpm = DPM(q)
    except Exception as exc:  # pragma: no cover - solver contract violation
        return WeakResult(SolveStatus.NUMERICAL_FAILURE, None,
                          f"solution failed DPM validation: {exc}")
    worst = _worst_mispricing(snapshot, dpm, bid_ask)
    if worst > opt_backend.FEASIBILITY_TOL:
        return WeakResult(SolveStatus.NUMERICAL_FAILURE, None,
                          f"solution misprices a tranche by {worst:.3e}")
    return WeakResult(SolveStatus.FEASIBLE, dpm,
                      f"{res.message}; worst repricing error {worst:.3e}")


def _worst_mispricing(snapshot, dpm, bid_ask):
    worst = 0.0
    if bid_ask:
        for l, tr in enumerate(snapshot.tranches):
            cb = TrancheCoefficients.build(tr, snapshot.bid.upfront[l],
                                           snapshot.bid.spread[l], snapshot)
            ca = TrancheCoefficients.build(tr, snapshot.ask.upfront[l],
                                           snapshot.ask.spread[l], snapshot)
            worst = max(worst, -expected_npv(dpm, cb), expected_npv(dpm, ca))
        return worst
    for coeffs in coefficients_for(snapshot):
        worst = max(worst, abs(expected_npv(dpm, coeffs)))
    return worst


def verify_weak(snapshot, curve=None):
    """Decide weak compatibility; a Feasible result carries a certifying DPM."""
    curve = _curve_or_calibrate(snapshot, curve)
    problem = WeakFeasibilityProblem.from_snapshot(snapshot, curve)
    res = _feasibility_solve(problem)
    return _result_from_solve(snapshot, problem, res, bid_ask=False)


def verify_weak_bid_ask(snapshot, curve=None):
    """Weak compatibility with two-sided quotes: v(bid) >= 0 >= v(ask) per tranche."""
    curve = _curve_or_calibrate(snapshot, curve)
    problem = WeakFeasibilityProblem.from_snapshot(snapshot, curve, bid_ask=True)
    res = _feasibility_solve(problem)
    return _result_from_solve(snapshot, problem, res, bid_ask=True)


def _loss_timing_coeffs(sched, disc):
    """D(mid_i) - D(mid_{i+1}) 1_{i<m}: the default-leg part of lambda."""
    d_mid = disc(sched.midpoints)
    lc = d_mid[: sched.m].copy()
    lc[: sched.m - 1] -= d_mid[1: sched.m]
    return lc


def _raise_for_status(res):
    if isinstance(res, SolveResult):
        if res.status is SolveStatus.INFEASIBLE:
            raise InfeasibleRegion("the constrained DPM polytope is empty")
        if res.status is not SolveStatus.OPTIMAL:
            raise SolverError(f"bound solve failed: {res.status.value}: {res.message}")
    return res


def nonstandard_tranche_bounds(snapshot, attach, detach, quote_kind,
                               fixed_running=0.0, curve=None):
    """Arbitrage-free quote bounds for a tranche [attach, detach] over the polytope.

    Every quoted tranche constrains the polytope at its market price; the
    target tranche's implied quote is then minimized and maximized. Up-front
    quotes are affine in the matrix (two LPs); running spreads are a ratio of
    affine forms, optimized through the fractional-program backend.

    Returns (lower, upper) in decimal units. Raises InfeasibleRegion when the
    polytope is empty and UnboundedRatio when the spread denominator (the
    outstanding-notional annuity) can reach zero.
    """
    curve = _curve_or_calibrate(snapshot, curve)
    problem = WeakFeasibilityProblem.from_snapshot(snapshot, curve)
    sched, disc = snapshot.schedule, snapshot.discount
    target = TrancheSpec(attach, detach, "upfront", fixed_running) \
        if quote_kind == "upfront" else TrancheSpec(attach, detach, "spread")
    beta = beta_coeffs(target, snapshot.portfolio)

    if quote_kind == "upfront":
        lam = lambda_coeffs(fixed_running, sched, disc)
        c = np.outer(lam, beta).ravel()
        gamma0 = gamma_coeff(target, 0.0, fixed_running, sched, disc)
        out = []
        for sense in ("min", "max"):
            res = _raise_for_status(opt_backend.solve_lp(LinearProgram(
                c=c, A_ub=problem.A_ub, b_ub=problem.b_ub,
                A_eq=problem.A_eq, b_eq=problem.b_eq, bounds=(0, None), sense=sense)))
            out.append((res.objective - gamma0) / target.width)
        return tuple(out)

    if quote_kind != "spread":
        raise ValueError("quote_kind must be 'upfront' or 'spread'")
    lc = _loss_timing_coeffs(sched, disc)
    acc_disc = disc(np.asarray(sched.payment_dates)) * sched.accruals
    annuity = float(acc_disc.sum())
    c_num = np.outer(lc, beta).ravel()
    c_den = -np.outer(acc_disc, beta).ravel()
    d_den = target.width * annuity
    out = []
    for sense in ("min", "max"):
        try:
            res = _raise_for_status(opt_backend.solve_lfp(
                c_num, 0.0, c_den, d_den,
                A_ub=problem.A_ub, b_ub=problem.b_ub,
                A_eq=problem.A_eq, b_eq=problem.b_eq, sense=sense))
        except DegenerateDenominator as exc:
            raise UnboundedRatio(str(exc)) from exc
        out.append(res.objective)
    return tuple(out)
