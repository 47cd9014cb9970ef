"""Strong compatibility through discrete gamma distortions.

Strong compatibility restricts the perfect-fit question to conditionally
i.i.d. models. At resolution N those are parametrized by a generator law
p_{ik} on {0..N} per payment date; the default-count law it induces mixes
Beta distributions through the h coefficients, so tranche pricing stays
linear in p and the question is again LP feasibility. The module also
computes N-dependent price ranges (the iterative verification algorithm
walks them across a resolution sequence), builds the generator sampler and
the two-gamma-process distortion used for simulation, and bounds quotes
for pools with a nonstandard number of names.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.special import betaln, gammaln

from . import opt_backend
from .dpm_core import (DPM, MONOTONE_TOL, NEGATIVITY_CLAMP, ROW_SUM_TOL,
                       repair_structure, tail_sums)
from .market_model import PortfolioSpec, TrancheSpec
from .opt_backend import (DegenerateDenominator, LinearProgram, SolveStatus,
                          SolverError)
from .tranche_valuation import (DimensionMismatch, TrancheCoefficients,
                                beta_coeffs, coefficients_for, expected_npv,
                                gamma_coeff, lambda_coeffs)
from .weak_compat import (InfeasibleRegion, InvalidQuotes, UnboundedRatio,
                          _check_not_crossed, _curve_or_calibrate,
                          _feasibility_solve, _loss_timing_coeffs,
                          marginal_blocks, monotonicity_block)

DEFAULT_N_SEQUENCE = (50, 75, 100, 125, 150, 175, 200)
DEFAULT_EPS_SPREAD = 1e-6    # 0.01 bp, on decimals per year
DEFAULT_EPS_UPFRONT = 1e-5   # 0.001 per cent, on decimal fractions


class IterationLimit(RuntimeError):
    """The resolution sequence was exhausted before the algorithm could decide."""


class InvalidSolution(ValueError):
    """A generator law failed its structural constraints."""


@dataclass(frozen=True)
class HCoefficients:
    """Beta-mixture coefficients h_{jk}: P(j defaults of n | generator state k of N).

    Interior columns are Beta-binomial pmfs, C(n,j) B(k+j, N+n-k-j) / B(k, N-k);
    the k = 0 and k = N columns degenerate to indicators at j = 0 and j = n.
    """

    h: np.ndarray
    n: int
    N: int


@lru_cache(maxsize=64)
def h_matrix(n, N):
    """h coefficients at pool size n, resolution N, computed in log-gamma space."""
    if n < 1 or N < 2:
        raise ValueError("need n >= 1 and N >= 2")
    j = np.arange(n + 1)
    h = np.zeros((n + 1, N + 1))
    h[0, 0] = 1.0
    h[n, N] = 1.0
    log_choose = gammaln(n + 1) - gammaln(j + 1) - gammaln(n - j + 1)
    for k in range(1, N):
        h[:, k] = np.exp(log_choose + betaln(k + j, N + n - k - j) - betaln(k, N - k))
    col_dev = np.max(np.abs(h.sum(axis=0) - 1.0))
    mean_dev = np.max(np.abs(j @ h - n * np.arange(N + 1) / N))
    if col_dev > 1e-10 or mean_dev > 1e-9:
        raise SolverError(f"h identities failed: columns {col_dev:.2e}, means {mean_dev:.2e}")
    h.setflags(write=False)
    return HCoefficients(h, n, N)


@dataclass(frozen=True)
class StrongSolution:
    """Generator law p_{ik} = P(phi(F(T_i)) = k) at resolution N."""

    p: np.ndarray
    N: int

    def __post_init__(self):
        p = np.asarray(self.p, float)
        if p.ndim != 2 or p.shape[1] != self.N + 1:
            raise DimensionMismatch(f"matrix {p.shape} does not match N = {self.N}")
        _validate_generator_law(p)
        p = np.clip(p, 0.0, None)
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @property
    def m(self):
        return self.p.shape[0]

    def tail_sums(self):
        return tail_sums(self.p)


def _validate_generator_law(p):
    if np.max(np.abs(p.sum(axis=1) - 1.0)) > ROW_SUM_TOL:
        raise InvalidSolution("rows must sum to one")
    if p.min() < -NEGATIVITY_CLAMP:
        raise InvalidSolution(f"negative entry {p.min():.3e}")
    theta = tail_sums(p)
    if p.shape[0] > 1 and np.max(theta[:-1, 1:] - theta[1:, 1:]) > MONOTONE_TOL:
        raise InvalidSolution("tail sums must be non-decreasing in time")


def qij_from_p(solution, h):
    """Mix the generator law through h: q_{ij} = sum_k h_{jk} p_{ik}."""
    if h.N != solution.N or h.h.shape[1] != solution.p.shape[1]:
        raise DimensionMismatch(
            f"h resolution {h.N} vs solution resolution {solution.N}")
    return DPM(solution.p @ h.h.T)


@dataclass
class StrongFeasibilityProblem:
    """Constraint blocks of the resolution-N system for one snapshot."""

    A_eq: object
    b_eq: np.ndarray
    A_ub: object
    b_ub: np.ndarray
    m: int
    N: int
    h: HCoefficients

    @classmethod
    def from_snapshot(cls, snapshot, curve, N, priced=None, bid_ask=False):
        m, n = snapshot.schedule.m, snapshot.portfolio.n
        h = h_matrix(n, N)
        means = N * curve.grid(snapshot.schedule)
        A_marg, b_marg = marginal_blocks(m, N, means)
        A_mono, b_mono = monotonicity_block(m, N)
        eq_rows, eq_rhs = [A_marg], [b_marg]
        ub_rows, ub_rhs = [A_mono], [b_mono]
        if priced is None:
            priced = range(snapshot.n_tranches)
        if bid_ask:
            if snapshot.bid is None or snapshot.ask is None:
                raise InvalidQuotes("snapshot carries no bid/ask quotes")
            for l in priced:
                tr = snapshot.tranches[l]
                _check_not_crossed(tr, snapshot.bid, snapshot.ask, l)
                cb = TrancheCoefficients.build(tr, snapshot.bid.upfront[l],
                                              snapshot.bid.spread[l], snapshot)
                ca = TrancheCoefficients.build(tr, snapshot.ask.upfront[l],
                                              snapshot.ask.spread[l], snapshot)
                ub_rows.append(sp.csr_matrix(-_pricing_row_p(cb, h)[None, :]))
                ub_rhs.append(np.array([-cb.gamma]))
                ub_rows.append(sp.csr_matrix(_pricing_row_p(ca, h)[None, :]))
                ub_rhs.append(np.array([ca.gamma]))
        else:
            for l in priced:
                coeffs = TrancheCoefficients.from_snapshot(snapshot, l)
                eq_rows.append(sp.csr_matrix(_pricing_row_p(coeffs, h)[None, :]))
                eq_rhs.append(np.array([coeffs.gamma]))
        return cls(
            A_eq=sp.vstack(eq_rows, format="csr"),
            b_eq=np.concatenate(eq_rhs),
            A_ub=sp.vstack(ub_rows, format="csr"),
            b_ub=np.concatenate(ub_rhs),
            m=m, N=N, h=h,
        )


def _pricing_row_p(coeffs, h):
    """Pricing coefficients in generator variables: outer(lambda, h' beta)."""
    return np.outer(coeffs.lam, h.h.T @ coeffs.beta).ravel()


@dataclass
class StrongResult:
    status: SolveStatus
    solution: StrongSolution | None
    certificate: str

    @property
    def feasible(self):
        return self.status is SolveStatus.FEASIBLE


def verify_strong_at_N(snapshot, N, curve=None):
    """Decide resolution-N strong compatibility; Feasible carries the generator law."""
    curve = _curve_or_calibrate(snapshot, curve)
    problem = StrongFeasibilityProblem.from_snapshot(snapshot, curve, N)
    res = _feasibility_solve(problem)
    if res.status is SolveStatus.INFEASIBLE:
        return StrongResult(SolveStatus.INFEASIBLE, None, res.message)
    if res.status is not SolveStatus.FEASIBLE:
        return StrongResult(SolveStatus.NUMERICAL_FAILURE, None, res.message)
    try:
        solution = StrongSolution(
            repair_structure(res.x.reshape(problem.m, N + 1)), N)
    except InvalidSolution as exc:  # pragma: no cover - solver contract violation
        return StrongResult(SolveStatus.NUMERICAL_FAILURE, None, str(exc))
    dpm = qij_from_p(solution, problem.h)
    worst = max(abs(expected_npv(dpm, c)) for c in coefficients_for(snapshot))
    if worst > opt_backend.FEASIBILITY_TOL:
        return StrongResult(SolveStatus.NUMERICAL_FAILURE, None,
                            f"solution misprices a tranche by {worst:.3e}")
    return StrongResult(SolveStatus.FEASIBLE, solution,
                        f"{res.message}; worst repricing error {worst:.3e}")


def verify_strong_bid_ask(snapshot, N, curve=None):
    """Strong compatibility against two-sided quotes at resolution N."""
    curve = _curve_or_calibrate(snapshot, curve)
    problem = StrongFeasibilityProblem.from_snapshot(snapshot, curve, N, bid_ask=True)
    res = _feasibility_solve(problem)
    if res.status is SolveStatus.INFEASIBLE:
        return StrongResult(SolveStatus.INFEASIBLE, None, res.message)
    if res.status is not SolveStatus.FEASIBLE:
        return StrongResult(SolveStatus.NUMERICAL_FAILURE, None, res.message)
    solution = StrongSolution(
        repair_structure(res.x.reshape(problem.m, N + 1)), N)
    dpm = qij_from_p(solution, problem.h)
    worst = 0.0
    for l, tr in enumerate(snapshot.tranches):
        cb = TrancheCoefficients.build(tr, snapshot.bid.upfront[l],
                                       snapshot.bid.spread[l], snapshot)
        ca = TrancheCoefficients.build(tr, snapshot.ask.upfront[l],
                                       snapshot.ask.spread[l], snapshot)
        worst = max(worst, -expected_npv(dpm, cb), expected_npv(dpm, ca))
    if worst > opt_backend.FEASIBILITY_TOL:
        return StrongResult(SolveStatus.NUMERICAL_FAILURE, None,
                            f"solution violates a quote band by {worst:.3e}")
    return StrongResult(SolveStatus.FEASIBLE, solution,
                        f"{res.message}; worst band violation {worst:.3e}")


def _target_objective(snapshot, tranche, h, fixed_running):
    """Objective pieces for bounding a tranche quote over generator laws."""
    sched, disc = snapshot.schedule, snapshot.discount
    beta = beta_coeffs(tranche, snapshot.portfolio)
    hbeta = h.h.T @ beta
    acc_disc = disc(np.asarray(sched.payment_dates)) * sched.accruals
    annuity = float(acc_disc.sum())
    if tranche.quote_kind == "upfront":
        lam = lambda_coeffs(fixed_running, sched, disc)
        c = np.outer(lam, hbeta).ravel()
        gamma0 = gamma_coeff(tranche, 0.0, fixed_running, sched, disc)
        return ("lp", c, gamma0)
    lc = _loss_timing_coeffs(sched, disc)
    c_num = np.outer(lc, hbeta).ravel()
    c_den = -np.outer(acc_disc, hbeta).ravel()
    d_den = tranche.width * annuity
    return ("lfp", c_num, c_den, d_den)


def _bounds_over(problem, objective, width):
    out = []
    for sense in ("min", "max"):
        if objective[0] == "lp":
            _, c, gamma0 = objective
            res = opt_backend.solve_lp(LinearProgram(
                c=c, A_ub=problem.A_ub, b_ub=problem.b_ub,
                A_eq=problem.A_eq, b_eq=problem.b_eq, bounds=(0, None), sense=sense))
            _raise_unless_optimal(res)
            out.append((res.objective - gamma0) / width)
        else:
            _, c_num, c_den, d_den = objective
            try:
                res = opt_backend.solve_lfp(
                    c_num, 0.0, c_den, d_den,
                    A_ub=problem.A_ub, b_ub=problem.b_ub,
                    A_eq=problem.A_eq, b_eq=problem.b_eq, sense=sense)
            except DegenerateDenominator as exc:
                raise UnboundedRatio(str(exc)) from exc
            _raise_unless_optimal(res)
            out.append(res.objective)
    return tuple(out)


def _raise_unless_optimal(res):
    if res.status is SolveStatus.INFEASIBLE:
        raise InfeasibleRegion("the constrained generator polytope is empty")
    if res.status is not SolveStatus.OPTIMAL:
        raise SolverError(f"bound solve failed: {res.status.value}: {res.message}")


def range_at_N(snapshot, fixed, target, N, curve=None):
    """Quote range of one tranche over generator laws that price a fixed set.

    ``fixed`` lists quoted-tranche indices pinned at their market prices;
    ``target`` is the tranche whose implied quote is bounded. Returns
    (lower, upper) in the target's decimal quote units.
    """
    curve = _curve_or_calibrate(snapshot, curve)
    fixed = [l for l in fixed if l != target]
    problem = StrongFeasibilityProblem.from_snapshot(snapshot, curve, N, priced=fixed)
    tranche = snapshot.tranches[target]
    objective = _target_objective(snapshot, tranche, problem.h,
                                  tranche.running_spread)
    return _bounds_over(problem, objective, tranche.width)


@dataclass
class RangeRecord:
    tranche: int
    N: int
    lower: float
    upper: float


@dataclass
class IterativeResult:
    """Outcome of the resolution-sequence verification walk."""

    compatible: bool
    solution: StrongSolution | None
    final_N: int | None
    failing_tranche: int | None
    history: list = field(default_factory=list)


def iterative_verify(snapshot, N_sequence=DEFAULT_N_SEQUENCE,
                     eps_spread=DEFAULT_EPS_SPREAD,
                     eps_upfront=DEFAULT_EPS_UPFRONT, curve=None):
    """Walk tranches in seniority order, growing N until each quote is in range.

    For tranche l the range is computed over generator laws pricing tranches
    0..l-1 exactly. A quote inside its range advances to the next tranche; a
    quote still outside once both endpoints have stabilized (successive
    changes below eps) proves incompatibility and reports the tranche. When
    every tranche has been accepted, the full system is solved at the largest
    resolution any tranche needed (escalating through the remaining sequence
    if that single solve fails).

    Raises IterationLimit when the sequence ends before a decision.
    """
    if len(N_sequence) == 0 or any(b <= a for a, b in zip(N_sequence, N_sequence[1:])):
        raise ValueError("N_sequence must be non-empty and strictly increasing")
    if eps_spread <= 0 or eps_upfront <= 0:
        raise ValueError("stabilization tolerances must be positive")
    curve = _curve_or_calibrate(snapshot, curve)
    history = []
    n_used = []
    for l, tranche in enumerate(snapshot.tranches):
        if tranche.quote_kind == "upfront":
            quote, eps = snapshot.quotes.upfront[l], eps_upfront
        else:
            quote, eps = snapshot.quotes.spread[l], eps_spread
        prev = None
        accepted_at = None
        for N in N_sequence:
            lo, hi = range_at_N(snapshot, range(l), l, N, curve=curve)
            history.append(RangeRecord(l, N, lo, hi))
            if lo - 1e-12 <= quote <= hi + 1e-12:
                accepted_at = N
                break
            if prev is not None and abs(lo - prev[0]) < eps and abs(hi - prev[1]) < eps:
                return IterativeResult(False, None, N, l, history)
            prev = (lo, hi)
        if accepted_at is None:
            raise IterationLimit(
                f"resolution sequence exhausted on tranche {l} without stabilization")
        n_used.append(accepted_at)

    for N in [max(n_used)] + [N for N in N_sequence if N > max(n_used)]:
        res = verify_strong_at_N(snapshot, N, curve=curve)
        if res.feasible:
            return IterativeResult(True, res.solution, N, None, history)
    raise IterationLimit("per-tranche ranges accepted every quote but no joint "
                         "solve in the sequence was feasible")


def nonstandard_names_bounds(snapshot, N, n_names, attach, detach, quote_kind,
                             fixed_running=0.0, curve=None):
    """Quote bounds for a tranche on a pool of ``n_names`` names.

    The feasible region is the full resolution-N system for the quoted
    snapshot (all standard tranches priced at the standard pool size); the
    target tranche's payoff is rebuilt at the nonstandard pool size through
    its own loss vector and h coefficients, then bounded over that region.
    """
    curve = _curve_or_calibrate(snapshot, curve)
    problem = StrongFeasibilityProblem.from_snapshot(snapshot, curve, N)
    pool = PortfolioSpec(int(n_names), snapshot.portfolio.recovery)
    target = TrancheSpec(attach, detach, "upfront", fixed_running) \
        if quote_kind == "upfront" else TrancheSpec(attach, detach, "spread")
    h_t = h_matrix(pool.n, N)
    sched, disc = snapshot.schedule, snapshot.discount
    beta = beta_coeffs(target, pool)
    hbeta = h_t.h.T @ beta
    acc_disc = disc(np.asarray(sched.payment_dates)) * sched.accruals
    annuity = float(acc_disc.sum())
    if quote_kind == "upfront":
        lam = lambda_coeffs(fixed_running, sched, disc)
        objective = ("lp", np.outer(lam, hbeta).ravel(),
                     gamma_coeff(target, 0.0, fixed_running, sched, disc))
    elif quote_kind == "spread":
        lc = _loss_timing_coeffs(sched, disc)
        objective = ("lfp", np.outer(lc, hbeta).ravel(),
                     -np.outer(acc_disc, hbeta).ravel(), target.width * annuity)
    else:
        raise ValueError("quote_kind must be 'upfront' or 'spread'")
    return _bounds_over(problem, objective, target.width)


# Generator paths and the gamma distortion.

@dataclass(frozen=True)
class GeneratorPath:
    """One realized path of phi on the augmented grid F(T_0) .. F(T_{m+1}).

    ``values[i]`` is phi(F(T_i)) for i = 0..m+1; the driving uniform is kept
    for reproducibility. Between grid points the generator interpolates
    linearly, which ``value_at`` exposes; simulation itself only reads the
    grid values.
    """

    values: np.ndarray
    u: float

    def __post_init__(self):
        v = np.asarray(self.values)
        if np.any(np.diff(v) < 0):
            raise InvalidSolution("generator paths are non-decreasing")
        object.__setattr__(self, "values", v)

    def value_at(self, u_query, marginal_grid):
        """Linear interpolation of phi between the grid marginals."""
        return np.interp(u_query, np.asarray(marginal_grid, float),
                         self.values.astype(float))


class GeneratorSampler:
    """Samples generator paths from a StrongSolution via one uniform per path.

    The common uniform is compared against each row's tail sums, which makes
    every path non-decreasing and gives phi(F(T_i)) the law p_i row by row,
    with the exact boundary values phi(F(T_0)) = 0 and phi(F(T_{m+1})) = N.
    """

    def __init__(self, solution):
        if not isinstance(solution, StrongSolution):
            raise InvalidSolution("need a StrongSolution")
        self.N = solution.N
        p = solution.p
        boundary_top = np.zeros((1, self.N + 1))
        boundary_top[0, 0] = 1.0
        boundary_bot = np.zeros((1, self.N + 1))
        boundary_bot[0, self.N] = 1.0
        aug = np.vstack([boundary_top, p, boundary_bot])
        # increasing-by-construction reversed tail sums, one row per grid date
        rev = np.maximum.accumulate(aug[:, ::-1].cumsum(axis=1), axis=1)
        self._rev_tails = np.ascontiguousarray(rev)
        self.m = solution.m

    def sample_matrix(self, u):
        """phi values for an array of uniforms, shape (len(u), m+2)."""
        u = np.atleast_1d(np.asarray(u, float))
        if np.any((u <= 0.0) | (u >= 1.0)):
            raise InvalidSolution("uniform draws must lie strictly inside (0, 1)")
        out = np.empty((len(u), self.m + 2), dtype=np.int64)
        for i in range(self.m + 2):
            out[:, i] = self.N - np.searchsorted(self._rev_tails[i, :-1], u,
                                                 side="right")
        return out

    def sample(self, u):
        values = self.sample_matrix(np.asarray([u]))[0]
        return GeneratorPath(values, float(u))


def build_generator_sampler(solution):
    """Sampler over generator paths whose grid law matches the solution rows."""
    return GeneratorSampler(solution)


def distortion_value(k, xi_path, eta_path, N):
    """X = xi_k / (xi_k + eta_{N-k}) with the exact endpoint conventions.

    ``xi_path`` and ``eta_path`` are cumulative unit-gamma processes on the
    integer grid 0..N with value 0 at index 0, so k = 0 gives X = 0 and
    k = N gives X = 1 without special-casing randomness.
    """
    if not 0 <= k <= N:
        raise ValueError("generator state outside 0..N")
    xi = np.asarray(xi_path, float)
    eta = np.asarray(eta_path, float)
    if len(xi) != N + 1 or len(eta) != N + 1 or xi[0] != 0.0 or eta[0] != 0.0:
        raise ValueError("gamma paths must be cumulative on 0..N starting at 0")
    num = xi[k]
    den = xi[k] + eta[N - k]
    if den == 0.0:
        return 0.0 if k == 0 else 1.0
    return float(num / den)


@dataclass
class GammaDistortion:
    """Generator sampler plus the two independent unit gamma processes.

    ``sample`` draws ``size`` joint realizations: generator paths on the
    augmented grid and the distortion values X(F(T_i)) along each path.
    X(F(T_0)) = 0 and X(F(T_{m+1})) = 1 hold exactly, and each path is
    non-decreasing.
    """

    sampler: GeneratorSampler

    @property
    def N(self):
        return self.sampler.N

    @classmethod
    def from_solution(cls, solution):
        return cls(build_generator_sampler(solution))

    def sample(self, rng, size):
        N = self.N
        u = rng.uniform(size=size)
        phi = self.sampler.sample_matrix(u)
        zero = np.zeros((size, 1))
        xi = np.hstack([zero, rng.standard_exponential((size, N)).cumsum(axis=1)])
        eta = np.hstack([zero, rng.standard_exponential((size, N)).cumsum(axis=1)])
        rows = np.arange(size)[:, None]
        num = xi[rows, phi]
        den = num + eta[rows, N - phi]
        x = np.where(phi == 0, 0.0, np.where(phi == N, 1.0, num / np.where(den == 0.0, 1.0, den)))
        return phi, x


# StrongSolution serialization: CSV with a metadata header.

def strong_to_csv(solution, sched, path, as_of=""):
    if sched.m != solution.m:
        raise ValueError("schedule and solution disagree on the period count")
    with open(path, "w", newline="") as fh:
        fh.write(f"# N={solution.N}\n")
        fh.write(f"# as_of={as_of}\n")
        fh.write("time," + ",".join(f"k={k}" for k in range(solution.N + 1)) + "\n")
        for i, t in enumerate(sched.payment_dates):
            fh.write(f"{t:.6g}," + ",".join(f"{x:.17g}" for x in solution.p[i]) + "\n")


def strong_from_csv(path):
    """Read a solution written by strong_to_csv; returns (times, StrongSolution, as_of)."""
    meta = {}
    times, rows = [], []
    with open(path, newline="") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                meta[key.strip()] = val.strip()
                continue
            if line.startswith("time,"):
                continue
            parts = line.split(",")
            times.append(float(parts[0]))
            rows.append([float(x) for x in parts[1:]])
    if "N" not in meta:
        raise ValueError("missing N metadata header")
    return (np.asarray(times),
            StrongSolution(np.asarray(rows), int(meta["N"])),
            meta.get("as_of", ""))
