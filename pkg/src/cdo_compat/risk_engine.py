"""Hedging and Monte Carlo on top of calibrated default-probability models.

Spread deltas come from a minimum relative entropy update: bump the index
spread, recalibrate the marginal curve, and move the prior default
distribution the least (in Kullback-Leibler divergence) that the bumped
marginals and the structural constraints allow. Tranche value changes
against the posterior, scaled by the CDS value change, give hedge ratios.

Simulation draws portfolio paths from a strong solution via its generator
law and the two-gamma distortion, prices every tranche on each path, and
streams online summaries so path counts in the millions stay cheap.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from . import opt_backend
from .dpm_core import DPM, repair_structure
from .market_model import calibrate_hazard, cds_value_change
from .opt_backend import SolveStatus, SolverError
from .strong_compat import GammaDistortion, h_matrix, qij_from_p
from .tranche_valuation import (DimensionMismatch, coefficients_for,
                                expected_npv)
from .weak_compat import (_curve_or_calibrate, marginal_blocks,
                          monotonicity_block)

PRICE_CHECK_TOL = 1e-6
QUANTILE_LEVELS = (1, 5, 50, 95, 99)
RETAIN_CAP = 1 << 20


class InfeasibleConstraints(RuntimeError):
    """No distribution satisfies the bumped marginals and the structure."""


def _row_tilt_duals(ref_rows, target_means):
    """Per-row exponential-tilt duals used to warm start the entropy solve.

    Row by row, solve for the tilt nu with sum_j j r_j e^{-nu j} matching the
    target mean, entirely in log space. The matched duals reproduce the
    tilted rows exactly when the monotonicity constraints are slack, which on
    small bumps they almost always are.
    """
    m, width = ref_rows.shape
    j = np.arange(width, dtype=float)
    logref = np.log(ref_rows)
    nu_row = np.empty(m)
    nu_mean = np.empty(m)
    for i in range(m):
        target = target_means[i]

        def mean_gap(nu, row=logref[i]):
            w = row - nu * j
            return math.exp(logsumexp(w, b=j) - logsumexp(w)) - target

        lo, hi = -1.0, 1.0
        for _ in range(80):
            if mean_gap(lo) > 0:
                break
            lo *= 2.0
        for _ in range(80):
            if mean_gap(hi) < 0:
                break
            hi *= 2.0
        nu = brentq(mean_gap, lo, hi, xtol=1e-13)
        nu_mean[i] = nu
        nu_row[i] = logsumexp(logref[i] - nu * j) - 1.0
    return nu_row, nu_mean


def posterior_dpm(prior, shifted_curve, sched, eps_reg=1e-20):
    """Minimum relative entropy update of a prior DPM to bumped marginals.

    Constraints: unit rows, per-date means n F~(T_i) from the shifted curve,
    and non-decreasing tail sums. The reference measure is the prior with an
    eps_reg floor so zero prior cells stay essentially forbidden rather than
    undefined.
    """
    m, n = prior.m, prior.n
    means = prior.n * shifted_curve.grid(sched)
    A_eq, b_eq = marginal_blocks(m, n, means)
    A_ub, b_ub = monotonicity_block(m, n)
    ref = prior.q + eps_reg
    nu_row, nu_mean = _row_tilt_duals(ref, means)
    warm = np.concatenate([nu_row, nu_mean, np.zeros(A_ub.shape[0])])
    res = opt_backend.solve_relative_entropy(
        ref.ravel(), A_eq, b_eq, A_ub=A_ub, b_ub=b_ub, warm_start=warm)
    if res.status is SolveStatus.INFEASIBLE:
        raise InfeasibleConstraints(res.message)
    if res.status is not SolveStatus.OPTIMAL:
        raise SolverError(f"entropy solve failed: {res.message}")
    return DPM(repair_structure(res.x.reshape(m, n + 1)))


@dataclass
class HedgeReport:
    """Index-hedge ratios for every tranche at one spread bump size."""

    shift_bps: float
    dv_cds: float
    attach: tuple
    detach: tuple
    dv: tuple
    delta: tuple
    posterior: DPM

    def as_dict(self):
        return {
            "shift_bps": self.shift_bps,
            "dv_cds": self.dv_cds,
            "tranches": [
                {"attach": a, "detach": d, "dv": v, "delta": h}
                for a, d, v, h in zip(self.attach, self.detach, self.dv, self.delta)
            ],
        }

    def to_json(self, path=None):
        text = json.dumps(self.as_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def spread_delta(snapshot, prior, shift_bps=1.0, eps_reg=1e-20, curve=None):
    """Hedge ratios of all quoted tranches against the index at one bump.

    The prior must reprice the quotes (checked against PRICE_CHECK_TOL); the
    posterior is its entropy projection onto marginals recalibrated at the
    bumped index spread. delta_l = dv_l / dv_cds where dv_cds is the value
    change of a unit-notional index swap under the same bump.
    """
    curve = _curve_or_calibrate(snapshot, curve)
    coeffs = coefficients_for(snapshot)
    worst = max(abs(expected_npv(prior, c)) for c in coeffs)
    if worst > PRICE_CHECK_TOL:
        raise ValueError(
            f"prior misprices a quoted tranche by {worst:.3e}; hedge ratios "
            "against it would mix calibration error into the bump response")
    ds = shift_bps * 1e-4
    shifted_curve = calibrate_hazard(
        snapshot.index_spread + ds, snapshot.schedule, snapshot.discount,
        snapshot.portfolio.recovery)
    posterior = posterior_dpm(prior, shifted_curve, snapshot.schedule, eps_reg)
    dv = tuple(expected_npv(posterior, c) - expected_npv(prior, c) for c in coeffs)
    dv_cds = cds_value_change(curve, shifted_curve, snapshot.schedule,
                              snapshot.discount, ds)
    return HedgeReport(
        shift_bps=shift_bps,
        dv_cds=dv_cds,
        attach=tuple(t.attach for t in snapshot.tranches),
        detach=tuple(t.detach for t in snapshot.tranches),
        dv=dv,
        delta=tuple(v / dv_cds for v in dv),
        posterior=posterior,
    )


@dataclass
class SimulationSummary:
    """Online summaries of simulated tranche and portfolio NPVs.

    Columns are the quoted tranches in order followed by the portfolio.
    ``expected`` holds model values under the generator's default law, and
    ``t_stat`` the studentized gap between the sample mean and that value.
    ``count_hist[i - 1, j]`` counts paths with j defaults by payment date i.
    """

    n_paths: int
    seed: int
    labels: tuple
    expected: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    stderr: np.ndarray
    t_stat: np.ndarray
    quantiles: dict
    count_hist: np.ndarray

    def as_dict(self):
        return {
            "n_paths": self.n_paths,
            "seed": self.seed,
            "labels": list(self.labels),
            "expected": self.expected.tolist(),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "stderr": self.stderr.tolist(),
            "t_stat": self.t_stat.tolist(),
            "quantiles": {str(k): v.tolist() for k, v in self.quantiles.items()},
        }


def simulate_npv(solution, snapshot, n_paths, seed, positions=None,
                 csv_path=None, chunk=65536, curve=None):
    """Simulate default paths from a strong solution and price the book.

    Per path: one uniform drives the generator, two unit-gamma processes
    build the distortion, and each name defaults by date i when its own
    uniform falls below the distorted marginal. Draw order within a chunk is
    fixed (path uniforms, xi and eta increments, name uniforms) so a seed
    pins the full stream. ``positions`` weights the tranches in the
    portfolio column and defaults to unit notional in each.
    """
    if n_paths < 1:
        raise ValueError("need at least one path")
    coeffs = coefficients_for(snapshot)
    n_tr = len(coeffs)
    if positions is None:
        positions = np.ones(n_tr)
    positions = np.asarray(positions, float)
    if positions.shape != (n_tr,):
        raise DimensionMismatch(f"{positions.shape} positions for {n_tr} tranches")
    n = snapshot.portfolio.n
    m = snapshot.schedule.m
    if solution.m != m:
        raise DimensionMismatch("solution grid does not match the schedule")
    dist = GammaDistortion.from_solution(solution)
    dpm = qij_from_p(solution, h_matrix(n, solution.N))
    beta_mat = np.stack([c.beta for c in coeffs])
    lam_mat = np.stack([c.lam for c in coeffs])
    gamma_vec = np.array([c.gamma for c in coeffs])
    expected_tr = np.array([expected_npv(dpm, c) for c in coeffs])
    expected = np.append(expected_tr, positions @ expected_tr)

    rng = np.random.default_rng(seed)
    n_cols = n_tr + 1
    count = 0
    mean = np.zeros(n_cols)
    m2 = np.zeros(n_cols)
    count_hist = np.zeros((m, n + 1), dtype=np.int64)
    stride = max(1, math.ceil(n_paths / RETAIN_CAP))
    retained = []
    writer = fh = None
    if csv_path is not None:
        fh = open(csv_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["path_id"]
                        + [f"N_T{i}" for i in range(1, m + 1)]
                        + [f"V_tranche_{l}" for l in range(1, n_tr + 1)]
                        + ["V_portfolio"])
    try:
        done = 0
        while done < n_paths:
            b = min(chunk, n_paths - done)
            _, x = dist.sample(rng, b)
            u_names = rng.uniform(size=(b, n))
            counts = np.empty((b, m), dtype=np.int64)
            for i in range(m):
                counts[:, i] = np.count_nonzero(
                    u_names <= x[:, i + 1][:, None], axis=1)
                count_hist[i] += np.bincount(counts[:, i], minlength=n + 1)
            values = np.empty((b, n_cols))
            for l in range(n_tr):
                values[:, l] = beta_mat[l][counts] @ lam_mat[l] - gamma_vec[l]
            values[:, -1] = values[:, :-1] @ positions

            batch_mean = values.mean(axis=0)
            batch_m2 = ((values - batch_mean) ** 2).sum(axis=0)
            delta = batch_mean - mean
            total = count + b
            mean += delta * b / total
            m2 += batch_m2 + delta ** 2 * count * b / total
            count = total

            first = (-done) % stride
            retained.append(values[first::stride])
            if writer is not None:
                ids = np.arange(done, done + b)
                for r in range(b):
                    writer.writerow([ids[r], *counts[r].tolist(),
                                     *(f"{v:.10g}" for v in values[r])])
            done += b
    finally:
        if fh is not None:
            fh.close()

    std = np.sqrt(m2 / (count - 1)) if count > 1 else np.zeros(n_cols)
    stderr = std / math.sqrt(count)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_stat = np.where(stderr > 0, (mean - expected) / stderr, 0.0)
    kept = np.vstack(retained)
    quantiles = {
        lvl: np.quantile(kept, lvl / 100.0, axis=0) for lvl in QUANTILE_LEVELS
    }
    labels = tuple(t.label for t in snapshot.tranches) + ("portfolio",)
    return SimulationSummary(
        n_paths=n_paths, seed=seed, labels=labels, expected=expected,
        mean=mean, std=std, stderr=stderr, t_stat=t_stat,
        quantiles=quantiles, count_hist=count_hist)


def read_samples(csv_path):
    """Read back a sample file written by simulate_npv.

    Returns (path_ids, counts, values) with values holding the tranche
    columns and the portfolio column last.
    """
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        m = sum(1 for name in header if name.startswith("N_T"))
        ids, counts, values = [], [], []
        for row in reader:
            ids.append(int(row[0]))
            counts.append([int(v) for v in row[1:1 + m]])
            values.append([float(v) for v in row[1 + m:]])
    return np.asarray(ids), np.asarray(counts), np.asarray(values)
