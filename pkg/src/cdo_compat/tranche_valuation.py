"""Affine tranche valuation in terms of the default-count distribution.

A tranche's fair value is linear in the default-count probabilities: with
beta_j the tranche loss at j defaults, lambda_i the discount-weighted time
coefficients, and gamma the quote-side constant, the expected NPV of the
protection seller's position is lambda' Q beta - gamma, and the realized
NPV on one default-count path plugs the path's losses into the same form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DimensionMismatch(ValueError):
    """Coefficient and matrix dimensions disagree."""


class NonMonotonePath(ValueError):
    """Default counts must be non-decreasing integers within [0, n]."""


def beta_coeffs(tranche, portfolio):
    """Tranche loss at each default count: (j(1-R)/n - a)^+ - (j(1-R)/n - b)^+."""
    loss = (1.0 - portfolio.recovery) * np.arange(portfolio.n + 1) / portfolio.n
    return (np.clip(loss - tranche.attach, 0.0, None)
            - np.clip(loss - tranche.detach, 0.0, None))


def lambda_coeffs(tranche_spread, sched, disc):
    """Time coefficients lambda_i = s D(T_i) dT_i + D(mid_i) - D(mid_{i+1}) 1_{i<m}.

    The midpoint-difference part carries the default leg under the
    midpoint loss-timing assumption; the final period keeps its full
    D(mid_m) term, which is the terminal default-leg discount.
    """
    if tranche_spread < 0.0:
        raise ValueError("spread must be non-negative")
    m = sched.m
    d_pay = disc(np.asarray(sched.payment_dates))
    d_mid = disc(sched.midpoints)
    lam = tranche_spread * d_pay * sched.accruals
    lam += d_mid[:m]
    lam[: m - 1] -= d_mid[1:m]
    return lam


def gamma_coeff(tranche, upfront, spread, sched, disc):
    """Quote-side constant: (b-a) uf + (b-a) s sum_i D(T_i) dT_i."""
    annuity = float(np.sum(disc(np.asarray(sched.payment_dates)) * sched.accruals))
    return tranche.width * (upfront + spread * annuity)


@dataclass(frozen=True)
class TrancheCoefficients:
    """The (lambda, beta, gamma) triple for one quoted tranche."""

    lam: np.ndarray
    beta: np.ndarray
    gamma: float

    @classmethod
    def build(cls, tranche, upfront, spread, snapshot):
        return cls(
            lam=lambda_coeffs(spread, snapshot.schedule, snapshot.discount),
            beta=beta_coeffs(tranche, snapshot.portfolio),
            gamma=gamma_coeff(tranche, upfront, spread, snapshot.schedule,
                              snapshot.discount),
        )

    @classmethod
    def from_snapshot(cls, snapshot, l):
        """Coefficients of quoted tranche l at its market quote."""
        return cls.build(snapshot.tranches[l], snapshot.quotes.upfront[l],
                         snapshot.quotes.spread[l], snapshot)


def coefficients_for(snapshot):
    """TrancheCoefficients for every quoted tranche, in quote order."""
    return [TrancheCoefficients.from_snapshot(snapshot, l)
            for l in range(snapshot.n_tranches)]


def expected_npv(dpm, coeffs):
    """lambda' Q beta - gamma for a default-probability matrix Q.

    Accepts a DPM object or a bare m x (n+1) array.
    """
    q = np.asarray(getattr(dpm, "q", dpm), float)
    if q.ndim != 2 or q.shape[0] != len(coeffs.lam) or q.shape[1] != len(coeffs.beta):
        raise DimensionMismatch(
            f"matrix {q.shape} vs lambda {len(coeffs.lam)}, beta {len(coeffs.beta)}")
    return float(coeffs.lam @ q @ coeffs.beta - coeffs.gamma)


def realized_npv(path, coeffs):
    """NPV on one default-count path: sum_i lambda_i beta(N_{T_i}) - gamma."""
    counts = np.asarray(path)
    if counts.ndim != 1 or len(counts) != len(coeffs.lam):
        raise DimensionMismatch(f"path length {counts.shape} vs m = {len(coeffs.lam)}")
    if np.any(counts != np.round(counts)):
        raise NonMonotonePath("default counts must be integers")
    counts = counts.astype(int)
    if np.any(np.diff(counts) < 0) or counts[0] < 0 or counts[-1] >= len(coeffs.beta):
        raise NonMonotonePath("default counts must be non-decreasing within [0, n]")
    return float(coeffs.lam @ coeffs.beta[counts] - coeffs.gamma)
