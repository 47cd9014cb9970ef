"""Weak compatibility: feasibility verdicts, constraint blocks, quote bounds."""

import copy

import numpy as np
import pytest

from cdo_compat.market_model import snapshot_from_dict, snapshot_to_dict
from cdo_compat.opt_backend import SolveStatus
from cdo_compat.tranche_valuation import coefficients_for, expected_npv
from cdo_compat.weak_compat import (InfeasibleRegion, InvalidQuotes,
                                    marginal_blocks, monotonicity_block,
                                    nonstandard_tranche_bounds, verify_weak,
                                    verify_weak_bid_ask)

INDEX_LIMIT_SPREAD_BPS = 57.49461928448669


def _with_quotes(snapshot, edits):
    raw = snapshot_to_dict(snapshot)
    for l, value in edits.items():
        raw["tranches"][l]["quote_value"] = value
    return snapshot_from_dict(raw)


def _torn_snapshot(snapshot):
    """Two copies of the equity tranche quoted at contradictory prices."""
    raw = snapshot_to_dict(snapshot)
    clone = copy.deepcopy(raw["tranches"][0])
    clone["quote_value"] = 50.0
    raw["tranches"].append(clone)
    return snapshot_from_dict(raw)


def _banded(snapshot, bands):
    raw = snapshot_to_dict(snapshot)
    for l, (bid, ask) in bands.items():
        raw["tranches"][l]["bid_value"] = bid
        raw["tranches"][l]["ask_value"] = ask
    return snapshot_from_dict(raw)


def test_market_snapshot_is_weakly_compatible(weak_result):
    assert weak_result.feasible
    assert weak_result.status is SolveStatus.FEASIBLE
    assert weak_result.dpm is not None


def test_certificate_reprices_every_tranche(snapshot, weak_result):
    for coeffs in coefficients_for(snapshot):
        assert abs(expected_npv(weak_result.dpm, coeffs)) < 1e-8


def test_certificate_matches_calibrated_marginals(snapshot, curve, weak_result):
    means = weak_result.dpm.means()
    np.testing.assert_allclose(means, 125 * curve.grid(snapshot.schedule),
                               atol=1e-7)


def test_contradictory_quotes_are_infeasible(snapshot):
    torn = _torn_snapshot(snapshot)
    res = verify_weak(torn)
    assert res.status is SolveStatus.INFEASIBLE
    assert not res.feasible and res.dpm is None


def test_verdicts_are_run_to_run_stable(snapshot):
    a = verify_weak(snapshot)
    b = verify_weak(snapshot)
    assert a.status == b.status
    np.testing.assert_array_equal(a.dpm.q, b.dpm.q)


def test_bid_ask_band_around_quotes_is_feasible(snapshot):
    banded = _banded(snapshot, {0: (28.2, 28.7), 1: (4.3, 4.8),
                                2: (105.0, 108.0), 3: (27.0, 28.0)})
    res = verify_weak_bid_ask(banded)
    assert res.feasible
    coeffs = coefficients_for(banded)
    for l, c in enumerate(coeffs):
        tr = banded.tranches[l]
        from cdo_compat.tranche_valuation import TrancheCoefficients
        cb = TrancheCoefficients.build(tr, banded.bid.upfront[l],
                                       banded.bid.spread[l], banded)
        ca = TrancheCoefficients.build(tr, banded.ask.upfront[l],
                                       banded.ask.spread[l], banded)
        assert expected_npv(res.dpm, cb) >= -1e-8
        assert expected_npv(res.dpm, ca) <= 1e-8


def test_missing_bands_raise(snapshot):
    with pytest.raises(InvalidQuotes):
        verify_weak_bid_ask(snapshot)


def test_crossed_bands_raise(snapshot):
    crossed = _banded(snapshot, {0: (28.7, 28.2), 1: (4.3, 4.8),
                                 2: (105.0, 108.0), 3: (27.0, 28.0)})
    with pytest.raises(InvalidQuotes):
        verify_weak_bid_ask(crossed)


def test_disjoint_duplicate_bands_are_infeasible(snapshot):
    raw = snapshot_to_dict(snapshot)
    for l, (bid, ask) in {0: (10.0, 11.0), 1: (4.3, 4.8),
                          2: (105.0, 108.0), 3: (27.0, 28.0)}.items():
        raw["tranches"][l]["bid_value"] = bid
        raw["tranches"][l]["ask_value"] = ask
    clone = copy.deepcopy(raw["tranches"][0])
    clone["bid_value"], clone["ask_value"] = 40.0, 41.0
    raw["tranches"].append(clone)
    res = verify_weak_bid_ask(snapshot_from_dict(raw))
    assert res.status is SolveStatus.INFEASIBLE


def test_monotonicity_block_signs():
    m, n = 3, 2
    a_ub, b_ub = monotonicity_block(m, n)
    assert a_ub.shape == ((m - 1) * n, m * (n + 1))
    assert np.all(b_ub == 0.0)
    good = np.array([[0.8, 0.1, 0.1],
                     [0.6, 0.2, 0.2],
                     [0.5, 0.2, 0.3]])
    assert np.max(a_ub @ good.ravel()) <= 1e-15
    bad = good[::-1]
    assert np.max(a_ub @ bad.ravel()) > 0.0


def test_marginal_blocks_reproduce_row_sums_and_means():
    m, n = 3, 2
    means = np.array([0.3, 0.4, 0.5])
    a_eq, b_eq = marginal_blocks(m, n, means)
    q = np.array([[0.8, 0.1, 0.1],
                  [0.6, 0.2, 0.2],
                  [0.5, 0.2, 0.3]])
    got = a_eq @ q.ravel()
    np.testing.assert_allclose(got[:m], 1.0)
    np.testing.assert_allclose(got[m:], q @ np.arange(n + 1))
    np.testing.assert_allclose(b_eq, np.concatenate([np.ones(m), means]))


def test_index_tranche_bounds_pin_the_portfolio_spread(snapshot):
    lo, hi = nonstandard_tranche_bounds(snapshot, 0.0, 1.0, "spread")
    assert lo * 1e4 == pytest.approx(INDEX_LIMIT_SPREAD_BPS, abs=1e-6)
    assert hi * 1e4 == pytest.approx(INDEX_LIMIT_SPREAD_BPS, abs=1e-6)


def test_quoted_tranche_bounds_pin_to_the_quote(snapshot):
    # the tranche's own pricing equality is part of the polytope, so the
    # interval collapses onto the quoted spread up to solver precision
    lo, hi = nonstandard_tranche_bounds(snapshot, 0.06, 0.12, "spread")
    assert lo == pytest.approx(106.32e-4, abs=1e-10)
    assert hi == pytest.approx(106.32e-4, abs=1e-10)
    # an unquoted mezzanine slice gets a proper interval
    lo2, hi2 = nonstandard_tranche_bounds(snapshot, 0.04, 0.08, "upfront",
                                          fixed_running=0.01)
    assert lo2 < hi2


def test_bounds_on_infeasible_quotes_raise(snapshot):
    torn = _torn_snapshot(snapshot)
    with pytest.raises(InfeasibleRegion):
        nonstandard_tranche_bounds(torn, 0.0, 0.05, "spread")


def test_bounds_reject_bad_inputs(snapshot):
    with pytest.raises(ValueError):
        nonstandard_tranche_bounds(snapshot, 0.05, 0.03, "spread")
    with pytest.raises(ValueError):
        nonstandard_tranche_bounds(snapshot, 0.0, 0.05, "price")
