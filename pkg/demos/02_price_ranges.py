"""Implied quote ranges: leave-one-out across resolutions, plus an unquoted
tranche and a nonstandard pool size."""

from pathlib import Path

from cdo_compat import (load_snapshot, nonstandard_names_bounds,
                        nonstandard_tranche_bounds, range_at_N)

snapshot = load_snapshot(Path(__file__).with_name("snapshot.json"))


def show(label, kind, lo, hi):
    if kind == "upfront":
        print(f"  {label}: [{lo * 100:.3f}%, {hi * 100:.3f}%]")
    else:
        print(f"  {label}: [{lo * 1e4:.2f}, {hi * 1e4:.2f}] bps")


for N in (50, 100, 200):
    print(f"ranges implied by the other three quotes, N={N}:")
    for l, tranche in enumerate(snapshot.tranches):
        fixed = [k for k in range(snapshot.n_tranches) if k != l]
        lo, hi = range_at_N(snapshot, fixed, l, N)
        show(tranche.label, tranche.quote_kind, lo, hi)

print("\nunquoted [4%, 8%] tranche, running 100 bps, over the weak polytope:")
lo, hi = nonstandard_tranche_bounds(snapshot, 0.04, 0.08, "upfront",
                                    fixed_running=0.01)
show("[0.04,0.08]", "upfront", lo, hi)

print("\nmezzanine spread bounds by pool size at N=100:")
for names in (50, 100, 125, 150, 200):
    lo, hi = nonstandard_names_bounds(snapshot, 100, names, 0.06, 0.12,
                                      "spread")
    show(f"{names} names", "spread", lo, hi)
