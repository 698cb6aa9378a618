"""First-return map near a heteroclinic cycle, its fixed point and the rescaled limit.

Run: python3 demos/heteroclinic_return.py
"""

from __future__ import annotations

from renormkit.hetreturn import (
    brute_force_fixed_point,
    convergence_sweep,
    find_fixed_point,
    first_return,
    shipped_saddles,
    shipped_transitions,
    size_ordering_report,
)


def main() -> None:
    saddles = shipped_saddles()
    print(f"J1 = {saddles.J1}, J2 = {saddles.J2}, theta = {saddles.theta():.3f}")
    rep = size_ordering_report(saddles, 8)
    print(f"k1 = {rep['k1']}, k2 = {rep['k2']}; size ratios below one: {rep['ordering']}")

    ret = first_return(saddles, shipped_transitions(1), 8)
    (p, q), iters = find_fixed_point(ret, seed=(0.2, 0.0))
    (pb, qb), res = brute_force_fixed_point(ret, box=0.25, centre=(0.25, 0.0), n=11, levels=40)
    print(f"fixed point by Newton ({iters} steps): ({p:.10f}, {q:.6e})")
    print(f"fixed point by grid search:           ({pb:.10f}, {qb:.6e}), residual {res:.1e}")

    for m in (1, 2):
        for row in convergence_sweep(m=m):
            print(f"m = {m}, k2 = {row.k2:2d}: distance to limit map {row.distance:.3e}")


if __name__ == "__main__":
    main()
