"""Tune a return-map family to a conservative flow and check the elliptic point.

Run: python3 demos/conservative_normal_form.py   (about 10 s)
"""

from __future__ import annotations

from renormkit.normalform import conservative_tune, elliptic_check


def main() -> None:
    tuned = conservative_tune(2, kappa=0.5)
    print(f"tuned parameters {tuned.ehat}, sign s = {tuned.s}, Newton steps {tuned.iterations}")
    print(f"Psi coefficients {tuned.Psi}, residual {tuned.max_residual():.1e}")
    rep = elliptic_check(tuned.Psi, iterations=10_000)
    print(f"energy drift per step {rep.step_drift:.1e}, over 1e4 steps {rep.total_drift:.1e}")
    print(f"multipliers {[f'{z:.6f}' for z in rep.multipliers]}, |mult| - 1 = {rep.multiplier_defect:.1e}")


if __name__ == "__main__":
    main()
