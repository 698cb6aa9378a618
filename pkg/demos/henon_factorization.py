"""Approximate a time-1 map by Hénon-like factors, then factor a polynomial diffeomorphism.

Run: python3 demos/henon_factorization.py   (about 25 s)
"""

from __future__ import annotations

from renormkit.henonfactor import convergence_table, theorem3_pipeline
from renormkit.mapcore import SampleGrid, dumps_manifest
from renormkit.presets import nonlinear_field, rotation_field, theorem3_map


def main() -> None:
    for name, X, res in (("rotation", rotation_field(), 21), ("nonlinear3", nonlinear_field(0), 9)):
        print(f"{name}: N, C0 error, factors, error ratio")
        for row in convergence_table(X, [8, 16, 32], SampleGrid.ball(X.dimension, res)):
            ratio = "" if row.ratio is None else f"{row.ratio:.3f}"
            print(f"  {row.N:3d}  {row.error:.3e}  {row.factors:6d}  {ratio}")

    result = theorem3_pipeline(theorem3_map(), N=32, degree=6)
    print(f"F = {theorem3_map().expressions}: {result.factor_count} Hénon-like factors of degree "
          f"<= {result.max_degree}, C0 error {result.error:.4f}")
    text = dumps_manifest(result.composition)
    print("manifest head:")
    print("\n".join(text.splitlines()[:4]))


if __name__ == "__main__":
    main()
