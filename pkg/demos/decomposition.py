"""Split a cubic diffeomorphism into two volume-preserving maps and two log/exp factors.

Run: python3 demos/decomposition.py
"""

from __future__ import annotations

import numpy as np

from renormkit.lemma1 import lemma1_decompose
from renormkit.mapcore import SampleGrid
from renormkit.presets import decompose_map


def main() -> None:
    F = decompose_map("cubic2")
    dec = lemma1_decompose(F)
    print(f"map: {F.expressions}  K = {dec.K:.4f}")

    grid = SampleGrid.ball(2, 41)
    summary = dec.summarize(grid)
    print(f"composition residual on {summary['points']} points: {summary['decomposition']:.2e}")
    print(f"inner-map Jacobian defect: {summary['det_defect']:.2e}")

    # the time function and the level function have unit Poisson bracket (up to sign)
    pts = dec.psi1(SampleGrid.random(2, 200, np.random.default_rng(0)).points)
    print(f"max |bracket + 1| at 200 points: {np.max(np.abs(dec.phi.bracket(pts) + 1)):.2e}")


if __name__ == "__main__":
    main()
