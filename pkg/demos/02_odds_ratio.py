"""Laplace odds ratio against brute-force quadrature for three cluster pairs."""

from __future__ import annotations

import math

import numpy as np

from linemaps.extraction import evidence_ratio_oracle, odds_ratio
from linemaps.geometry import LineParams, fit_line, point_at

SIGMA = 0.01


def cluster(line: LineParams, t0: float, t1: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    pts = np.array([point_at(line, t) for t in np.linspace(t0, t1, 15)])
    return pts + line.normal * rng.normal(0, SIGMA, len(pts))[:, None]


def main() -> None:
    wall = LineParams(4.0, 0.3)
    cases = {
        "same wall": LineParams(4.0, 0.3),
        "slightly tilted": LineParams(4.0, 0.3 + 0.01),
        "perpendicular": LineParams(4.0, 0.3 + math.pi / 2),
    }
    for name, other in cases.items():
        a, b = cluster(wall, -2.0, -0.2, 1), cluster(other, 0.2, 2.0, 2)
        lr = odds_ratio(fit_line(a, SIGMA), fit_line(b, SIGMA), fit_line(np.vstack((a, b)), SIGMA), 30.0)
        oracle = evidence_ratio_oracle(a, b, SIGMA, 30.0)
        verdict = "merge" if lr > 0 else "keep apart"
        print(f"{name:16s} log R {lr:12.3f}  quadrature {oracle:12.3f}  -> {verdict}")


if __name__ == "__main__":
    main()
